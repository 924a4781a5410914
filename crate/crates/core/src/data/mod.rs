//! Dataset ingestion, windowing, normalization, splitting and the synthetic
//! ship-motion generator.

mod csv;
mod normalize;
pub mod sea_state;
mod split;
pub mod synth;
mod window;

pub use csv::{load_csv, load_csv_with_classes, save_csv, to_csv_string};
pub use normalize::{normalize_dataset, zscore_normalize, STD_EPS};
pub use sea_state::{Region, SeaStateSpec, SEA_STATE_CLASSES};
pub use split::{split_counts, stratified_split, Splits, DEFAULT_FRACTIONS};
pub use synth::{separable_dataset, synth_generate, window_rms, GeneratorConfig, SHIP_CHANNELS};
pub use window::{sliding_window, LabeledDataset, TimeWindow};
