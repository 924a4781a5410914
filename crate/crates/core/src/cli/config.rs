use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    load_csv_with_classes, normalize_dataset, stratified_split, synth_generate, GeneratorConfig, LabeledDataset,
    Splits, SEA_STATE_CLASSES, SHIP_CHANNELS,
};
use crate::dgl::DglConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::tdf::TdfConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsvSource {
    pub path: PathBuf,
    pub channels: usize,
    pub window_len: usize,
    pub n_classes: usize,
}

impl Default for CsvSource {
    fn default() -> Self {
        Self {
            path: PathBuf::new(),
            channels: SHIP_CHANNELS,
            window_len: 64,
            n_classes: SEA_STATE_CLASSES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub generator: GeneratorConfig,
    pub csv: CsvSource,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    /// Per-window, per-channel z-scoring before training.
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            generator: GeneratorConfig::default(),
            csv: CsvSource::default(),
            split: [0.7, 0.1, 0.2],
            normalize: true,
        }
    }
}

/// Architecture switches; the window shape and class count come from the
/// data section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub use_tdf: bool,
    pub use_dgl: bool,
    pub tdf: TdfConfig,
    pub dgl: DglConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            use_tdf: true,
            use_dgl: true,
            tdf: TdfConfig::default(),
            dgl: DglConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seeds initialization, shuffling and splitting. The generator has its
    /// own seed so the dataset stays fixed when this one changes.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataConfig::default(),
            model: ModelSection::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn unknown_keys(user: &Value, reference: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(u), Value::Object(r)) = (user, reference) {
        for (k, v) in u {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match r.get(k) {
                None => out.push(path),
                Some(rv) => unknown_keys(v, rv, &path, out),
            }
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON, reporting every unknown key at once.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let reference = serde_json::to_value(Self::default())?;
        let mut bad = Vec::new();
        unknown_keys(&user, &reference, "", &mut bad);
        if !bad.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", bad.join(", "))));
        }
        let cfg: Self = serde_json::from_value(user).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn window_shape(&self) -> (usize, usize, usize) {
        match self.data.source {
            DataSource::Synthetic => (SHIP_CHANNELS, self.data.generator.t, SEA_STATE_CLASSES),
            DataSource::Csv => (self.data.csv.channels, self.data.csv.window_len, self.data.csv.n_classes),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let (channels, window_len, n_classes) = self.window_shape();
        ModelConfig {
            channels,
            window_len,
            n_classes,
            use_tdf: self.model.use_tdf,
            use_dgl: self.model.use_dgl,
            tdf: self.model.tdf.clone(),
            dgl: self.model.dgl.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.data.source {
            DataSource::Synthetic => self.data.generator.validate()?,
            DataSource::Csv => {
                if self.data.csv.path.as_os_str().is_empty() {
                    return Err(Error::Config("data.csv.path is required when data.source is \"csv\"".into()));
                }
            }
        }
        let [a, b, c] = self.data.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split {:?} must be fractions summing to 1", self.data.split)));
        }
        let model = self.model_config();
        model.validate()?;
        self.loss.validate(model.n_classes)?;
        self.train.validate()
    }

    /// Loads or generates the dataset, normalizes it if configured, and
    /// splits it with the experiment seed.
    pub fn prepare_data(&self) -> Result<(LabeledDataset, Splits)> {
        let ds = match self.data.source {
            DataSource::Synthetic => synth_generate(&self.data.generator)?,
            DataSource::Csv => {
                let c = &self.data.csv;
                load_csv_with_classes(&c.path, c.channels, c.window_len, c.n_classes)?
            }
        };
        let ds = if self.data.normalize { normalize_dataset(&ds) } else { ds };
        let [a, b, c] = self.data.split;
        let splits = stratified_split(&ds, (a, b, c), self.seed)?;
        if splits.train.is_empty() || splits.val.is_empty() {
            return Err(Error::Validation("training and validation splits must be non-empty".into()));
        }
        Ok((ds, splits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = ExperimentConfig::from_json(r#"{"sede": 1, "model": {"tdf": {"slice": 4}}, "train": {"lr": 0.1}}"#)
            .unwrap_err();
        let msg = err.to_string();
        for key in ["sede", "model.tdf.slice", "train.lr"] {
            assert!(msg.contains(key), "{msg}");
        }
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            r#"{"loss": {"alpha": 0}}"#,
            r#"{"model": {"tdf": {"slices": 128}}}"#,
            r#"{"data": {"split": [0.5, 0.1, 0.1]}}"#,
            r#"{"data": {"source": "csv"}}"#,
            r#"{"train": {"batch_size": 1}}"#,
            r#"{"seed": "x"}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn serialized_form_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.loss.class_weights = Some(vec![1.0; 5]);
        cfg.model.dgl.prune_threshold = Some(0.05);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
