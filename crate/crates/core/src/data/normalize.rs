use super::window::{LabeledDataset, TimeWindow};
use crate::diffcore::Tensor;

/// Channels with population std below this map to zeros.
pub const STD_EPS: f64 = 1e-8;

/// Per-channel z-score using the population standard deviation.
pub fn zscore_normalize(w: &TimeWindow) -> TimeWindow {
    let (f, t) = (w.channels(), w.len());
    let mut data = Vec::with_capacity(f * t);
    for ch in 0..f {
        let row = w.values.row(ch);
        let mean = row.iter().sum::<f64>() / t as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt();
        if std < STD_EPS {
            data.extend(std::iter::repeat(0.0).take(t));
        } else {
            data.extend(row.iter().map(|v| (v - mean) / std));
        }
    }
    TimeWindow {
        values: Tensor::new(vec![f, t], data).expect("same shape"),
        label: w.label,
    }
}

pub fn normalize_dataset(d: &LabeledDataset) -> LabeledDataset {
    d.map_windows(zscore_normalize)
}
