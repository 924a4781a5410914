use std::collections::BTreeMap;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One `F×T` window of a multivariate series with its class label (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWindow {
    pub values: Tensor,
    pub label: usize,
}

impl TimeWindow {
    pub fn new(values: Tensor, label: usize) -> Result<Self> {
        values.dims2()?;
        if !values.is_finite() {
            return Err(Error::Validation("window holds non-finite values".into()));
        }
        Ok(Self { values, label })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Windows plus the per-class index lists.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    windows: Vec<TimeWindow>,
    class_index: BTreeMap<usize, Vec<usize>>,
    n_classes: usize,
}

impl LabeledDataset {
    /// Labels must lie in `1..=n_classes` and every window must share one shape.
    pub fn new(windows: Vec<TimeWindow>, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Validation(format!("need at least 2 classes, got {n_classes}")));
        }
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let shape = windows.first().map(|w| w.values.shape().to_vec());
        for (i, w) in windows.iter().enumerate() {
            if w.label == 0 || w.label > n_classes {
                return Err(Error::Validation(format!(
                    "window {i} has label {} outside 1..={n_classes}",
                    w.label
                )));
            }
            if Some(w.values.shape()) != shape.as_deref() {
                return Err(Error::Validation(format!("window {i} shape differs from window 0")));
            }
            class_index.entry(w.label).or_default().push(i);
        }
        Ok(Self {
            windows,
            class_index,
            n_classes,
        })
    }

    pub fn windows(&self) -> &[TimeWindow] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// `(F, T)` of the windows, or `None` when empty.
    pub fn window_shape(&self) -> Option<(usize, usize)> {
        self.windows.first().map(|w| (w.channels(), w.len()))
    }

    pub fn class_index(&self) -> &BTreeMap<usize, Vec<usize>> {
        &self.class_index
    }

    /// `N_i` for classes `1..=n_classes`, zeros included.
    pub fn class_counts(&self) -> Vec<usize> {
        (1..=self.n_classes)
            .map(|c| self.class_index.get(&c).map_or(0, Vec::len))
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let windows = idx.iter().map(|&i| self.windows[i].clone()).collect();
        Self::new(windows, self.n_classes)
    }

    pub fn map_windows<F: Fn(&TimeWindow) -> TimeWindow>(&self, f: F) -> Self {
        Self {
            windows: self.windows.iter().map(f).collect(),
            class_index: self.class_index.clone(),
            n_classes: self.n_classes,
        }
    }
}

/// Cuts an `F×L` series into windows of length `t` every `stride` steps.
/// Each window takes the majority per-step label, ties going to the lower
/// class id.
pub fn sliding_window(
    series: &Tensor,
    labels: &[usize],
    t: usize,
    stride: usize,
    n_classes: usize,
) -> Result<LabeledDataset> {
    let (f, l) = series.dims2()?;
    if labels.len() != l {
        return Err(Error::Argument(format!("{} labels for a series of length {l}", labels.len())));
    }
    if t == 0 || t > l {
        return Err(Error::Argument(format!("window length {t} exceeds series length {l}")));
    }
    if stride == 0 {
        return Err(Error::Argument("stride must be positive".into()));
    }
    let count = (l - t) / stride + 1;
    let mut windows = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let mut data = Vec::with_capacity(f * t);
        for ch in 0..f {
            data.extend_from_slice(&series.row(ch)[start..start + t]);
        }
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &lab in &labels[start..start + t] {
            *votes.entry(lab).or_default() += 1;
        }
        // BTreeMap iterates in ascending class order, so `>` keeps the lowest on ties.
        let mut best = (0, 0);
        for (&lab, &n) in &votes {
            if n > best.1 {
                best = (lab, n);
            }
        }
        windows.push(TimeWindow::new(Tensor::new(vec![f, t], data)?, best.0)?);
    }
    LabeledDataset::new(windows, n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(l: usize) -> Tensor {
        let data: Vec<f64> = (0..2 * l).map(|v| v as f64).collect();
        Tensor::new(vec![2, l], data).unwrap()
    }

    #[test]
    fn window_count_follows_stride() {
        let d = sliding_window(&series(10), &[1; 10], 4, 2, 5).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.windows()[1].values.row(0), &[2.0, 3.0, 4.0, 5.0]);
        assert_eq!(d.windows()[1].values.row(1), &[12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn stride_equal_to_length_partitions() {
        let d = sliding_window(&series(12), &[2; 12], 4, 4, 5).unwrap();
        assert_eq!(d.len(), 3);
        let firsts: Vec<f64> = d.windows().iter().map(|w| w.values.row(0)[0]).collect();
        assert_eq!(firsts, vec![0.0, 4.0, 8.0]);
        assert!(d.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn majority_label_with_low_tie_break() {
        let labels = [3, 3, 1, 1, 2, 2, 2, 5];
        let d = sliding_window(&series(8), &labels, 4, 4, 5).unwrap();
        assert_eq!(d.labels(), vec![1, 2]);
    }

    #[test]
    fn window_longer_than_series_is_rejected() {
        assert!(matches!(
            sliding_window(&series(3), &[1; 3], 4, 1, 5),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn class_index_partitions_windows() {
        let labels = [1, 1, 1, 2, 2, 2, 2, 2, 2, 1];
        let d = sliding_window(&series(10), &labels, 3, 1, 2).unwrap();
        let total: usize = d.class_counts().iter().sum();
        assert_eq!(total, d.len());
        let mut all: Vec<usize> = d.class_index().values().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..d.len()).collect::<Vec<_>>());
    }
}
