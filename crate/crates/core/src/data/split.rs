use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::window::LabeledDataset;
use crate::error::{Error, Result};

/// Train / validation / test fractions used by default.
pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.70, 0.10, 0.20);

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Per-class `(train, val, test)` counts: val and test take the floor of their
/// share and the remainder goes to train.
pub fn split_counts(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    // the small offset keeps e.g. 60·0.1 from flooring to 5
    let val = (n as f64 * fractions.1 + 1e-9).floor() as usize;
    let test = (n as f64 * fractions.2 + 1e-9).floor() as usize;
    (n - val - test, val, test)
}

/// Seeded per-class proportional split. Each output keeps the original
/// window order.
pub fn stratified_split(d: &LabeledDataset, fractions: (f64, f64, f64), seed: u64) -> Result<Splits> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (&class, idx) in d.class_index() {
        if idx.len() < 3 {
            return Err(Error::Validation(format!(
                "class {class} has {} samples; stratified splitting needs at least 3",
                idx.len()
            )));
        }
        let mut idx = idx.clone();
        idx.shuffle(&mut rng);
        let (_, nv, nt) = split_counts(idx.len(), fractions);
        test.extend_from_slice(&idx[..nt]);
        val.extend_from_slice(&idx[nt..nt + nv]);
        train.extend_from_slice(&idx[nt + nv..]);
    }
    for part in [&mut train, &mut val, &mut test] {
        part.sort_unstable();
    }
    Ok(Splits {
        train: d.subset(&train)?,
        val: d.subset(&val)?,
        test: d.subset(&test)?,
    })
}
