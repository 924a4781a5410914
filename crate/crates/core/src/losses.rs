//! Classifier head, cross-entropy and the class-weighted contrastive
//! clustering loss.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Reduce, Tensor, Var};
use crate::error::{Error, Result};

/// Allowed deviation of a row norm from 1 in the pair losses.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Temperature `τ` of the pair losses.
    pub temperature: f64,
    /// Weight of cross-entropy.
    pub alpha: f64,
    /// Weight of the contrastive clustering loss.
    pub beta: f64,
    /// Per-class weights for the pair losses. `None` derives them from the
    /// training class counts.
    pub class_weights: Option<Vec<f64>>,
    /// Also apply the class weights to cross-entropy.
    pub weighted_ce: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            alpha: 1.0,
            beta: 1.0,
            class_weights: None,
            weighted_ce: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.temperature > 0.0) {
            bad.push("loss.temperature");
        }
        if !(self.alpha > 0.0) {
            bad.push("loss.alpha");
        }
        if !(self.beta >= 0.0) {
            bad.push("loss.beta");
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes || w.iter().any(|&v| !(v > 0.0)) {
                bad.push("loss.class_weights");
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid values for {} (temperature > 0, alpha > 0, beta >= 0, one positive weight per class)",
                bad.join(", ")
            )))
        }
    }
}

/// `w_i = N / (k · N_i)`.
pub fn compute_class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Validation(format!("class {} has no samples", c + 1)));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&ni| n as f64 / (k * ni as f64)).collect())
}

/// `logits = g_x · V + bias`.
pub fn classify(g: &mut Graph, repr: Var, weight: Var, bias: Var) -> Result<Var> {
    let z = g.matmul(repr, weight)?;
    g.add_row(z, bias)
}

fn check_labels(labels: &[usize], k: usize) -> Result<()> {
    match labels.iter().find(|&&y| y == 0 || y > k) {
        Some(y) => Err(Error::Validation(format!("label {y} outside 1..={k}"))),
        None => Ok(()),
    }
}

/// Mean of `w_{y_i} · (−log p_{y_i})`; pass `None` for unweighted.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize], weights: Option<&[f64]>) -> Result<Var> {
    let (n, k) = g.value(logits).dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    check_labels(labels, k)?;
    let logp = g.log_softmax_rows(logits, None)?;
    let mut coeff = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        coeff[i * k + y - 1] = -weights.map_or(1.0, |w| w[y - 1]) / n as f64;
    }
    let coeff = g.constant(Tensor::new(vec![n, k], coeff)?);
    let picked = g.mul(logp, coeff)?;
    g.sum(picked)
}

fn check_unit_rows(t: &Tensor) -> Result<()> {
    let (_, d) = t.dims2()?;
    for (i, row) in t.data().chunks(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm != 0.0 && (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Validation(format!("feature row {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum PairKind {
    Positive,
    Negative,
}

fn pair_loss(g: &mut Graph, feats: Var, labels: &[usize], w: &[f64], tau: f64, kind: PairKind) -> Result<Var> {
    check_unit_rows(g.value(feats))?;
    let (n, _) = g.value(feats).dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} rows", labels.len())));
    }
    check_labels(labels, w.len())?;
    let pick = |i: usize, j: usize| match kind {
        PairKind::Positive => labels[i] == labels[j],
        PairKind::Negative => labels[i] != labels[j],
    };
    let count = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| i != j && pick(i, j)).count();
    if count == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let ft = g.transpose(feats)?;
    let sim = g.matmul(feats, ft)?;
    let sign = match kind {
        PairKind::Positive => 1.0,
        PairKind::Negative => -1.0,
    };
    let logits = g.scale(sim, sign / tau)?;
    let mask = (0..n * n).map(|ij| ij / n != ij % n).collect();
    let logp = g.log_softmax_rows(logits, Some(mask))?;
    let mut coeff = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && pick(i, j) {
                coeff[i * n + j] = -w[labels[i] - 1] / count as f64;
            }
        }
    }
    let coeff = g.constant(Tensor::new(vec![n, n], coeff)?);
    let terms = g.mul(logp, coeff)?;
    g.sum(terms)
}

/// Attraction between same-class samples. `feats` rows must be unit-norm
/// (or zero); self pairs are excluded and the sum is averaged over the
/// contributing pairs.
pub fn pos_pair_loss(g: &mut Graph, feats: Var, labels: &[usize], w: &[f64], tau: f64) -> Result<Var> {
    pair_loss(g, feats, labels, w, tau, PairKind::Positive)
}

/// Repulsion between different-class samples; same conventions as
/// [`pos_pair_loss`].
pub fn neg_pair_loss(g: &mut Graph, feats: Var, labels: &[usize], w: &[f64], tau: f64) -> Result<Var> {
    pair_loss(g, feats, labels, w, tau, PairKind::Negative)
}

/// `ln k − H(p̄)` where `p̄` is the batch-mean class distribution.
pub fn cluster_loss(g: &mut Graph, probs: Var) -> Result<Var> {
    let (_, k) = g.value(probs).dims2()?;
    let pbar = g.reduce(probs, Reduce::Mean, Some(0))?;
    let logp = g.log(pbar)?;
    let plogp = g.mul(pbar, logp)?;
    let neg_entropy = g.sum(plogp)?;
    let offset = g.constant(Tensor::scalar((k as f64).ln()));
    g.add(neg_entropy, offset)
}

/// Values of the loss terms for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub pos: f64,
    pub neg: f64,
    pub cluster: f64,
}

#[derive(Clone, Debug)]
pub struct CombinedLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

/// `α·CE + β·(L_pos + L_neg + L_cluster)`. `features` is the raw
/// representation; it is l2-normalized here. The contrastive terms are
/// skipped entirely when `β = 0`.
pub fn combined_loss(
    g: &mut Graph,
    logits: Var,
    features: Var,
    labels: &[usize],
    cfg: &LossConfig,
    class_weights: &[f64],
) -> Result<CombinedLoss> {
    let ce_w = cfg.weighted_ce.then_some(class_weights);
    let ce = cross_entropy(g, logits, labels, ce_w)?;
    let mut breakdown = LossBreakdown {
        ce: g.value(ce).data()[0],
        ..LossBreakdown::default()
    };
    let mut total = g.scale(ce, cfg.alpha)?;
    if cfg.beta != 0.0 {
        let xhat = g.l2_normalize_rows(features)?;
        let pos = pos_pair_loss(g, xhat, labels, class_weights, cfg.temperature)?;
        let neg = neg_pair_loss(g, xhat, labels, class_weights, cfg.temperature)?;
        let probs = g.softmax_rows(logits)?;
        let cl = cluster_loss(g, probs)?;
        breakdown.pos = g.value(pos).data()[0];
        breakdown.neg = g.value(neg).data()[0];
        breakdown.cluster = g.value(cl).data()[0];
        let a = g.add(pos, neg)?;
        let ccl = g.add(a, cl)?;
        let ccl = g.scale(ccl, cfg.beta)?;
        total = g.add(total, ccl)?;
    }
    breakdown.total = g.value(total).data()[0];
    Ok(CombinedLoss { total, breakdown })
}
