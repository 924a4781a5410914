use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::evaluate;
use crate::data::LabeledDataset;
use crate::dgl::Mode;
use crate::diffcore::Graph;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, compute_class_weights, LossBreakdown, LossConfig};
use crate::model::{forward, stack_windows, Model, ModelConfig};
use crate::params::ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Stop after this many epochs without a better validation macro-F1.
    /// `None` always runs every epoch.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 32,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: Some(30),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.learning_rate > 0.0) {
            bad.push("train.learning_rate");
        }
        if self.batch_size < 2 {
            bad.push("train.batch_size");
        }
        if self.epochs == 0 {
            bad.push("train.epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bad.push("train.beta1/beta2");
        }
        if !(self.eps > 0.0) {
            bad.push("train.eps");
        }
        if self.patience == Some(0) {
            bad.push("train.patience");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid values for {} (learning_rate > 0, batch_size >= 2, epochs >= 1, betas in [0,1), eps > 0, patience >= 1)",
                bad.join(", ")
            )))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Batch-averaged loss components.
    pub train_loss: LossBreakdown,
    pub val_macro_precision: f64,
    pub val_macro_recall: f64,
    pub val_macro_f1: f64,
    pub val_accuracy: f64,
}

#[derive(Debug)]
pub struct FitResult {
    /// Parameters of the best validation epoch (the initial parameters if no
    /// epoch completed).
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based; 0 when no epoch completed.
    pub best_epoch: usize,
    pub steps: usize,
    pub class_weights: Vec<f64>,
    /// Set when a non-finite value stopped training early.
    pub diverged: Option<Error>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::Domain(_))
}

fn train_step(
    cfg: &ModelConfig,
    params: &mut ParamSet,
    state: &mut AdamState,
    batch: &[&crate::data::TimeWindow],
    loss_cfg: &LossConfig,
    weights: &[f64],
    adam: &AdamConfig,
) -> Result<LossBreakdown> {
    let labels: Vec<usize> = batch.iter().map(|w| w.label).collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.constant(stack_windows(batch.iter().copied())?);
    let out = forward(&mut g, cfg, &bound, x, Mode::Train)?;
    let loss = combined_loss(&mut g, out.logits, out.repr, &labels, loss_cfg, weights)?;
    let mut grads = g.backward(loss.total)?;
    let grads = bound.collect_grads(params, &mut grads);
    adam_step(params, &grads, state, adam)?;
    Ok(loss.breakdown)
}

/// Mini-batch training with per-epoch validation. Initialization and the
/// per-epoch shuffles both derive from `seed`.
pub fn fit(
    model_cfg: &ModelConfig,
    loss_cfg: &LossConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    train: &LabeledDataset,
    val: &LabeledDataset,
) -> Result<FitResult> {
    model_cfg.validate()?;
    loss_cfg.validate(model_cfg.n_classes)?;
    train_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation splits must be non-empty".into()));
    }
    let weights = match &loss_cfg.class_weights {
        Some(w) => w.clone(),
        None => compute_class_weights(&train.class_counts())?,
    };
    let adam = train_cfg.adam();
    let mut params = model_cfg.init_params(seed)?;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut best = Model {
        config: model_cfg.clone(),
        params: params.clone(),
    };
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let windows = train.windows();

    for epoch in 1..=train_cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut n_batches = 0;
        for idx in order.chunks(train_cfg.batch_size) {
            let batch: Vec<_> = idx.iter().map(|&i| &windows[i]).collect();
            match train_step(model_cfg, &mut params, &mut state, &batch, loss_cfg, &weights, &adam) {
                Ok(b) => {
                    sum.total += b.total;
                    sum.ce += b.ce;
                    sum.pos += b.pos;
                    sum.neg += b.neg;
                    sum.cluster += b.cluster;
                    n_batches += 1;
                    steps += 1;
                }
                Err(e) if is_divergence(&e) => {
                    log::warn!("training diverged in epoch {epoch}: {e}");
                    return Ok(FitResult {
                        model: best,
                        history,
                        best_epoch,
                        steps,
                        class_weights: weights,
                        diverged: Some(Error::Diverged {
                            epoch,
                            msg: e.to_string(),
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let k = n_batches as f64;
        let train_loss = LossBreakdown {
            total: sum.total / k,
            ce: sum.ce / k,
            pos: sum.pos / k,
            neg: sum.neg / k,
            cluster: sum.cluster / k,
        };
        let current = Model {
            config: model_cfg.clone(),
            params: params.clone(),
        };
        let report = evaluate(&current, val)?;
        log::debug!(
            "epoch {epoch}: loss {:.5} val F1 {:.4}",
            train_loss.total,
            report.macro_f1
        );
        history.push(EpochRecord {
            epoch,
            steps: n_batches,
            train_loss,
            val_macro_precision: report.macro_precision,
            val_macro_recall: report.macro_recall,
            val_macro_f1: report.macro_f1,
            val_accuracy: report.accuracy,
        });
        if report.macro_f1 > best_f1 {
            best_f1 = report.macro_f1;
            best_epoch = epoch;
            best = current;
        } else if train_cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
            break;
        }
    }
    Ok(FitResult {
        model: best,
        history,
        best_epoch,
        steps,
        class_weights: weights,
        diverged: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::separable_dataset;
    use crate::train::metrics::evaluate;

    fn sanity_model() -> ModelConfig {
        let mut cfg = ModelConfig::new(2, 16, 2);
        cfg.tdf.slices = 4;
        cfg.tdf.embed_dim = 8;
        cfg.tdf.mlp_hidden = 8;
        cfg.tdf.conv_out_channels = 4;
        cfg.dgl.node_dim = 8;
        cfg.dgl.edge_hidden = 8;
        cfg
    }

    fn quick(epochs: usize, batch: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            patience: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn step_count_covers_partial_batch() {
        let ds = separable_dataset(10, 2, 16, 1).unwrap();
        let r = fit(&sanity_model(), &LossConfig::default(), &quick(1, 4, 1e-3), 0, &ds, &ds).unwrap();
        assert_eq!(r.steps, 3);
        assert_eq!(r.history.len(), 1);
        assert_eq!(r.history[0].steps, 3);
    }

    #[test]
    fn seeded_history_is_reproducible() {
        let ds = separable_dataset(24, 2, 16, 2).unwrap();
        let a = fit(&sanity_model(), &LossConfig::default(), &quick(3, 8, 5e-3), 7, &ds, &ds).unwrap();
        let b = fit(&sanity_model(), &LossConfig::default(), &quick(3, 8, 5e-3), 7, &ds, &ds).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn separable_set_is_learned() {
        let train = separable_dataset(40, 2, 16, 3).unwrap();
        let val = separable_dataset(20, 2, 16, 4).unwrap();
        let r = fit(&sanity_model(), &LossConfig::default(), &quick(50, 8, 5e-3), 1, &train, &val).unwrap();
        let last = Model {
            config: r.model.config.clone(),
            params: r.model.params.clone(),
        };
        assert_eq!(evaluate(&last, &train).unwrap().accuracy, 1.0);
    }

    #[test]
    fn loss_falls_during_first_epochs() {
        let ds = separable_dataset(32, 2, 16, 5).unwrap();
        let r = fit(&sanity_model(), &LossConfig::default(), &quick(10, 8, 1e-3), 2, &ds, &ds).unwrap();
        let losses: Vec<f64> = r.history.iter().map(|h| h.train_loss.total).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    }

    #[test]
    fn balanced_ce_only_equals_weighted_ce_only() {
        let ds = separable_dataset(16, 2, 16, 6).unwrap();
        let plain = LossConfig {
            beta: 0.0,
            ..LossConfig::default()
        };
        let weighted = LossConfig {
            weighted_ce: true,
            class_weights: Some(vec![1.0, 1.0]),
            ..plain.clone()
        };
        let a = fit(&sanity_model(), &plain, &quick(3, 4, 5e-3), 3, &ds, &ds).unwrap();
        let b = fit(&sanity_model(), &weighted, &quick(3, 4, 5e-3), 3, &ds, &ds).unwrap();
        for (x, y) in a.history.iter().zip(&b.history) {
            assert!((x.train_loss.total - y.train_loss.total).abs() <= 1e-12);
            assert_eq!(x.train_loss.pos, 0.0);
        }
    }

    #[test]
    fn early_stopping_halts() {
        let ds = separable_dataset(16, 2, 16, 7).unwrap();
        let cfg = TrainConfig {
            patience: Some(2),
            ..quick(100, 8, 5e-3)
        };
        let r = fit(&sanity_model(), &LossConfig::default(), &cfg, 4, &ds, &ds).unwrap();
        assert!(r.history.len() < 100);
        assert_eq!(r.history.len(), r.best_epoch + 2);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let ds = separable_dataset(16, 2, 16, 8).unwrap();
        let r = fit(&sanity_model(), &LossConfig::default(), &quick(200, 4, 1e12), 5, &ds, &ds).unwrap();
        if let Some(e) = &r.diverged {
            assert!(matches!(e, Error::Diverged { .. }));
            assert!(r.model.params.iter().all(|(_, t)| t.is_finite()));
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = separable_dataset(8, 2, 16, 9).unwrap();
        let bad = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit(&sanity_model(), &LossConfig::default(), &bad, 0, &ds, &ds),
            Err(Error::Config(_))
        ));
    }
}
