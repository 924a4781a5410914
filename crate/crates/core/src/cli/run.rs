use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use crate::data::{save_csv, synth_generate, LabeledDataset};
use crate::error::{Error, Result};
use crate::train::{checkpoint, evaluate, fit, EpochRecord, FitResult, MetricsReport};

/// `git describe` of the source tree this binary was built from.
pub const BUILD_ID: &str = env!("TGC_BUILD_ID");

/// Slice counts tried by the sensitivity sweep.
pub const SLICE_SWEEP: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];

/// `(alpha, beta)` pairs of the loss-ratio sweep; the first is the default.
pub const LOSS_RATIOS: [(f64, f64); 5] = [(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (3.0, 1.0), (1.0, 3.0)];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct TrainReport<'a> {
    build: &'a str,
    config: &'a ExperimentConfig,
    model_hash: String,
    class_weights: &'a [f64],
    best_epoch: usize,
    steps: usize,
    diverged: Option<String>,
    val: &'a MetricsReport,
    test: Option<&'a MetricsReport>,
    history: &'a [EpochRecord],
}

/// Result of one training run, held in memory.
#[derive(Debug)]
pub struct RunSummary {
    pub fit: FitResult,
    pub val: MetricsReport,
    /// `None` when the test fraction is zero.
    pub test: Option<MetricsReport>,
}

impl RunSummary {
    /// Test metrics, or validation metrics without a test split.
    pub fn headline(&self) -> &MetricsReport {
        self.test.as_ref().unwrap_or(&self.val)
    }
}

pub fn train_and_evaluate(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let (_, splits) = cfg.prepare_data()?;
    let fit = fit(&cfg.model_config(), &cfg.loss, &cfg.train, cfg.seed, &splits.train, &splits.val)?;
    let val = evaluate(&fit.model, &splits.val)?;
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate(&fit.model, &splits.test)?)
    };
    Ok(RunSummary { fit, val, test })
}

/// Trains and writes `metrics.json`, `model.ckpt` and `confusion.csv` into
/// `out`. A diverged run still writes its artifacts (holding the last good
/// parameters) and then returns the divergence error.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    create_dir(out)?;
    let mut summary = train_and_evaluate(cfg)?;
    let report = TrainReport {
        build: BUILD_ID,
        config: cfg,
        model_hash: summary.fit.model.config.hash(),
        class_weights: &summary.fit.class_weights,
        best_epoch: summary.fit.best_epoch,
        steps: summary.fit.steps,
        diverged: summary.fit.diverged.as_ref().map(|e| e.to_string()),
        val: &summary.val,
        test: summary.test.as_ref(),
        history: &summary.fit.history,
    };
    write(&out.join("metrics.json"), to_json(&report))?;
    checkpoint::save(&summary.fit.model, &out.join("model.ckpt"))?;
    write(&out.join("confusion.csv"), summary.headline().confusion_csv())?;
    match summary.fit.diverged.take() {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}

/// Writes the configured synthetic dataset (before normalization) to
/// `out/dataset.csv`.
pub fn run_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<LabeledDataset> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(Error::Config("gen-data needs data.source = \"synthetic\"".into()));
    }
    create_dir(out)?;
    let ds = synth_generate(&cfg.data.generator)?;
    save_csv(&ds, &out.join("dataset.csv"))?;
    Ok(ds)
}

/// Outcome of one sweep entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
    /// Per-class recall on the evaluation split.
    pub recall: Option<Vec<f64>>,
    pub best_epoch: Option<usize>,
}

impl RunResult {
    fn from_run(r: &Result<RunSummary>) -> Self {
        match r {
            Ok(s) => {
                let m = s.headline();
                Self {
                    status: "ok".into(),
                    error: None,
                    macro_precision: Some(m.macro_precision),
                    macro_recall: Some(m.macro_recall),
                    macro_f1: Some(m.macro_f1),
                    accuracy: Some(m.accuracy),
                    recall: Some(m.recall.clone()),
                    best_epoch: Some(s.fit.best_epoch),
                }
            }
            Err(e) => Self {
                status: "failed".into(),
                error: Some(e.to_string()),
                macro_precision: None,
                macro_recall: None,
                macro_f1: None,
                accuracy: None,
                recall: None,
                best_epoch: None,
            },
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Worker count for sweeps: `TGC_THREADS` if set, otherwise all cores.
pub fn sweep_threads() -> usize {
    std::env::var("TGC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs each `(id, config)` into `out/<id>`, in parallel, and returns the
/// results with wall times in the declared order.
fn run_all(jobs: &[(String, ExperimentConfig)], out: &Path) -> Result<Vec<(RunResult, f64)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(id, cfg)| {
                let start = Instant::now();
                let r = run_train(cfg, &out.join(id));
                if let Err(e) = &r {
                    log::warn!("run {id} failed: {e}");
                }
                (RunResult::from_run(&r), start.elapsed().as_secs_f64())
            })
            .collect()
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub use_tdf: bool,
    pub use_dgl: bool,
    pub concat_skip: bool,
    pub alpha: f64,
    pub beta: f64,
    #[serde(flatten)]
    pub result: RunResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub build: String,
    pub config: ExperimentConfig,
    pub rows: Vec<AblationRow>,
}

/// Variant identifiers and configurations of the ablation grid.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let full = {
        let mut c = base.clone();
        c.model.use_tdf = true;
        c.model.use_dgl = true;
        c.model.dgl.concat_skip = true;
        c
    };
    let mut ce = full.clone();
    ce.loss.beta = 0.0;
    let mut no_concat = full.clone();
    no_concat.model.dgl.concat_skip = false;
    let mut tdf_only = full.clone();
    tdf_only.model.use_dgl = false;
    let mut dgl_only = full.clone();
    dgl_only.model.use_tdf = false;
    vec![
        ("tdf_dgl_cl".into(), full),
        ("tdf_dgl_ce".into(), ce),
        ("tdf_dgl_noconcat_cl".into(), no_concat),
        ("tdf_cl".into(), tdf_only),
        ("dgl_cl".into(), dgl_only),
    ]
}

pub fn run_ablation(base: &ExperimentConfig, out: &Path) -> Result<AblationReport> {
    base.validate()?;
    create_dir(out)?;
    let jobs = ablation_variants(base);
    let results = run_all(&jobs, out)?;
    let rows = jobs
        .iter()
        .zip(results)
        .map(|((id, c), (result, _))| AblationRow {
            variant: id.clone(),
            use_tdf: c.model.use_tdf,
            use_dgl: c.model.use_dgl,
            concat_skip: c.model.use_dgl && c.model.dgl.concat_skip,
            alpha: c.loss.alpha,
            beta: c.loss.beta,
            result,
        })
        .collect();
    let report = AblationReport {
        build: BUILD_ID.into(),
        config: base.clone(),
        rows,
    };
    write(&out.join("ablation.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub s: usize,
    pub wall_time_s: f64,
    #[serde(flatten)]
    pub result: RunResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub s: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub build: String,
    pub config: ExperimentConfig,
    pub rows: Vec<SensitivityRow>,
    pub skipped: Vec<Skipped>,
}

/// Runs the slice sweep. Slice counts the window cannot support are
/// skipped and listed with the reason.
pub fn run_sensitivity(base: &ExperimentConfig, out: &Path) -> Result<SensitivityReport> {
    base.validate()?;
    create_dir(out)?;
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for s in SLICE_SWEEP {
        let mut c = base.clone();
        c.model.use_tdf = true;
        c.model.tdf.slices = s;
        match c.validate() {
            Ok(()) => jobs.push((format!("s{s}"), c)),
            Err(e) => {
                log::warn!("skipping s = {s}: {e}");
                skipped.push(Skipped { s, reason: e.to_string() });
            }
        }
    }
    let results = run_all(&jobs, out)?;
    let rows = jobs
        .iter()
        .zip(results)
        .map(|((_, c), (result, secs))| SensitivityRow {
            s: c.model.tdf.slices,
            wall_time_s: secs,
            result,
        })
        .collect();
    let report = SensitivityReport {
        build: BUILD_ID.into(),
        config: base.clone(),
        rows,
        skipped,
    };
    write(&out.join("sensitivity.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSweepRow {
    pub ratio: String,
    pub alpha: f64,
    pub beta: f64,
    pub is_default: bool,
    #[serde(flatten)]
    pub result: RunResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSweepReport {
    pub build: String,
    pub config: ExperimentConfig,
    pub rows: Vec<LossSweepRow>,
}

pub fn run_loss_sweep(base: &ExperimentConfig, out: &Path) -> Result<LossSweepReport> {
    base.validate()?;
    create_dir(out)?;
    let jobs: Vec<(String, ExperimentConfig)> = LOSS_RATIOS
        .iter()
        .map(|&(a, b)| {
            let mut c = base.clone();
            c.loss.alpha = a;
            c.loss.beta = b;
            (format!("alpha{a}_beta{b}"), c)
        })
        .collect();
    let results = run_all(&jobs, out)?;
    let rows = jobs
        .iter()
        .zip(results)
        .map(|((_, c), (result, _))| LossSweepRow {
            ratio: format!("{}:{}", c.loss.alpha, c.loss.beta),
            alpha: c.loss.alpha,
            beta: c.loss.beta,
            is_default: c.loss.alpha == 1.0 && c.loss.beta == 1.0,
            result,
        })
        .collect();
    let report = LossSweepReport {
        build: BUILD_ID.into(),
        config: base.clone(),
        rows,
    };
    write(&out.join("loss_sweep.json"), to_json(&report))?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

/// Writes `g(x)` for every sample of a split to `out/embeddings.csv`, one
/// row per sample: the representation values then the label.
pub fn export_embeddings(cfg: &ExperimentConfig, ckpt: &Path, split: SplitName, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let model = checkpoint::load(ckpt, &cfg.model_config())?;
    let (all, splits) = cfg.prepare_data()?;
    let ds = match split {
        SplitName::Train => splits.train,
        SplitName::Val => splits.val,
        SplitName::Test => splits.test,
        SplitName::All => all,
    };
    let emb = model.embed(&ds)?;
    let mut text = String::new();
    for (i, label) in ds.labels().into_iter().enumerate() {
        for v in emb.row(i) {
            text.push_str(&format!("{v:?},"));
        }
        text.push_str(&format!("{label}\n"));
    }
    create_dir(out)?;
    let path = out.join("embeddings.csv");
    write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_wiring() {
        let v = ablation_variants(&ExperimentConfig::default());
        assert_eq!(v.len(), 5);
        assert_eq!(v[1].1.loss.beta, 0.0);
        assert!(!v[2].1.model.dgl.concat_skip);
        assert!(!v[3].1.model.use_dgl && v[3].1.model.use_tdf);
        assert!(!v[4].1.model.use_tdf && v[4].1.model.use_dgl);
        assert_eq!(v[4].1.model_config().node_input_dim(), 64);
    }

    #[test]
    fn failed_run_is_recorded() {
        let r = RunResult::from_run(&Err(Error::Config("x".into())));
        assert!(!r.ok());
        assert!(r.macro_f1.is_none());
    }
}
