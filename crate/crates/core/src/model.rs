//! Full classifier: TDF feature extraction, DGL interaction, softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{LabeledDataset, TimeWindow};
use crate::dgl::{self, dgl_forward, DglConfig, DglVars, Mode};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::classify;
use crate::params::{glorot, Bound, ParamSet};
use crate::tdf::{tdf_forward, TdfConfig, TdfVars};

/// Samples per forward pass during inference.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels per window `F`.
    pub channels: usize,
    /// Window length `T`.
    pub window_len: usize,
    pub n_classes: usize,
    pub use_tdf: bool,
    pub use_dgl: bool,
    pub tdf: TdfConfig,
    pub dgl: DglConfig,
}

impl ModelConfig {
    pub fn new(channels: usize, window_len: usize, n_classes: usize) -> Self {
        Self {
            channels,
            window_len,
            n_classes,
            use_tdf: true,
            use_dgl: true,
            tdf: TdfConfig::default(),
            dgl: DglConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.window_len == 0 {
            return Err(Error::Config("window shape must be non-empty".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if !self.use_tdf && !self.use_dgl {
            return Err(Error::Config("model.use_tdf and model.use_dgl cannot both be false".into()));
        }
        if self.use_tdf {
            self.tdf.validate(self.window_len)?;
        }
        if self.use_dgl {
            self.dgl.validate()?;
        }
        Ok(())
    }

    /// Width of each node row entering the graph stage.
    pub fn node_input_dim(&self) -> usize {
        if self.use_tdf {
            self.tdf.output_dim()
        } else {
            self.window_len
        }
    }

    /// Width of `g(x)`.
    pub fn repr_dim(&self) -> usize {
        let d = self.node_input_dim();
        if self.use_dgl {
            self.dgl.output_dim(d)
        } else {
            d
        }
    }

    /// Hex SHA-256 of the canonical JSON form; identifies the parameter layout.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        if self.use_tdf {
            self.tdf.init_params(self.channels, self.window_len, &mut rng, &mut params)?;
        }
        if self.use_dgl {
            self.dgl.init_params(self.node_input_dim(), &mut rng, &mut params);
        }
        params.insert("head.w", glorot(&mut rng, self.repr_dim(), self.n_classes));
        params.insert("head.b", Tensor::zeros(&[self.n_classes]));
        Ok(params)
    }
}

/// Handles from one model forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// `g(x)`, the pre-classifier representation.
    pub repr: Var,
    /// Interaction strengths per DGL round; empty without DGL.
    pub interactions: Vec<Var>,
}

/// Forward pass on stacked rows `B·F × T` (row `b·F + f` is channel `f` of
/// sample `b`).
pub fn forward(g: &mut Graph, cfg: &ModelConfig, bound: &Bound, x_rows: Var, mode: Mode) -> Result<ForwardOutput> {
    let f = cfg.channels;
    let x_e = if cfg.use_tdf {
        let vars = TdfVars::bind(&cfg.tdf, bound)?;
        tdf_forward(g, x_rows, f, &cfg.tdf, &vars)?
    } else {
        x_rows
    };
    let (repr, interactions) = if cfg.use_dgl {
        let vars = DglVars::bind(bound)?;
        let out = dgl_forward(g, x_e, f, &cfg.dgl, &vars, mode)?;
        (out.repr, out.interactions)
    } else {
        (dgl::mean_over_nodes(g, x_e, f)?, Vec::new())
    };
    let logits = classify(g, repr, bound.var("head.w")?, bound.var("head.b")?)?;
    Ok(ForwardOutput {
        logits,
        repr,
        interactions,
    })
}

/// Stacks windows into the `B·F × T` row layout.
pub fn stack_windows<'a>(windows: impl IntoIterator<Item = &'a TimeWindow>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for w in windows {
        let s = w.values.shape();
        if *shape.get_or_insert((s[0], s[1])) != (s[0], s[1]) {
            return Err(Error::Dimension("windows differ in shape".into()));
        }
        data.extend_from_slice(w.values.data());
        n += 1;
    }
    let (f, t) = shape.ok_or_else(|| Error::Argument("empty batch".into()))?;
    Tensor::new(vec![n * f, t], data)
}

/// Trained (or initialized) model: configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = config.init_params(seed)?;
        Ok(Self { config, params })
    }

    fn check_dataset(&self, ds: &LabeledDataset) -> Result<()> {
        let Some((f, t)) = ds.window_shape() else {
            return Err(Error::Argument("empty dataset".into()));
        };
        if (f, t) != (self.config.channels, self.config.window_len) {
            return Err(Error::Dimension(format!(
                "dataset windows are {f}×{t}, model expects {}×{}",
                self.config.channels, self.config.window_len
            )));
        }
        Ok(())
    }

    /// Runs inference in fixed-size chunks and concatenates the per-chunk
    /// `(logits, repr)` rows in dataset order.
    fn infer(&self, ds: &LabeledDataset) -> Result<(Tensor, Tensor)> {
        self.check_dataset(ds)?;
        let chunks: Vec<&[TimeWindow]> = ds.windows().chunks(EVAL_CHUNK).collect();
        let parts = chunks
            .par_iter()
            .map(|chunk| {
                let mut g = Graph::new();
                let bound = self.params.bind(&mut g);
                let x = g.constant(stack_windows(chunk.iter())?);
                let out = forward(&mut g, &self.config, &bound, x, Mode::Eval)?;
                Ok((g.value(out.logits).clone(), g.value(out.repr).clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let join = |pick: fn(&(Tensor, Tensor)) -> &Tensor| -> Result<Tensor> {
            let cols = pick(&parts[0]).shape()[1];
            let data: Vec<f64> = parts.iter().flat_map(|p| pick(p).data().iter().copied()).collect();
            Tensor::new(vec![data.len() / cols, cols], data)
        };
        Ok((join(|p| &p.0)?, join(|p| &p.1)?))
    }

    pub fn logits(&self, ds: &LabeledDataset) -> Result<Tensor> {
        Ok(self.infer(ds)?.0)
    }

    /// `g(x)` for every sample, one row each.
    pub fn embed(&self, ds: &LabeledDataset) -> Result<Tensor> {
        Ok(self.infer(ds)?.1)
    }

    /// Predicted labels in `1..=k`; ties go to the lower class.
    pub fn predict(&self, ds: &LabeledDataset) -> Result<Vec<usize>> {
        let logits = self.logits(ds)?;
        let (n, k) = logits.dims2()?;
        Ok((0..n)
            .map(|i| {
                let row = logits.row(i);
                (0..k).fold(0, |best, c| if row[c] > row[best] { c } else { best }) + 1
            })
            .collect())
    }
}
