//! Time dimension factorization.
//!
//! A normalized window is split into `s` interleaved subsequences, each one
//! is mapped by a shared two-layer perceptron acting along time, and the
//! resulting feature blocks are re-interleaved in chronological order. A
//! parallel convolution branch summarizes the whole window; its output is
//! appended to every channel row.
//!
//! All functions work on stacked batches: row `b·F + f` holds channel `f` of
//! sample `b`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Reduce, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{conv_kernel, glorot, Bound, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TdfConfig {
    /// Number of interleaved subsequences `s`.
    pub slices: usize,
    /// Hidden width of the per-subsequence extractor.
    pub mlp_hidden: usize,
    /// Width of the merged temporal features; each subsequence contributes
    /// `embed_dim / slices` columns.
    pub embed_dim: usize,
    pub conv_branch: bool,
    pub conv_out_channels: usize,
    pub conv_kernel: usize,
}

impl Default for TdfConfig {
    fn default() -> Self {
        Self {
            slices: 8,
            mlp_hidden: 16,
            embed_dim: 64,
            conv_branch: true,
            conv_out_channels: 8,
            conv_kernel: 3,
        }
    }
}

/// Window length after dropping trailing columns so that `s` divides it.
pub fn effective_len(t: usize, s: usize) -> Result<usize> {
    if s == 0 || s > t {
        return Err(Error::Argument(format!("slice count {s} must be in 1..={t}")));
    }
    Ok(s * (t / s))
}

impl TdfConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        effective_len(t, self.slices).map_err(|e| Error::Config(format!("model.tdf.slices: {e}")))?;
        if self.embed_dim == 0 || self.embed_dim % self.slices != 0 {
            return Err(Error::Config(format!(
                "model.tdf.embed_dim ({}) must be a positive multiple of slices ({})",
                self.embed_dim, self.slices
            )));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("model.tdf.mlp_hidden must be positive".into()));
        }
        if self.conv_branch && (self.conv_out_channels == 0 || self.conv_kernel == 0 || self.conv_kernel > t) {
            return Err(Error::Config(format!(
                "model.tdf.conv_kernel must be in 1..={t} and conv_out_channels positive"
            )));
        }
        Ok(())
    }

    /// Per-row width of `X_e`.
    pub fn output_dim(&self) -> usize {
        self.embed_dim + if self.conv_branch { self.conv_out_channels } else { 0 }
    }

    pub fn init_params<R: Rng>(&self, f: usize, t: usize, rng: &mut R, params: &mut ParamSet) -> Result<()> {
        let sub_len = effective_len(t, self.slices)? / self.slices;
        let sub_out = self.embed_dim / self.slices;
        params.insert("tdf.ext.w1", glorot(rng, sub_len, self.mlp_hidden));
        params.insert("tdf.ext.b1", Tensor::zeros(&[self.mlp_hidden]));
        params.insert("tdf.ext.w2", glorot(rng, self.mlp_hidden, sub_out));
        params.insert("tdf.ext.b2", Tensor::zeros(&[sub_out]));
        if self.conv_branch {
            params.insert("tdf.conv.w", conv_kernel(rng, self.conv_out_channels, f, self.conv_kernel));
            params.insert("tdf.conv.b", Tensor::zeros(&[self.conv_out_channels]));
        }
        Ok(())
    }
}

/// Weights of the shared subsequence extractor.
#[derive(Clone, Copy, Debug)]
pub struct ExtractorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TdfVars {
    pub extractor: ExtractorVars,
    /// Kernel and bias of the convolution branch.
    pub conv: Option<(Var, Var)>,
}

impl TdfVars {
    pub fn bind(cfg: &TdfConfig, b: &Bound) -> Result<Self> {
        Ok(Self {
            extractor: ExtractorVars {
                w1: b.var("tdf.ext.w1")?,
                b1: b.var("tdf.ext.b1")?,
                w2: b.var("tdf.ext.w2")?,
                b2: b.var("tdf.ext.b2")?,
            },
            conv: if cfg.conv_branch {
                Some((b.var("tdf.conv.w")?, b.var("tdf.conv.b")?))
            } else {
                None
            },
        })
    }
}

/// Splits the columns of `x` (`rows × T`) into `s` interleaved subsequences.
/// Trailing columns beyond the largest multiple of `s` are dropped first.
pub fn slice_interleaved(g: &mut Graph, x: Var, s: usize) -> Result<Vec<Var>> {
    let (_, t) = g.value(x).dims2()?;
    let t_eff = effective_len(t, s)?;
    let x = if t_eff < t { g.slice_cols(x, 0, t_eff)? } else { x };
    (0..s).map(|i| g.strided_gather(x, i, s)).collect()
}

/// Two-layer perceptron along the time axis of one subsequence.
pub fn extract_subsequence_features(g: &mut Graph, x_i: Var, p: &ExtractorVars) -> Result<Var> {
    let h = g.matmul(x_i, p.w1)?;
    let h = g.add_row(h, p.b1)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, p.w2)?;
    g.add_row(o, p.b2)
}

/// Re-interleaves `s` equal-shape blocks: column `j` of block `i` lands at
/// column `j·s + i`.
pub fn merge(g: &mut Graph, blocks: &[Var]) -> Result<Var> {
    let first = *blocks.first().ok_or_else(|| Error::Argument("merge of no blocks".into()))?;
    let shape = g.shape(first).to_vec();
    if blocks.iter().any(|&b| g.shape(b) != shape.as_slice()) {
        return Err(Error::Dimension("merge blocks must share one shape".into()));
    }
    if blocks.len() == 1 {
        return Ok(first);
    }
    let s = blocks.len();
    let w = shape[1];
    let cat = g.concat(blocks, 1)?;
    let perm = (0..w * s).map(|out| (out % s) * w + out / s).collect();
    g.gather_cols(cat, perm)
}

/// Convolution branch: conv1d over each sample's `F×T` window, relu, mean
/// over time, then repeated for each of the sample's `F` rows.
pub fn conv_features(g: &mut Graph, x_rows: Var, channels: usize, kernel: Var, bias: Var) -> Result<Var> {
    let (rows, t) = g.value(x_rows).dims2()?;
    let batch = rows / channels;
    let x3 = g.reshape(x_rows, vec![batch, channels, t])?;
    let c = g.conv1d(x3, kernel, bias)?;
    let c = g.relu(c)?;
    let pooled = g.reduce(c, Reduce::Mean, Some(2))?;
    g.gather_rows(pooled, (0..rows).map(|r| r / channels).collect())
}

/// `X_e` for a stacked batch `x_rows` (`B·F × T`, already normalized).
pub fn tdf_forward(g: &mut Graph, x_rows: Var, channels: usize, cfg: &TdfConfig, vars: &TdfVars) -> Result<Var> {
    let (rows, _) = g.value(x_rows).dims2()?;
    if channels == 0 || rows % channels != 0 {
        return Err(Error::Dimension(format!("{rows} rows is not a whole number of {channels}-channel windows")));
    }
    let subs = slice_interleaved(g, x_rows, cfg.slices)?;
    let feats = subs
        .into_iter()
        .map(|x_i| extract_subsequence_features(g, x_i, &vars.extractor))
        .collect::<Result<Vec<_>>>()?;
    let x_t = merge(g, &feats)?;
    match vars.conv {
        Some((kernel, bias)) => {
            let x_cnn = conv_features(g, x_rows, channels, kernel, bias)?;
            g.concat(&[x_t, x_cnn], 1)
        }
        None => Ok(x_t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(g: &mut Graph, rows: usize, t: usize) -> Var {
        let data = (0..rows * t).map(|v| (v % t) as f64).collect();
        g.constant(Tensor::new(vec![rows, t], data).unwrap())
    }

    #[test]
    fn slices_of_eight() {
        let mut g = Graph::new();
        let x = ramp(&mut g, 1, 8);
        let s = slice_interleaved(&mut g, x, 2).unwrap();
        assert_eq!(g.value(s[0]).data(), &[0.0, 2.0, 4.0, 6.0]);
        assert_eq!(g.value(s[1]).data(), &[1.0, 3.0, 5.0, 7.0]);
        let one = slice_interleaved(&mut g, x, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(g.value(one[0]), g.value(x));
    }

    #[test]
    fn truncates_non_divisible_length() {
        let mut g = Graph::new();
        let x = ramp(&mut g, 1, 10);
        let s = slice_interleaved(&mut g, x, 4).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|&v| g.shape(v) == [1, 2]));
        assert_eq!(g.value(s[3]).data(), &[3.0, 7.0]);
        assert!(matches!(slice_interleaved(&mut g, x, 11), Err(Error::Argument(_))));
    }

    #[test]
    fn merge_orders_chronologically() {
        let mut g = Graph::new();
        // A=1, B=2, C=3, D=4
        let ac = g.constant(Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap());
        let bd = g.constant(Tensor::from_rows(&[vec![2.0, 4.0]]).unwrap());
        let m = merge(&mut g, &[ac, bd]).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 2.0, 3.0, 4.0]);
        let odd = g.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
        assert!(matches!(merge(&mut g, &[ac, odd]), Err(Error::Dimension(_))));
    }

    fn identity_extractor(g: &mut Graph, w: usize) -> ExtractorVars {
        ExtractorVars {
            w1: g.constant(Tensor::eye(w)),
            b1: g.constant(Tensor::zeros(&[w])),
            w2: g.constant(Tensor::eye(w)),
            b2: g.constant(Tensor::zeros(&[w])),
        }
    }

    #[test]
    fn zero_extractor_gives_zero_output() {
        let mut g = Graph::new();
        let x = ramp(&mut g, 3, 4);
        let p = ExtractorVars {
            w1: g.constant(Tensor::zeros(&[4, 5])),
            b1: g.constant(Tensor::zeros(&[5])),
            w2: g.constant(Tensor::zeros(&[5, 2])),
            b2: g.constant(Tensor::zeros(&[2])),
        };
        let y = extract_subsequence_features(&mut g, x, &p).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_extractor_and_merge_round_trip() {
        let mut g = Graph::new();
        // non-negative input so the relu in the identity extractor is a no-op
        let x = ramp(&mut g, 2, 12);
        for s in [1, 2, 3, 4, 6, 12] {
            let p = identity_extractor(&mut g, 12 / s);
            let subs = slice_interleaved(&mut g, x, s).unwrap();
            let feats: Vec<Var> = subs
                .iter()
                .map(|&v| extract_subsequence_features(&mut g, v, &p).unwrap())
                .collect();
            let m = merge(&mut g, &feats).unwrap();
            assert_eq!(g.value(m), g.value(x), "s = {s}");
        }
    }

    #[test]
    fn conv_branch_switch_and_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for conv in [true, false] {
            let cfg = TdfConfig {
                conv_branch: conv,
                ..TdfConfig::default()
            };
            let mut params = ParamSet::new();
            cfg.init_params(4, 64, &mut rng, &mut params).unwrap();
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let vars = TdfVars::bind(&cfg, &b).unwrap();
            let data = (0..3 * 4 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x = g.constant(Tensor::new(vec![12, 64], data).unwrap());
            let xe = tdf_forward(&mut g, x, 4, &cfg, &vars).unwrap();
            assert_eq!(g.shape(xe), [12, cfg.output_dim()]);
            if !conv {
                // X_e is exactly the merged temporal features
                let subs = slice_interleaved(&mut g, x, cfg.slices).unwrap();
                let feats: Vec<Var> = subs
                    .iter()
                    .map(|&v| extract_subsequence_features(&mut g, v, &vars.extractor).unwrap())
                    .collect();
                let xt = merge(&mut g, &feats).unwrap();
                assert_eq!(g.value(xt), g.value(xe));
            } else {
                assert_eq!(cfg.output_dim(), 64 + 8);
            }
        }
    }

    #[test]
    fn tdf_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = TdfConfig {
            slices: 4,
            mlp_hidden: 5,
            embed_dim: 8,
            conv_out_channels: 3,
            ..TdfConfig::default()
        };
        let mut params = ParamSet::new();
        cfg.init_params(2, 16, &mut rng, &mut params).unwrap();
        let x = Tensor::new(vec![4, 16], (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(x);
        let names: Vec<String> = params.names().to_vec();
        let report = gradcheck::check(&inputs, 10, &mut rng, |g, vars| {
            let lookup = |n: &str| vars[names.iter().position(|m| m == n).unwrap()];
            let tv = TdfVars {
                extractor: ExtractorVars {
                    w1: lookup("tdf.ext.w1"),
                    b1: lookup("tdf.ext.b1"),
                    w2: lookup("tdf.ext.w2"),
                    b2: lookup("tdf.ext.b2"),
                },
                conv: Some((lookup("tdf.conv.w"), lookup("tdf.conv.b"))),
            };
            let xe = tdf_forward(g, *vars.last().unwrap(), 2, &cfg, &tv)?;
            let sq = g.mul(xe, xe)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
