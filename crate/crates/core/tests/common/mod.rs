#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tgc_core::dgl::{dgl_forward, DglConfig, DglVars, Mode};
use tgc_core::diffcore::gradcheck::{self, CheckReport};
use tgc_core::diffcore::{Graph, Reduce, Tensor, Var};
use tgc_core::losses::{classify, combined_loss, LossConfig};
use tgc_core::model::{forward, ModelConfig};
use tgc_core::params::Bound;
use tgc_core::tdf::{tdf_forward, TdfConfig, TdfVars};
use tgc_core::Result;

/// Coordinates checked per input tensor.
pub const COORDS: usize = 12;
pub const GRAD_TOL: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ out ⊙ R` with a fixed pseudo-random `R`, so every output entry gets a
/// distinct upstream gradient.
pub fn project(g: &mut Graph, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let r = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

type Builder = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + Sync>;

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub f: Builder,
}

fn case(name: &'static str, inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + Sync + 'static) -> Case {
    Case {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// One case per differentiable operation plus the composites.
pub fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape, -1.5, 1.5);
    let a34 = r(&[3, 4]);
    let b34 = r(&[3, 4]);
    let b45 = r(&[4, 5]);
    let v4 = r(&[4]);
    let c3 = r(&[3, 1]);
    let wide = r(&[3, 12]);
    let pos = {
        let mut t = r(&[3, 4]);
        t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2);
        t
    };
    let mask: Vec<bool> = (0..12).map(|i| i % 5 != 0).collect();

    let mut out = vec![
        case("matmul", vec![a34.clone(), b45.clone()], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y)
        }),
        case("transpose", vec![a34.clone()], |g, v| {
            let y = g.transpose(v[0])?;
            project(g, y)
        }),
        case("add", vec![a34.clone(), b34.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y)
        }),
        case("add_row", vec![a34.clone(), v4.clone()], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            project(g, y)
        }),
        case("mul", vec![a34.clone(), b34.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y)
        }),
        case("mul_col", vec![a34.clone(), c3.clone()], |g, v| {
            let y = g.mul_col(v[0], v[1])?;
            project(g, y)
        }),
        case("scale", vec![a34.clone()], |g, v| {
            let y = g.scale(v[0], -2.5)?;
            project(g, y)
        }),
        case("sigmoid", vec![a34.clone()], |g, v| {
            let y = g.sigmoid(v[0])?;
            project(g, y)
        }),
        case("relu", vec![a34.clone()], |g, v| {
            let y = g.relu(v[0])?;
            project(g, y)
        }),
        case("exp", vec![a34.clone()], |g, v| {
            let y = g.exp(v[0])?;
            project(g, y)
        }),
        case("log", vec![pos], |g, v| {
            let y = g.log(v[0])?;
            project(g, y)
        }),
        case("neg", vec![a34.clone()], |g, v| {
            let y = g.neg(v[0])?;
            project(g, y)
        }),
        case("softmax_rows", vec![a34.clone()], |g, v| {
            let y = g.softmax_rows(v[0])?;
            project(g, y)
        }),
        case("log_softmax_rows", vec![a34.clone()], |g, v| {
            let y = g.log_softmax_rows(v[0], None)?;
            project(g, y)
        }),
        case("log_softmax_rows_masked", vec![a34.clone()], move |g, v| {
            let y = g.log_softmax_rows(v[0], Some(mask.clone()))?;
            project(g, y)
        }),
        case("l2_normalize_rows", vec![a34.clone()], |g, v| {
            let y = g.l2_normalize_rows(v[0])?;
            project(g, y)
        }),
        case("strided_gather", vec![wide.clone()], |g, v| {
            let y = g.strided_gather(v[0], 2, 5)?;
            project(g, y)
        }),
        case("slice_cols", vec![wide.clone()], |g, v| {
            let y = g.slice_cols(v[0], 3, 6)?;
            project(g, y)
        }),
        case("gather_cols", vec![a34.clone()], |g, v| {
            let y = g.gather_cols(v[0], vec![3, 0, 0, 2, 1])?;
            project(g, y)
        }),
        case("gather_rows", vec![a34.clone()], |g, v| {
            let y = g.gather_rows(v[0], vec![2, 2, 0, 1, 0])?;
            project(g, y)
        }),
        case("index_add_rows", vec![a34.clone()], |g, v| {
            let y = g.index_add_rows(v[0], vec![1, 0, 1], 2)?;
            project(g, y)
        }),
        case("concat_axis0", vec![a34.clone(), b34.clone()], |g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            project(g, y)
        }),
        case("concat_axis1", vec![a34.clone(), wide.clone()], |g, v| {
            let y = g.concat(&[v[0], v[1]], 1)?;
            project(g, y)
        }),
        case("reshape", vec![a34.clone()], |g, v| {
            let y = g.reshape(v[0], vec![2, 6])?;
            project(g, y)
        }),
        case("reduce_sum_all", vec![a34.clone()], |g, v| {
            let y = g.reduce(v[0], Reduce::Sum, None)?;
            g.scale(y, 0.7)
        }),
        case("reduce_mean_axis0", vec![a34.clone()], |g, v| {
            let y = g.reduce(v[0], Reduce::Mean, Some(0))?;
            project(g, y)
        }),
        case("reduce_mean_axis1", vec![a34.clone()], |g, v| {
            let y = g.reduce(v[0], Reduce::Mean, Some(1))?;
            project(g, y)
        }),
        case("reduce_sum_axis1", vec![a34.clone()], |g, v| {
            let y = g.reduce(v[0], Reduce::Sum, Some(1))?;
            project(g, y)
        }),
        case("conv1d", vec![r(&[3, 10]), r(&[2, 3, 3]), r(&[2])], |g, v| {
            let y = g.conv1d(v[0], v[1], v[2])?;
            project(g, y)
        }),
        case("conv1d_batched", vec![r(&[2, 3, 9]), r(&[4, 3, 2]), r(&[4])], |g, v| {
            let y = g.conv1d(v[0], v[1], v[2])?;
            project(g, y)
        }),
        case("classify", vec![a34.clone(), b45.clone(), r(&[5])], |g, v| {
            let y = classify(g, v[0], v[1], v[2])?;
            project(g, y)
        }),
    ];
    out.extend(composites(&mut rng));
    out
}

fn small_model() -> ModelConfig {
    let mut cfg = ModelConfig::new(3, 16, 4);
    cfg.tdf = TdfConfig {
        slices: 4,
        mlp_hidden: 5,
        embed_dim: 8,
        conv_branch: true,
        conv_out_channels: 3,
        conv_kernel: 3,
    };
    cfg.dgl = DglConfig {
        iterations: 2,
        node_dim: 4,
        edge_hidden: 5,
        concat_skip: true,
        prune_threshold: None,
    };
    cfg
}

fn composites(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let cfg = small_model();
    let params = cfg.init_params(7).unwrap();
    let names: Vec<String> = params.names().to_vec();
    let x = rand_tensor(rng, &[6 * 3, 16], -1.0, 1.0);
    let labels = vec![1, 2, 2, 3, 4, 1];
    let weights = vec![1.0, 0.5, 2.0, 1.5];

    let tdf_inputs = {
        let mut ins: Vec<Tensor> = vec![x.clone()];
        ins.extend(params.iter().filter(|(n, _)| n.starts_with("tdf.")).map(|(_, t)| t.clone()));
        ins
    };
    let tdf_names: Vec<String> = names.iter().filter(|n| n.starts_with("tdf.")).cloned().collect();
    let tdf_cfg = cfg.tdf.clone();
    let tdf_case = case("tdf_forward", tdf_inputs, move |g, v| {
        let bound = Bound::from_parts(tdf_names.clone(), v[1..].to_vec());
        let vars = TdfVars::bind(&tdf_cfg, &bound)?;
        let y = tdf_forward(g, v[0], 3, &tdf_cfg, &vars)?;
        project(g, y)
    });

    let dgl_names: Vec<String> = names.iter().filter(|n| n.starts_with("dgl.")).cloned().collect();
    let mut dgl_inputs = vec![rand_tensor(rng, &[4 * 3, cfg.node_input_dim()], -1.0, 1.0)];
    dgl_inputs.extend(dgl_names.iter().map(|n| params.get(n).unwrap().clone()));
    let dgl_cfg = cfg.dgl.clone();
    let dgl_case = case("dgl_forward", dgl_inputs, move |g, v| {
        let bound = Bound::from_parts(dgl_names.clone(), v[1..].to_vec());
        let vars = DglVars::bind(&bound)?;
        let out = dgl_forward(g, v[0], 3, &dgl_cfg, &vars, Mode::Train)?;
        project(g, out.repr)
    });

    let full_inputs: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let loss_cfg = LossConfig::default();
    let full_case = case("tdf_dgl_combined_loss", full_inputs, move |g, v| {
        let bound = Bound::from_parts(names.clone(), v.to_vec());
        let xv = g.constant(x.clone());
        let out = forward(g, &cfg, &bound, xv, Mode::Train)?;
        Ok(combined_loss(g, out.logits, out.repr, &labels, &loss_cfg, &weights)?.total)
    });
    vec![tdf_case, dgl_case, full_case]
}

pub fn run_case(c: &Case, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gradcheck::check(&c.inputs, COORDS, &mut rng, |g, v| (c.f)(g, v))
}
