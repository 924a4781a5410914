//! Central finite-difference checks for analytic gradients.
//!
//! The numeric side only ever evaluates the forward function, so it stays
//! independent of every backward rule it is used to verify.

use rand::seq::index::sample;
use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Default step used by the checks (64-bit only).
pub const STEP: f64 = 1e-5;

/// Largest relative error found by a check, with its location.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

/// `|analytic − numeric| / max(|analytic|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(floor)
}

/// Checks `d f / d inputs` at up to `coords` randomly chosen coordinates
/// per input. `f` builds a scalar on a fresh graph from leaf handles.
pub fn check<F, R>(inputs: &[Tensor], coords: usize, rng: &mut R, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    R: Rng,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut report = CheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_coord: 0,
        coords_checked: 0,
    };
    for (which, t) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[which])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        let picks = sample(rng, t.numel(), coords.min(t.numel()));
        for c in picks.iter() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[c] += STEP;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[c] -= STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            let err = rel_err(analytic.data()[c], numeric, 1e-8);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_input = which;
                report.worst_coord = c;
            }
        }
    }
    Ok(report)
}
