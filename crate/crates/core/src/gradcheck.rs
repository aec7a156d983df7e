//! Central finite-difference check of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{loss_and_grad, loss_and_grad_with_fault, Model, ParamGrads, PassSeed};
use crate::tape::OpKind;
use crate::text::EncodedBatch;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-6;

/// Magnitude range of the biases set by [`randomize_biases`].
pub const BIAS_JITTER: (f64, f64) = (0.05, 0.1);

/// Replaces every bias with random values of magnitude in [`BIAS_JITTER`]. Zero-initialised conv biases
/// put relu exactly at its kink on all-padding windows, where a central
/// difference cannot agree with any subgradient.
pub fn randomize_biases(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params.entries().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(model.params.tensors_mut()) {
        if name.rsplit('.').next().is_some_and(|l| l.starts_with('b')) {
            for v in t.data_mut() {
                let m = rng.gen_range(BIAS_JITTER.0..BIAS_JITTER.1);
                *v = if rng.gen::<bool>() { m } else { -m };
            }
        }
    }
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&GroupReport> {
        self.groups
            .iter()
            .filter(|g| !(g.max_rel_error <= self.tolerance))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }
}

/// Compares `analytic` against `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar of
/// every tensor. `loss` receives the tensor index and flat offset to perturb
/// by the given delta and returns the loss.
pub fn check_with<F>(names: &[String], analytic: &[Vec<f64>], eps: f64, tol: f64, mut loss: F) -> Result<GradCheckReport>
where
    F: FnMut(usize, usize, f64) -> Result<f64>,
{
    let mut groups = Vec::with_capacity(names.len());
    for (ti, (name, grad)) in names.iter().zip(analytic).enumerate() {
        let mut worst: f64 = 0.0;
        for (off, &a) in grad.iter().enumerate() {
            let up = loss(ti, off, eps)?;
            let down = loss(ti, off, -eps)?;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(a, numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        groups.push(GroupReport {
            name: name.clone(),
            entries: grad.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance: tol,
    })
}

fn check_model(model: &Model, batch: &EncodedBatch, eps: f64, tol: f64, analytic: ParamGrads) -> Result<GradCheckReport> {
    let names: Vec<String> = model.params.entries().into_iter().map(|(n, _)| n).collect();
    let mut params = model.params.clone();
    check_with(&names, &analytic.grads, eps, tol, |ti, off, delta| {
        let orig = {
            let mut ts = params.tensors_mut();
            let v = ts[ti].data()[off];
            ts[ti].data_mut()[off] = v + delta;
            v
        };
        let out = crate::model::forward(&params, &model.config, batch, PassSeed::eval(), false);
        params.tensors_mut()[ti].data_mut()[off] = orig;
        Ok(out?.loss)
    })
}

/// Checks every parameter of `model` on `batch` in evaluation mode: no
/// dropout, channel masks replaced by their expectation.
pub fn grad_check(model: &Model, batch: &EncodedBatch, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad(&model.params, &model.config, batch, PassSeed::eval(), false)?;
    check_model(model, batch, eps, tol, analytic)
}

/// Same check with one backward rule deliberately wrong.
#[doc(hidden)]
pub fn grad_check_with_fault(model: &Model, batch: &EncodedBatch, eps: f64, tol: f64, fault: OpKind) -> Result<GradCheckReport> {
    let (_, analytic) = loss_and_grad_with_fault(&model.params, &model.config, batch, fault)?;
    check_model(model, batch, eps, tol, analytic)
}
