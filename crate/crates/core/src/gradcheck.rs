//! Central-difference gradient oracle.
//!
//! Compares analytic gradients (reverse-mode accumulation into a
//! [`ParameterStore`]) against (loss(θ+ε) − loss(θ−ε)) / 2ε for every
//! parameter entry. This is the ground truth the rest of the test suite
//! leans on; it must only run in f64.

use crate::error::{Error, Result};
use crate::params::ParameterStore;
use crate::scalar::{Dtype, Scalar};

/// One entry whose relative error exceeded the tolerance.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and entry where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Entries over tolerance.
    pub failing: Vec<GradMismatch>,
    pub entries_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }

    /// Distinct parameter names with at least one failing entry.
    pub fn failing_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.failing.iter().map(|m| m.name.clone()).collect();
        names.dedup();
        names
    }
}

/// Check every parameter entry of `params` against central differences.
///
/// `loss_fn(params, accumulate)` must evaluate the loss; when `accumulate`
/// is true it must also fold analytic gradients into the store. It must be
/// deterministic — the oracle evaluates it twice on identical state and
/// refuses to run if the values differ.
pub fn grad_check<T, F>(
    mut loss_fn: F,
    params: &mut ParameterStore<T>,
    eps: T,
    tol: T,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut ParameterStore<T>, bool) -> Result<T>,
{
    if T::DTYPE != Dtype::F64 {
        return Err(Error::Precondition(
            "gradient checking requires 64-bit scalars".into(),
        ));
    }
    if eps <= T::zero() {
        return Err(Error::Precondition(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }

    params.zero_grads();
    let base = loss_fn(params, true)?;
    let repeat = loss_fn(params, false)?;
    if base != repeat {
        return Err(Error::OracleInvalid(format!(
            "loss is not deterministic: {base} vs {repeat} on identical parameters"
        )));
    }
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {base}")));
    }

    let analytic: Vec<(String, Vec<T>)> = params
        .names()
        .into_iter()
        .map(|n| {
            let g = params.grad(&n).expect("named parameter has grad").clone();
            (n, g.data().to_vec())
        })
        .collect();

    let floor = 1e-8_f64;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        failing: Vec::new(),
        entries_checked: 0,
    };
    let tol = tol.to_f64_lossy();

    for (name, grads) in &analytic {
        for (index, &a) in grads.iter().enumerate() {
            let probe = |params: &mut ParameterStore<T>,
                         loss_fn: &mut F,
                         step: T|
             -> Result<f64> {
                params.nudge(name, index, step)?;
                let plus = loss_fn(params, false)?;
                params.nudge(name, index, -(step + step))?;
                let minus = loss_fn(params, false)?;
                params.nudge(name, index, step)?;
                Ok((plus - minus).to_f64_lossy() / (2.0 * step.to_f64_lossy()))
            };
            let a = a.to_f64_lossy();
            let rel_of = |numeric: f64| {
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
            };
            // Near-zero gradients (a relu unit dead for every row, a
            // saturated softmax) measure nothing but loss roundoff at the
            // base step; roundoff shrinks linearly with a wider step while
            // a systematically wrong analytic gradient disagrees at every
            // step size. Keep the best-conditioned estimate.
            let mut numeric = probe(params, &mut loss_fn, eps)?;
            let mut rel = rel_of(numeric);
            for widen in [10.0, 100.0] {
                if rel <= tol {
                    break;
                }
                let wide = probe(params, &mut loss_fn, eps * T::cast(widen))?;
                if rel_of(wide) < rel {
                    numeric = wide;
                    rel = rel_of(wide);
                }
            }
            report.entries_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), index));
            }
            if rel > tol {
                report.failing.push(GradMismatch {
                    name: name.clone(),
                    index,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
