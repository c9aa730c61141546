//! Central finite-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{LtvError, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Use the five-point central stencil instead of the three-point one.
    pub fourth_order: bool,
    /// Refuse to run on models with more trainable scalars than this.
    pub max_params: usize,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero by construction are not judged against roundoff.
    pub abs_floor: f64,
    /// Extra attempts at `eps/10`, `eps/100`, ... for scalars whose first
    /// estimate disagrees. A ReLU or absolute-value kink inside the stencil
    /// corrupts one step size but not a smaller one; a wrong gradient stays
    /// wrong at every step.
    pub refinements: usize,
    /// Relative error that triggers a refinement.
    pub refine_above: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            fourth_order: false,
            max_params: 5_000,
            abs_floor: 1e-6,
            refinements: 0,
            refine_above: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients against `(L(θ+ε) − L(θ−ε)) / 2ε` for every
/// trainable scalar.
///
/// `analytic` must fill the gradient buffers of `params` (they are zeroed
/// first); `loss` evaluates the objective at the current parameter values.
/// The relative error uses the denominator `max(|a|, |n|, abs_floor)`.
pub fn grad_check<A, L>(
    params: &mut ParamSet,
    mut analytic: A,
    mut loss: L,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    A: FnMut(&mut ParamSet) -> Result<()>,
    L: FnMut(&ParamSet) -> Result<f64>,
{
    let n = params.num_trainable();
    if n > opts.max_params {
        return Err(LtvError::config(format!(
            "gradient check capped at {} parameters, model has {n}",
            opts.max_params
        )));
    }
    params.zero_grads();
    analytic(params)?;
    let grads: Vec<(_, Vec<f64>)> = params
        .ids()
        .filter(|&id| params.is_trainable(id))
        .map(|id| (id, params.grad(id).data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (id, g) in grads {
        for (j, &a) in g.iter().enumerate() {
            let orig = params.value(id).data()[j];
            let mut at = |offset: f64, params: &mut ParamSet| -> Result<f64> {
                params.value_mut(id).data_mut()[j] = orig + offset;
                let v = loss(params)?;
                if !v.is_finite() {
                    return Err(LtvError::non_finite(
                        "grad_check",
                        format!("loss not finite while perturbing {}[{j}]", params.name(id)),
                    ));
                }
                Ok(v)
            };
            let mut numeric = 0.0;
            let mut rel = f64::INFINITY;
            let mut h = opts.eps;
            for _ in 0..=opts.refinements {
                let n = if opts.fourth_order {
                    let (p2, p1) = (at(2.0 * h, params)?, at(h, params)?);
                    let (m1, m2) = (at(-h, params)?, at(-2.0 * h, params)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
                } else {
                    (at(h, params)? - at(-h, params)?) / (2.0 * h)
                };
                let denom = a.abs().max(n.abs()).max(opts.abs_floor);
                let r = (a - n).abs() / denom;
                if r < rel {
                    rel = r;
                    numeric = n;
                }
                if rel <= opts.refine_above {
                    break;
                }
                h /= 10.0;
            }
            params.value_mut(id).data_mut()[j] = orig;
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    params.zero_grads();
    Ok(report)
}
