use super::params::{ParamId, ParamStore};
use crate::error::Result;

/// Something with parameters, a scalar loss, and an analytic gradient.
pub trait Objective {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn loss(&self) -> Result<f64>;
    /// Overwrites every gradient buffer with `dL/dθ` and returns `L`.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

/// Per-parameter outcome of a finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    /// `|a - n| / max(|a|, |n|, 1e-8)` over the parameter's whole gradient
    /// (Euclidean norms).
    pub relative_error: f64,
    /// Same quantity for the worst single element; dominated by roundoff
    /// wherever an element's true gradient is below ~1e-9.
    pub max_elementwise_error: f64,
    pub grad_norm: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences against the analytic gradient for every element of
/// every parameter.
pub fn grad_check_detailed<O: Objective>(obj: &mut O, eps: f64) -> Result<Vec<GradCheckEntry>> {
    obj.loss_and_grad()?;
    let ids: Vec<ParamId> = obj.params().ids().collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let analytic = obj.params().grad(id).clone();
        let (mut diff2, mut a2, mut n2, mut worst) = (0.0, 0.0, 0.0, 0.0f64);
        for (j, &a) in analytic.data().iter().enumerate() {
            let orig = obj.params().value(id).data()[j];
            obj.params_mut().value_mut(id).data_mut()[j] = orig + eps;
            let plus = obj.loss()?;
            obj.params_mut().value_mut(id).data_mut()[j] = orig - eps;
            let minus = obj.loss()?;
            obj.params_mut().value_mut(id).data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * eps);
            diff2 += (a - n) * (a - n);
            a2 += a * a;
            n2 += n * n;
            worst = worst.max(relative_error(a, n));
        }
        let (a, n) = (a2.sqrt(), n2.sqrt());
        report.push(GradCheckEntry {
            name: obj.params().name(id).to_string(),
            relative_error: diff2.sqrt() / a.max(n).max(1e-8),
            max_elementwise_error: worst,
            grad_norm: a,
        });
    }
    Ok(report)
}

/// Largest per-parameter relative error.
pub fn grad_check<O: Objective>(obj: &mut O, eps: f64) -> Result<f64> {
    Ok(grad_check_detailed(obj, eps)?.iter().map(|e| e.relative_error).fold(0.0, f64::max))
}
