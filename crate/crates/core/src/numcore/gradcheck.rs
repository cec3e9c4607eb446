//! Central finite-difference check of reverse-mode gradients.

use serde::Serialize;

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

/// A scalar objective over a parameter store.
pub trait Objective {
    fn loss(&self, params: &ParamStore) -> Result<f64>;
    fn loss_and_grads(&self, params: &ParamStore) -> Result<(f64, Grads)>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss at {what}")))
    }
}

/// Central-difference gradient `(L(theta+eps) - L(theta-eps)) / 2eps` for
/// every parameter entry. `params` is restored bitwise before returning.
pub fn numeric_grads(obj: &impl Objective, params: &mut ParamStore, epsilon: f64) -> Result<Grads> {
    let mut out = params.zero_grads();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + epsilon;
            let plus = obj.loss(params);
            params.get_mut(id).data_mut()[k] = orig - epsilon;
            let minus = obj.loss(params);
            params.get_mut(id).data_mut()[k] = orig;
            let plus = finite(plus?, params.name(id))?;
            let minus = finite(minus?, params.name(id))?;
            out.get_mut(id).data_mut()[k] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(out)
}

/// Compares two gradient sets entry by entry.
pub fn compare_grads(params: &ParamStore, analytic: &Grads, numeric: &Grads) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    for id in params.ids() {
        for (k, (&a, &n)) in analytic.get(id).data().iter().zip(numeric.get(id).data()).enumerate() {
            report.entries += 1;
            let e = relative_error(a, n);
            if e > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = e;
                report.worst_param = params.name(id).to_string();
                report.worst_index = k;
                report.analytic = a;
                report.numeric = n;
            }
        }
    }
    report
}

pub fn grad_check(obj: &impl Objective, params: &mut ParamStore, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-7, 1e-4]")));
    }
    let (loss, analytic) = obj.loss_and_grads(params)?;
    finite(loss, "base point")?;
    let numeric = numeric_grads(obj, params, epsilon)?;
    Ok(compare_grads(params, &analytic, &numeric))
}
