//! Closed-form forward corruption `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`.

use crate::error::{Error, Result};
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub eps: Vec<f64>,
    /// Index of `x_0` in its dataset, when known.
    pub source: Option<usize>,
}

pub fn q_sample(x0: &[f64], t: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<NoisySample> {
    sched.check_t(t)?;
    if x0.len() != eps.len() {
        return Err(Error::DimensionMismatch { expected: x0.len(), actual: eps.len() });
    }
    if eps.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("forward noise".into()));
    }
    let mut x_t = vec![0.0; x0.len()];
    corrupt_into(x0, eps, sched.alpha_bar(t), &mut x_t);
    Ok(NoisySample { x_t, t, eps: eps.to_vec(), source: None })
}

/// Unchecked kernel shared by the losses: writes the corrupted sample for a given `abar`.
pub(crate) fn corrupt_into(x0: &[f64], eps: &[f64], alpha_bar: f64, out: &mut [f64]) {
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    for ((o, x), e) in out.iter_mut().zip(x0).zip(eps) {
        *o = a * x + s * e;
    }
}
