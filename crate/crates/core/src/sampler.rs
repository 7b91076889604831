//! Ancestral sampling with classifier-free guidance.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losses::{mu_coefficients, NoiseModel};
use crate::rng;
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Guidance strength; 0 disables guidance.
    pub omega: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { omega: 0.0, count: 1000, seed: 0 }
    }
}

/// `(1 + omega) eps_cond - omega eps_uncond`.
pub fn cfg_noise(eps_cond: &[f64], eps_uncond: &[f64], omega: f64) -> Result<Vec<f64>> {
    if eps_cond.len() != eps_uncond.len() {
        return Err(Error::DimensionMismatch { expected: eps_cond.len(), actual: eps_uncond.len() });
    }
    Ok(eps_cond.iter().zip(eps_uncond).map(|(c, u)| (1.0 + omega) * c - omega * u).collect())
}

/// Runs one reverse chain from `x_T ~ N(0, I)` down to `x_0`. No noise is added at `t = 1`.
fn chain<M: NoiseModel, R: Rng>(model: &M, sched: &DiffusionSchedule, omega: f64, class: usize, r: &mut R) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut x: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
    for t in (1..=sched.steps()).rev() {
        let cond = model.predict(&x, t, class);
        let eps = if omega == 0.0 { cond } else { cfg_noise(&cond, &model.predict(&x, t, model.num_classes()), omega)? };
        let (a, b) = mu_coefficients(sched, t);
        let sigma = sched.sigma(t);
        for k in 0..d {
            let z: f64 = if t > 1 { r.sample(StandardNormal) } else { 0.0 };
            x[k] = a * x[k] - b * eps[k] + sigma * z;
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sampler state component {k} at t = {t} for class {class}")));
        }
    }
    Ok(x)
}

/// Draws `cfg.count` samples conditioned on `class`. Chain `i` uses an RNG
/// stream derived from `(seed, class, i)`, so output does not depend on thread count.
pub fn ancestral_sample<M: NoiseModel + Sync>(model: &M, sched: &DiffusionSchedule, cfg: &SamplerConfig, class: usize) -> Result<Vec<Vec<f64>>> {
    if class > model.num_classes() {
        return Err(Error::ClassOutOfRange { class, max: model.num_classes() });
    }
    if !cfg.omega.is_finite() {
        return Err(invalid("guidance strength must be finite"));
    }
    (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(cfg.seed, &[0x73616d70, class as u64, i as u64]);
            chain(model, sched, cfg.omega, class, &mut r)
        })
        .collect()
}

/// Posterior-mean noise estimate for data distributed as `N(m, s^2 I)`.
pub fn oracle_gaussian_denoiser(m: &[f64], s: f64, x_t: &[f64], t: usize, sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if !(s >= 0.0) {
        return Err(invalid(format!("data scale must be >= 0, got {s}")));
    }
    if m.len() != x_t.len() {
        return Err(Error::DimensionMismatch { expected: m.len(), actual: x_t.len() });
    }
    let ab = sched.alpha_bar(t);
    if 1.0 - ab <= 0.0 {
        return Err(invalid(format!("degenerate noise level at t = {t}")));
    }
    Ok(gaussian_eps(m, s, x_t, ab))
}

fn gaussian_eps(m: &[f64], s: f64, x_t: &[f64], ab: f64) -> Vec<f64> {
    let sa = ab.sqrt();
    let s2 = s * s;
    let gain = sa * s2 / (ab * s2 + 1.0 - ab);
    let sd = (1.0 - ab).sqrt();
    x_t.iter()
        .zip(m)
        .map(|(x, mi)| {
            let x0 = mi + gain * (x - sa * mi);
            (x - sa * x0) / sd
        })
        .collect()
}

/// The Gaussian oracle as a [`NoiseModel`]. Every class, including null, maps
/// to the same target distribution.
pub struct GaussianOracle<'s> {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub sched: &'s DiffusionSchedule,
}

impl NoiseModel for GaussianOracle<'_> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn num_classes(&self) -> usize {
        1
    }

    fn predict(&self, x_t: &[f64], t: usize, _class: usize) -> Vec<f64> {
        gaussian_eps(&self.mean, self.scale, x_t, self.sched.alpha_bar(t))
    }
}
