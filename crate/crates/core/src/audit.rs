//! Finite-difference audit of the analytic loss gradients.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{generate_gmm_dataset, DatasetStats, ToyMixtureSpec};
use crate::error::Result;
use crate::losses::{loss_and_grad, objective_value, Batch, Objective, PclKind, PclVariant};
use crate::net::{Activation, NetworkConfig, NoisePredictor, ParameterVector};
use crate::rng;
use crate::schedule::{DiffusionSchedule, TauSchedule};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

/// 2-D input, two classes, 16x16 hidden: 578 parameters.
pub fn audit_network() -> NetworkConfig {
    NetworkConfig { input_dim: 2, hidden: vec![16, 16], time_features: 4, num_classes: 2, embed_dim: 4, activation: Activation::Silu }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub objective: String,
    pub num_params: usize,
    /// `|g - g_fd| / |g_fd|` in the Euclidean norm.
    pub relative_error: f64,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.relative_error <= GRADIENT_TOLERANCE
    }
}

pub fn finite_difference_gradient(
    net: &NoisePredictor,
    params: &ParameterVector,
    sched: &DiffusionSchedule,
    objective: &Objective,
    batch: &Batch,
    h: f64,
) -> Result<Vec<f64>> {
    let mut p = params.clone();
    let mut out = Vec::with_capacity(p.len());
    for k in 0..p.len() {
        let orig = p.0[k];
        p.0[k] = orig + h;
        let fp = objective_value(net, &p, sched, objective, batch)?.total;
        p.0[k] = orig - h;
        let fm = objective_value(net, &p, sched, objective, batch)?.total;
        p.0[k] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

/// A four-element batch with both classes and one dropped condition.
fn audit_batch(cfg: &NetworkConfig, sched: &DiffusionSchedule, seed: u64) -> Result<Batch> {
    let means = (0..2).map(|c| (0..cfg.input_dim).map(|j| if j == 0 { 2.0 * c as f64 } else { 0.0 }).collect()).collect();
    let ds = generate_gmm_dataset(&ToyMixtureSpec::new(vec![0.5, 0.5], means, vec![1.0, 0.5])?, &[2, 2], seed)?;
    let mut r = rng::stream(seed, &[0x6763]);
    let mut x0 = Vec::new();
    let mut labels = Vec::new();
    for i in 0..ds.len() {
        x0.extend_from_slice(ds.sample(i));
        labels.push(ds.label(i));
    }
    let ts = (0..4).map(|_| r.random_range(1..=sched.steps())).collect();
    let eps = (0..4 * cfg.input_dim).map(|_| r.sample(StandardNormal)).collect();
    Batch::new(cfg.input_dim, x0, labels, ts, eps, vec![false, true, false, false])
}

/// Checks plain, reweighted and every contrastive variant on one batch.
pub fn gradient_audit(cfg: &NetworkConfig, seed: u64) -> Result<Vec<GradientCheck>> {
    let net = NoisePredictor::new(cfg.clone())?;
    let sched = DiffusionSchedule::standard();
    let params = net.init(seed);
    let batch = audit_batch(cfg, &sched, seed)?;
    let stats = DatasetStats::from_counts(&[200, 2])?;
    let tau = TauSchedule::exponential(2.0, 300.0);
    let mut objectives = vec![("plain".to_string(), Objective::Plain), ("reweighted".to_string(), Objective::Reweighted { stats })];
    for kind in PclKind::ALL {
        // a wide margin keeps the hinge active
        let variant = PclVariant { kind, margin: 50.0 };
        objectives.push((format!("diffrop/{}", kind.name()), Objective::Contrastive { tau, variant }));
    }
    objectives
        .into_iter()
        .map(|(name, obj)| {
            let (_, grad) = loss_and_grad(&net, &params, &sched, &obj, &batch)?;
            let fd = finite_difference_gradient(&net, &params, &sched, &obj, &batch, 1e-6)?;
            Ok(GradientCheck { objective: name, num_params: params.len(), relative_error: relative_error(&grad.0, &fd) })
        })
        .collect()
}
