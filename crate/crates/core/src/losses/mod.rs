//! Training objectives: the conditional denoising loss, the contrastive pair
//! penalty on posterior means, class reweighting, and the class-weighted
//! decomposition of the denoising loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetStats, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::forward::corrupt_into;
use crate::net::{GradientVector, NoisePredictor, ParameterVector, Trace};
use crate::schedule::{DiffusionSchedule, TauSchedule};

/// Anything that predicts noise for `(x_t, t, class)`.
pub trait NoiseModel {
    fn dim(&self) -> usize;
    /// Number of real classes; `num_classes()` itself denotes the null class.
    fn num_classes(&self) -> usize;
    fn predict(&self, x_t: &[f64], t: usize, class: usize) -> Vec<f64>;
}

/// A network together with concrete parameters.
#[derive(Clone, Copy)]
pub struct BoundNet<'a> {
    pub net: &'a NoisePredictor,
    pub params: &'a ParameterVector,
}

impl<'a> BoundNet<'a> {
    pub fn new(net: &'a NoisePredictor, params: &'a ParameterVector) -> Result<Self> {
        if params.len() != net.num_params() {
            return Err(Error::DimensionMismatch { expected: net.num_params(), actual: params.len() });
        }
        Ok(Self { net, params })
    }
}

impl NoiseModel for BoundNet<'_> {
    fn dim(&self) -> usize {
        self.net.config().input_dim
    }

    fn num_classes(&self) -> usize {
        self.net.config().num_classes
    }

    fn predict(&self, x_t: &[f64], t: usize, class: usize) -> Vec<f64> {
        let mut trace = Trace::default();
        self.net.forward(self.params, x_t, t, class, &mut trace);
        trace.output().to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PclKind {
    #[serde(rename = "neg_l2")]
    NegativeL2,
    #[serde(rename = "hinge_margin")]
    HingeMargin,
    #[serde(rename = "reciprocal")]
    Reciprocal,
    #[serde(rename = "exponential")]
    Exponential,
}

impl PclKind {
    pub const ALL: [PclKind; 4] = [PclKind::NegativeL2, PclKind::HingeMargin, PclKind::Reciprocal, PclKind::Exponential];

    pub fn name(self) -> &'static str {
        match self {
            PclKind::NegativeL2 => "neg_l2",
            PclKind::HingeMargin => "hinge_margin",
            PclKind::Reciprocal => "reciprocal",
            PclKind::Exponential => "exponential",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown contrastive variant `{s}`")))
    }
}

/// A penalty `h(d)` on the squared distance between two posterior means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PclVariant {
    pub kind: PclKind,
    /// Margin of the max-margin hinge; unused by the other kinds.
    #[serde(default)]
    pub margin: f64,
}

impl PclVariant {
    pub fn new(kind: PclKind) -> Self {
        Self { kind, margin: 0.0 }
    }

    pub fn hinge(margin: f64) -> Self {
        Self { kind: PclKind::HingeMargin, margin }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(invalid(format!("margin must be finite and >= 0, got {}", self.margin)));
        }
        Ok(())
    }

    /// Margin at timestep `t`. Constant for now; the hook exists so a
    /// per-timestep margin can be scheduled without touching callers.
    pub fn margin_at(&self, _t: usize) -> f64 {
        self.margin
    }

    pub fn value(&self, d: f64) -> Result<f64> {
        if !(d >= 0.0) {
            return Err(invalid(format!("distance must be >= 0, got {d}")));
        }
        Ok(self.value_at(d, self.margin))
    }

    fn value_at(&self, d: f64, margin: f64) -> f64 {
        match self.kind {
            PclKind::NegativeL2 => -d,
            PclKind::HingeMargin => (margin - d).max(0.0),
            PclKind::Reciprocal => 1.0 / (1.0 + d),
            PclKind::Exponential => (-d).exp(),
        }
    }

    /// `dh/dd`; the hinge uses slope 0 at the kink.
    fn slope_at(&self, d: f64, margin: f64) -> f64 {
        match self.kind {
            PclKind::NegativeL2 => -1.0,
            PclKind::HingeMargin => {
                if d < margin {
                    -1.0
                } else {
                    0.0
                }
            }
            PclKind::Reciprocal => -1.0 / ((1.0 + d) * (1.0 + d)),
            PclKind::Exponential => -(-d).exp(),
        }
    }
}

/// The two coefficients of the posterior mean: `mu = a * x_t - b * eps_hat`.
pub fn mu_coefficients(sched: &DiffusionSchedule, t: usize) -> (f64, f64) {
    let alpha = sched.alpha(t);
    let a = 1.0 / alpha.sqrt();
    let b = (1.0 - alpha) / (alpha.sqrt() * (1.0 - sched.alpha_bar(t)).sqrt());
    (a, b)
}

/// Posterior mean of `x_{t-1}` given `x_t` and a noise estimate.
pub fn mu_theta(x_t: &[f64], t: usize, eps_hat: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    sched.check_t(t)?;
    if x_t.len() != eps_hat.len() {
        return Err(Error::DimensionMismatch { expected: x_t.len(), actual: eps_hat.len() });
    }
    let (a, b) = mu_coefficients(sched, t);
    Ok(x_t.iter().zip(eps_hat).map(|(x, e)| a * x - b * e).collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn pcl_distance(mu_i: &[f64], mu_j: &[f64]) -> Result<f64> {
    if mu_i.len() != mu_j.len() {
        return Err(Error::DimensionMismatch { expected: mu_i.len(), actual: mu_j.len() });
    }
    Ok(squared_distance(mu_i, mu_j))
}

/// The pair distance written through noise residuals instead of posterior means:
/// `|(x_i - x_j) + c (eps_j - eps_i)|^2 / alpha_t` with `c = (1 - alpha_t) / sqrt(1 - abar_t)`.
pub fn pcl_distance_noise_form(
    x_t_i: &[f64],
    x_t_j: &[f64],
    eps_hat_i: &[f64],
    eps_hat_j: &[f64],
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<f64> {
    sched.check_t(t)?;
    let d = x_t_i.len();
    for v in [x_t_j, eps_hat_i, eps_hat_j] {
        if v.len() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: v.len() });
        }
    }
    let alpha = sched.alpha(t);
    let c = (1.0 - alpha) / (1.0 - sched.alpha_bar(t)).sqrt();
    let sum: f64 = (0..d)
        .map(|k| {
            let r = (x_t_i[k] - x_t_j[k]) + c * (eps_hat_j[k] - eps_hat_i[k]);
            r * r
        })
        .sum();
    Ok(sum / alpha)
}

/// KL divergence between `N(mu_i, sigma^2 I)` and `N(mu_j, sigma^2 I)`.
pub fn pcl_kl_closed_form(mu_i: &[f64], mu_j: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(pcl_distance(mu_i, mu_j)? / (2.0 * sigma * sigma))
}

/// A batch with all of its randomness fixed: per element the clean sample,
/// label, timestep, noise, and whether its denoising term uses the null class.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    dim: usize,
    x0: Vec<f64>,
    labels: Vec<usize>,
    ts: Vec<usize>,
    eps: Vec<f64>,
    uncond: Vec<bool>,
}

impl Batch {
    pub fn new(dim: usize, x0: Vec<f64>, labels: Vec<usize>, ts: Vec<usize>, eps: Vec<f64>, uncond: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if x0.len() != n * dim || eps.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, actual: x0.len().min(eps.len()) });
        }
        if ts.len() != n || uncond.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: ts.len().min(uncond.len()) });
        }
        Ok(Self { dim, x0, labels, ts, eps, uncond })
    }

    /// Draws `size` elements uniformly with replacement from `ds`, each with a
    /// uniform timestep in `1..=T`, standard normal noise, and a null-class
    /// flag with probability `p_uncond`.
    pub fn draw<R: Rng>(ds: &LabeledDataset, size: usize, sched: &DiffusionSchedule, p_uncond: f64, rng: &mut R) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::Empty("dataset".into()));
        }
        let d = ds.dim();
        let mut b = Self { dim: d, x0: Vec::new(), labels: Vec::new(), ts: Vec::new(), eps: Vec::new(), uncond: Vec::new() };
        for _ in 0..size {
            let i = rng.random_range(0..ds.len());
            b.x0.extend_from_slice(ds.sample(i));
            b.labels.push(ds.label(i));
            b.ts.push(rng.random_range(1..=sched.steps()));
            for _ in 0..d {
                b.eps.push(rng.sample(StandardNormal));
            }
            b.uncond.push(rng.random::<f64>() < p_uncond);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self, i: usize) -> &[f64] {
        &self.x0[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eps(&self, i: usize) -> &[f64] {
        &self.eps[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn t(&self, i: usize) -> usize {
        self.ts[i]
    }

    pub fn is_uncond(&self, i: usize) -> bool {
        self.uncond[i]
    }

    /// Same batch with every null-class flag cleared.
    pub fn without_dropout(&self) -> Self {
        Self { uncond: vec![false; self.len()], ..self.clone() }
    }

    /// Number of ordered pairs `(i, j)` with different labels.
    pub fn cross_class_pairs(&self) -> usize {
        let n = self.len();
        (0..n).map(|i| (0..n).filter(|&j| self.labels[j] != self.labels[i]).count()).sum()
    }
}

/// Which objective to evaluate on a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Mean squared noise-prediction error.
    Plain,
    /// Denoising loss plus the pair penalty `tau(t_i) h(d_ij)` averaged over cross-class pairs.
    Contrastive { tau: TauSchedule, variant: PclVariant },
    /// Denoising loss with per-element weights proportional to the inverse class frequency.
    Reweighted { stats: DatasetStats },
    /// `0.5 |theta|^2`, for checking the gradient plumbing.
    ParamL2,
}

/// Value of an objective split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ddpm: f64,
    pub pcl: f64,
    /// Mean of `tau(t_i)` over the batch; zero outside contrastive mode.
    pub tau_mean: f64,
    pub pairs: usize,
}

// Evaluation slots: the denoising term of the anchor, the conditional anchor
// used by the pair term when the denoising term was unconditional, and the
// current partner.
const SLOT_DM: usize = 0;
const SLOT_ANCHOR: usize = 1;
const SLOT_PARTNER: usize = 2;

trait Tape {
    fn eval(&mut self, slot: usize, x_t: &[f64], t: usize, class: usize) -> Vec<f64>;
    fn backprop(&mut self, slot: usize, grad_output: &[f64]);
}

struct ValueTape<'m, M: NoiseModel>(&'m M);

impl<M: NoiseModel> Tape for ValueTape<'_, M> {
    fn eval(&mut self, _slot: usize, x_t: &[f64], t: usize, class: usize) -> Vec<f64> {
        self.0.predict(x_t, t, class)
    }

    fn backprop(&mut self, _slot: usize, _grad_output: &[f64]) {}
}

struct GradTape<'a> {
    net: &'a NoisePredictor,
    params: &'a ParameterVector,
    traces: [Trace; 3],
    grad: Vec<f64>,
}

impl Tape for GradTape<'_> {
    fn eval(&mut self, slot: usize, x_t: &[f64], t: usize, class: usize) -> Vec<f64> {
        self.net.forward(self.params, x_t, t, class, &mut self.traces[slot]);
        self.traces[slot].output().to_vec()
    }

    fn backprop(&mut self, slot: usize, grad_output: &[f64]) {
        self.net.backward(self.params, &self.traces[slot], grad_output, &mut self.grad);
    }
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what()))
    }
}

/// Inverse-frequency element weights, normalized so that the mean weight over
/// the populated classes is one.
pub fn inverse_frequency_weights(stats: &DatasetStats) -> Result<Vec<f64>> {
    let populated: Vec<f64> = stats.weights.iter().copied().filter(|&w| w > 0.0).collect();
    if populated.is_empty() {
        return Err(Error::Empty("class statistics".into()));
    }
    let norm = populated.iter().map(|w| 1.0 / w).sum::<f64>() / populated.len() as f64;
    Ok(stats.weights.iter().map(|&w| if w > 0.0 { (1.0 / w) / norm } else { 0.0 }).collect())
}

fn run<T: Tape>(tape: &mut T, dim: usize, num_classes: usize, sched: &DiffusionSchedule, objective: &Objective, batch: &Batch) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    if batch.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: batch.dim() });
    }
    for i in 0..batch.len() {
        sched.check_t(batch.t(i))?;
        if batch.label(i) >= num_classes {
            return Err(Error::ClassOutOfRange { class: batch.label(i), max: num_classes - 1 });
        }
    }
    let element_weights = match objective {
        Objective::Reweighted { stats } => {
            let w = inverse_frequency_weights(stats)?;
            for i in 0..batch.len() {
                let c = batch.label(i);
                if w.get(c).copied().unwrap_or(0.0) == 0.0 {
                    return Err(Error::EmptyClass(c));
                }
            }
            Some(w)
        }
        Objective::ParamL2 => return Err(invalid("the parameter penalty needs a bound network")),
        _ => None,
    };
    let contrastive = match objective {
        Objective::Contrastive { tau, variant } => {
            tau.validate()?;
            variant.validate()?;
            if tau.is_zero() {
                None
            } else {
                Some((tau, variant))
            }
        }
        _ => None,
    };

    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let pairs = if contrastive.is_some() { batch.cross_class_pairs() } else { 0 };
    if contrastive.is_some() && pairs == 0 {
        log::debug!("single-class batch of {n}: contrastive term is zero");
    }
    let pair_scale = if pairs > 0 { 1.0 / pairs as f64 } else { 0.0 };

    let mut ddpm = 0.0;
    let mut pcl = 0.0;
    let mut tau_sum = 0.0;
    let mut x_t = vec![0.0; dim];
    let mut x_t_j = vec![0.0; dim];
    let mut g_out = vec![0.0; dim];
    let mut g_anchor = vec![0.0; dim];

    for i in 0..n {
        let t = batch.t(i);
        let c = batch.label(i);
        let ab = sched.alpha_bar(t);
        corrupt_into(batch.x0(i), batch.eps(i), ab, &mut x_t);
        let dm_class = if batch.is_uncond(i) { num_classes } else { c };
        let eps_hat = tape.eval(SLOT_DM, &x_t, t, dm_class);
        let w = element_weights.as_ref().map_or(1.0, |w| w[c]);
        let err = squared_distance(batch.eps(i), &eps_hat);
        ddpm += finite(w * err, || format!("denoising term of element {i}"))?;
        for k in 0..dim {
            g_out[k] = -2.0 * w * inv_n * (batch.eps(i)[k] - eps_hat[k]);
        }

        let Some((tau, variant)) = contrastive else {
            tape.backprop(SLOT_DM, &g_out);
            continue;
        };
        let tau_t = tau.at(t as f64)?;
        tau_sum += tau_t;
        let has_partner = (0..n).any(|j| batch.label(j) != c);
        if !has_partner || tau_t == 0.0 {
            tape.backprop(SLOT_DM, &g_out);
            continue;
        }
        let (a, b) = mu_coefficients(sched, t);
        let margin = variant.margin_at(t);
        let anchor_slot = if dm_class == c { SLOT_DM } else { SLOT_ANCHOR };
        let anchor_eps = if anchor_slot == SLOT_DM { eps_hat } else { tape.eval(SLOT_ANCHOR, &x_t, t, c) };
        let mu_i: Vec<f64> = x_t.iter().zip(&anchor_eps).map(|(x, e)| a * x - b * e).collect();
        g_anchor.iter_mut().for_each(|g| *g = 0.0);

        for j in 0..n {
            let cj = batch.label(j);
            if cj == c {
                continue;
            }
            // partner corrupted with the anchor's timestep and noise
            corrupt_into(batch.x0(j), batch.eps(i), ab, &mut x_t_j);
            let partner_eps = tape.eval(SLOT_PARTNER, &x_t_j, t, cj);
            let mut d = 0.0;
            let mut diff = vec![0.0; dim];
            for k in 0..dim {
                let mu_j = a * x_t_j[k] - b * partner_eps[k];
                diff[k] = mu_i[k] - mu_j;
                d += diff[k] * diff[k];
            }
            let term = tau_t * variant.value_at(d, margin);
            pcl += finite(term, || format!("pair term ({i}, {j}) at t = {t}"))?;
            // d(term)/d(eps_hat_i) = tau h'(d) 2 (mu_i - mu_j) (-b), and the negative for the partner
            let coeff = pair_scale * tau_t * variant.slope_at(d, margin) * 2.0 * -b;
            if coeff != 0.0 {
                for k in 0..dim {
                    g_anchor[k] += coeff * diff[k];
                    diff[k] *= -coeff;
                }
                tape.backprop(SLOT_PARTNER, &diff);
            }
        }
        if anchor_slot == SLOT_DM {
            for k in 0..dim {
                g_out[k] += g_anchor[k];
            }
            tape.backprop(SLOT_DM, &g_out);
        } else {
            tape.backprop(SLOT_DM, &g_out);
            tape.backprop(SLOT_ANCHOR, &g_anchor);
        }
    }

    let ddpm = ddpm * inv_n;
    let pcl = pcl * pair_scale;
    let total = ddpm + pcl;
    finite(total, || "total loss".into())?;
    let tau_mean = if contrastive.is_some() { tau_sum * inv_n } else { 0.0 };
    Ok(LossBreakdown { total, ddpm, pcl, tau_mean, pairs })
}

/// Evaluates an objective for any noise model.
pub fn evaluate<M: NoiseModel>(model: &M, sched: &DiffusionSchedule, objective: &Objective, batch: &Batch) -> Result<LossBreakdown> {
    run(&mut ValueTape(model), model.dim(), model.num_classes(), sched, objective, batch)
}

/// Value of an objective for a network, including the parameter penalty.
pub fn objective_value(net: &NoisePredictor, params: &ParameterVector, sched: &DiffusionSchedule, objective: &Objective, batch: &Batch) -> Result<LossBreakdown> {
    if let Objective::ParamL2 = objective {
        let v = 0.5 * params.0.iter().map(|p| p * p).sum::<f64>();
        return Ok(LossBreakdown { total: v, ddpm: v, ..Default::default() });
    }
    evaluate(&BoundNet::new(net, params)?, sched, objective, batch)
}

/// Loss value and its exact gradient with respect to every parameter.
///
/// Gradients flow through both posterior means of every pair.
pub fn loss_and_grad(
    net: &NoisePredictor,
    params: &ParameterVector,
    sched: &DiffusionSchedule,
    objective: &Objective,
    batch: &Batch,
) -> Result<(LossBreakdown, GradientVector)> {
    if params.len() != net.num_params() {
        return Err(Error::DimensionMismatch { expected: net.num_params(), actual: params.len() });
    }
    if let Objective::ParamL2 = objective {
        let value = objective_value(net, params, sched, objective, batch)?;
        return Ok((value, GradientVector(params.0.clone())));
    }
    let mut tape = GradTape { net, params, traces: Default::default(), grad: vec![0.0; net.num_params()] };
    let cfg = net.config();
    let value = run(&mut tape, cfg.input_dim, cfg.num_classes, sched, objective, batch)?;
    if let Some(k) = tape.grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient entry {k}")));
    }
    Ok((value, GradientVector(tape.grad)))
}

/// Mean over the batch of `|eps - eps_theta(x_t, t, c or null)|^2`.
pub fn ddpm_simple_loss<M: NoiseModel>(model: &M, sched: &DiffusionSchedule, batch: &Batch) -> Result<f64> {
    Ok(evaluate(model, sched, &Objective::Plain, batch)?.total)
}

/// Denoising loss plus the averaged contrastive pair penalty.
pub fn overall_batch_loss<M: NoiseModel>(model: &M, sched: &DiffusionSchedule, batch: &Batch, tau: &TauSchedule, variant: &PclVariant) -> Result<f64> {
    Ok(evaluate(model, sched, &Objective::Contrastive { tau: *tau, variant: *variant }, batch)?.total)
}

pub fn reweighted_loss<M: NoiseModel>(model: &M, sched: &DiffusionSchedule, batch: &Batch, stats: &DatasetStats) -> Result<f64> {
    Ok(evaluate(model, sched, &Objective::Reweighted { stats: stats.clone() }, batch)?.total)
}

/// A fixed timestep and noise vector for every element of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAssignment {
    pub ts: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
}

impl NoiseAssignment {
    pub fn draw(ds: &LabeledDataset, sched: &DiffusionSchedule, seed: u64) -> Self {
        let mut r = crate::rng::stream(seed, &[0x6465636f]);
        let mut ts = Vec::with_capacity(ds.len());
        let mut eps = Vec::with_capacity(ds.len());
        for _ in 0..ds.len() {
            ts.push(r.random_range(1..=sched.steps()));
            eps.push((0..ds.dim()).map(|_| r.sample(StandardNormal)).collect());
        }
        Self { ts, eps }
    }
}

/// Both sides of the class-weighted decomposition of the denoising loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecomposition {
    /// Mean per-element loss over the whole dataset.
    pub global: f64,
    pub per_class: Vec<f64>,
    /// Class proportions `N_c / N`.
    pub weights: Vec<f64>,
    /// `sum_c weights[c] * per_class[c]`.
    pub weighted_sum: f64,
}

impl ClassDecomposition {
    pub fn relative_error(&self) -> f64 {
        (self.global - self.weighted_sum).abs() / self.global.abs().max(f64::MIN_POSITIVE)
    }
}

/// Evaluates the conditional denoising loss per element under fixed
/// randomness and returns the global mean alongside its class-weighted form.
pub fn decompose_loss_by_class<M: NoiseModel>(model: &M, sched: &DiffusionSchedule, ds: &LabeledDataset, fixed: &NoiseAssignment) -> Result<ClassDecomposition> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    if fixed.ts.len() != ds.len() || fixed.eps.len() != ds.len() {
        return Err(Error::DimensionMismatch { expected: ds.len(), actual: fixed.ts.len() });
    }
    if ds.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), actual: ds.dim() });
    }
    let stats = crate::data::class_stats(ds)?;
    if let Some(c) = stats.counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(c));
    }
    let mut sums = vec![0.0; ds.num_classes()];
    let mut total = 0.0;
    let mut x_t = vec![0.0; ds.dim()];
    for (i, (x0, c)) in ds.iter().enumerate() {
        let t = fixed.ts[i];
        sched.check_t(t)?;
        if fixed.eps[i].len() != ds.dim() {
            return Err(Error::DimensionMismatch { expected: ds.dim(), actual: fixed.eps[i].len() });
        }
        corrupt_into(x0, &fixed.eps[i], sched.alpha_bar(t), &mut x_t);
        let l = squared_distance(&fixed.eps[i], &model.predict(&x_t, t, c));
        finite(l, || format!("element {i}"))?;
        sums[c] += l;
        total += l;
    }
    let per_class: Vec<f64> = sums.iter().zip(&stats.counts).map(|(s, &n)| s / n as f64).collect();
    let weighted_sum = per_class.iter().zip(&stats.weights).map(|(l, w)| w * l).sum();
    Ok(ClassDecomposition { global: total / ds.len() as f64, per_class, weights: stats.weights, weighted_sum })
}

#[cfg(test)]
mod tests;
