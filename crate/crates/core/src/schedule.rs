//! Diffusion variance schedule and the timestep-dependent regularizer weight.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How the reverse-step noise scale is derived from the forward schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// `sigma_t^2 = beta_t`.
    #[default]
    Beta,
    /// `sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t`, the forward posterior variance.
    TildeBeta,
}

/// Precomputed linear variance schedule over timesteps `1..=T`.
///
/// All arrays are stored zero-based; use the accessors, which take the
/// one-based timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_mode: SigmaMode,
}

impl DiffusionSchedule {
    /// Linearly spaced betas from `beta1` to `beta_t`, both endpoints included.
    pub fn linear(beta1: f64, beta_t: f64, steps: usize, sigma_mode: SigmaMode) -> Result<Self> {
        if !(beta1 > 0.0) {
            return Err(invalid(format!("beta1 must be > 0, got {beta1}")));
        }
        if !(beta_t < 1.0) {
            return Err(invalid(format!("betaT must be < 1, got {beta_t}")));
        }
        if beta1 > beta_t {
            return Err(invalid(format!("beta1 {beta1} exceeds betaT {beta_t}")));
        }
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta1
                } else {
                    beta1 + (beta_t - beta1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(betas, sigma_mode))
    }

    /// The schedule used throughout the reference experiments: 1e-4 to 0.02 over 1000 steps.
    pub fn standard() -> Self {
        Self::linear(1e-4, 0.02, 1000, SigmaMode::Beta).expect("valid constants")
    }

    /// The standard endpoints rescaled by `1000 / steps`, so shorter chains
    /// still end close to pure noise.
    pub fn standard_scaled(steps: usize, sigma_mode: SigmaMode) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("schedule needs at least one step"));
        }
        let scale = 1000.0 / steps as f64;
        Self::linear(1e-4 * scale, 0.02 * scale, steps, sigma_mode)
    }

    fn from_betas(betas: Vec<f64>, sigma_mode: SigmaMode) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = (0..betas.len())
            .map(|i| match sigma_mode {
                SigmaMode::Beta => betas[i].sqrt(),
                SigmaMode::TildeBeta => {
                    let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                    ((1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]).sqrt()
                }
            })
            .collect();
        Self { betas, alphas, alpha_bars, sigmas, sigma_mode }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// Panics when `t` is outside `1..=T`; callers validate with [`check_t`](Self::check_t).
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

/// Serializable description of a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta1: f64,
    pub beta_t: f64,
    pub steps: usize,
    #[serde(default)]
    pub sigma_mode: SigmaMode,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { beta1: 1e-4, beta_t: 0.02, steps: 1000, sigma_mode: SigmaMode::Beta }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.beta1, self.beta_t, self.steps, self.sigma_mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauKind {
    Constant,
    ExponentialDecay,
}

/// Weight of the contrastive term as a function of the timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub kind: TauKind,
    pub tau0: f64,
    /// Decay constant in timesteps; ignored for [`TauKind::Constant`].
    pub temperature: f64,
}

impl TauSchedule {
    pub fn constant(tau0: f64) -> Self {
        Self { kind: TauKind::Constant, tau0, temperature: 1.0 }
    }

    pub fn exponential(tau0: f64, temperature: f64) -> Self {
        Self { kind: TauKind::ExponentialDecay, tau0, temperature }
    }

    /// Default for experiments: `tau0 = 0.1` decaying with temperature `T / 4`.
    pub fn default_for(steps: usize) -> Self {
        Self::exponential(0.1, steps as f64 / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 >= 0.0) || !self.tau0.is_finite() {
            return Err(invalid(format!("tau0 must be finite and >= 0, got {}", self.tau0)));
        }
        if self.kind == TauKind::ExponentialDecay && !(self.temperature > 0.0) {
            return Err(invalid(format!("tau temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid(format!("tau requested at negative timestep {t}")));
        }
        Ok(match self.kind {
            TauKind::Constant => self.tau0,
            TauKind::ExponentialDecay => self.tau0 * (-t / self.temperature).exp(),
        })
    }

    /// True when the schedule is identically zero, i.e. the regularizer is off.
    pub fn is_zero(&self) -> bool {
        self.tau0 == 0.0
    }
}
