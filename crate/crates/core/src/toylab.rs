//! Loss landscapes for a two-component 1-D Gaussian mixture with known
//! weights and a shared known scale, as a function of the two estimated means.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ToyMixtureSpec;
use crate::error::{invalid, Result};
use crate::losses::{PclKind, PclVariant};

/// The imbalanced reference mixture: weights (0.95, 0.05), means (0, 2), unit scale.
pub fn reference_mixture() -> ToyMixtureSpec {
    ToyMixtureSpec::new(vec![0.95, 0.05], vec![vec![0.0], vec![2.0]], vec![1.0, 1.0]).expect("valid mixture")
}

fn toy_params(spec: &ToyMixtureSpec) -> Result<([f64; 2], [f64; 2], f64)> {
    spec.validate()?;
    if spec.num_classes() != 2 || spec.dim() != 1 {
        return Err(invalid("toy landscape needs a 1-D mixture with two components"));
    }
    let sigma = spec.scales[0];
    if !(sigma > 0.0) {
        return Err(invalid(format!("scale must be > 0, got {sigma}")));
    }
    if spec.scales[1] != sigma {
        return Err(invalid("toy landscape needs equal component scales"));
    }
    Ok(([spec.weights[0], spec.weights[1]], [spec.means[0][0], spec.means[1][0]], sigma))
}

/// `sum_k pi_k (m_k - m*_k)^2 / (2 sigma^2)`.
pub fn toy_fit_loss(m1: f64, m2: f64, spec: &ToyMixtureSpec) -> Result<f64> {
    let (pi, truth, sigma) = toy_params(spec)?;
    let s2 = 2.0 * sigma * sigma;
    Ok(pi[0] * (m1 - truth[0]).powi(2) / s2 + pi[1] * (m2 - truth[1]).powi(2) / s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ToyMode {
    Fit,
    /// Fit minus `tau` times the KL between the two components.
    FitNaive,
    /// Fit plus `tau * h((m1 - m2)^2)`.
    FitHinge(PclVariant),
}

impl ToyMode {
    pub fn describe(&self) -> String {
        match self {
            ToyMode::Fit => "fit".into(),
            ToyMode::FitNaive => "fit+naive".into(),
            ToyMode::FitHinge(v) if v.kind == PclKind::HingeMargin => format!("fit+hinge({} margin={})", v.kind.name(), v.margin),
            ToyMode::FitHinge(v) => format!("fit+hinge({})", v.kind.name()),
        }
    }

    /// Accepts `fit`, `naive`, or a contrastive variant name.
    pub fn parse(s: &str, margin: f64) -> Result<Self> {
        match s {
            "fit" => Ok(ToyMode::Fit),
            "naive" | "fit+naive" => Ok(ToyMode::FitNaive),
            other => {
                let kind = PclKind::parse(other.strip_prefix("fit+").unwrap_or(other))?;
                let v = PclVariant { kind, margin };
                v.validate()?;
                Ok(ToyMode::FitHinge(v))
            }
        }
    }

    /// `c` such that the contrastive term behaves like `-c (m1 - m2)^2` far from the diagonal.
    fn repulsion_curvature(&self, tau: f64, sigma: f64) -> f64 {
        match self {
            ToyMode::Fit => 0.0,
            ToyMode::FitNaive => tau / (2.0 * sigma * sigma),
            ToyMode::FitHinge(v) if v.kind == PclKind::NegativeL2 => tau,
            ToyMode::FitHinge(_) => 0.0,
        }
    }
}

pub fn toy_objective(m1: f64, m2: f64, spec: &ToyMixtureSpec, mode: &ToyMode, tau: f64) -> Result<f64> {
    let fit = toy_fit_loss(m1, m2, spec)?;
    let sigma = spec.scales[0];
    let d = (m1 - m2).powi(2);
    Ok(match mode {
        ToyMode::Fit => fit,
        ToyMode::FitNaive => fit - tau * d / (2.0 * sigma * sigma),
        ToyMode::FitHinge(v) => fit + tau * v.value(d)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m1_min: f64,
    pub m1_max: f64,
    pub m2_min: f64,
    pub m2_max: f64,
    pub step: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { m1_min: -1.0, m1_max: 3.0, m2_min: -1.0, m2_max: 3.0, step: 0.05 }
    }
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| lo + i as f64 * step).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(invalid(format!("grid step must be > 0, got {}", self.step)));
        }
        if !(self.m1_max >= self.m1_min) || !(self.m2_max >= self.m2_min) {
            return Err(invalid("grid ranges must satisfy min <= max"));
        }
        Ok(())
    }

    pub fn m1_axis(&self) -> Vec<f64> {
        Self::axis(self.m1_min, self.m1_max, self.step)
    }

    pub fn m2_axis(&self) -> Vec<f64> {
        Self::axis(self.m2_min, self.m2_max, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub grid: GridSpec,
    pub mode: ToyMode,
    pub tau: f64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    /// `values[i * m2.len() + j]` is the loss at `(m1[i], m2[j])`.
    pub values: Vec<f64>,
    /// Cell indices `(i, j)` of the smallest value; the first in row-major order on ties.
    pub argmin: (usize, usize),
}

impl LandscapeGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m2.len() + j]
    }

    pub fn argmin_point(&self) -> (f64, f64) {
        (self.m1[self.argmin.0], self.m2[self.argmin.1])
    }

    pub fn min_value(&self) -> f64 {
        self.value(self.argmin.0, self.argmin.1)
    }

    /// Chebyshev distance of the argmin from `(m1, m2)`, rounded to whole grid cells.
    pub fn cells_from(&self, m1: f64, m2: f64) -> u64 {
        let (a, b) = self.argmin_point();
        ((a - m1).abs().max((b - m2).abs()) / self.grid.step).round() as u64
    }

    /// Header `m1,m2,loss`, rows with `m1` outer, then `# argmin,m1,m2,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m1,m2,loss")?;
        for (i, a) in self.m1.iter().enumerate() {
            for (j, b) in self.m2.iter().enumerate() {
                writeln!(w, "{a},{b},{}", self.value(i, j))?;
            }
        }
        let (a, b) = self.argmin_point();
        writeln!(w, "# argmin,{a},{b},{}", self.min_value())?;
        Ok(())
    }
}

pub fn landscape(spec: &ToyMixtureSpec, mode: &ToyMode, tau: f64, grid: &GridSpec) -> Result<LandscapeGrid> {
    grid.validate()?;
    let (_, truth, _) = toy_params(spec)?;
    if !(tau >= 0.0) {
        return Err(invalid(format!("tau must be >= 0, got {tau}")));
    }
    let half = grid.step / 2.0;
    if truth[0] < grid.m1_min - half || truth[0] > grid.m1_max + half || truth[1] < grid.m2_min - half || truth[1] > grid.m2_max + half {
        return Err(invalid("grid must contain the true means"));
    }
    let m1 = grid.m1_axis();
    let m2 = grid.m2_axis();
    let rows: Vec<Vec<f64>> = m1
        .par_iter()
        .map(|&a| m2.iter().map(|&b| toy_objective(a, b, spec, mode, tau)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    let argmin = (best / m2.len(), best % m2.len());
    Ok(LandscapeGrid { grid: *grid, mode: *mode, tau, m1, m2, values, argmin })
}

/// Direction along which the objective decreases without bound, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnboundedDirection {
    /// Unit vector in `(m1, m2)`.
    pub direction: [f64; 2],
    /// Negative second derivative along `direction`.
    pub curvature: f64,
}

/// Checks the asymptotic quadratic form of the objective: the fit term has
/// Hessian `diag(pi) / sigma^2`, and a repulsive term `-c (m1 - m2)^2` adds
/// `-2c [[1, -1], [-1, 1]]`. Bounded contrastive penalties add nothing.
pub fn unbounded_direction(spec: &ToyMixtureSpec, mode: &ToyMode, tau: f64) -> Result<Option<UnboundedDirection>> {
    let (pi, _, sigma) = toy_params(spec)?;
    let c = mode.repulsion_curvature(tau, sigma);
    let s2 = sigma * sigma;
    let a = pi[0] / s2 - 2.0 * c;
    let d = pi[1] / s2 - 2.0 * c;
    let b = 2.0 * c;
    let mean = (a + d) / 2.0;
    let radius = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    let lowest = mean - radius;
    if lowest >= 0.0 {
        return Ok(None);
    }
    // eigenvector of [[a, b], [b, d]] for `lowest`
    let v = if b.abs() > 0.0 { [b, lowest - a] } else if a <= d { [1.0, 0.0] } else { [0.0, 1.0] };
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    Ok(Some(UnboundedDirection { direction: [v[0] / n, v[1] / n], curvature: lowest }))
}

/// Largest `tau` in `[0, tau_max]` for which the grid argmin stays within one
/// cell of the true means, found by bisection to `tol`. Assumes the argmin
/// drifts monotonically with `tau`.
pub fn preserving_tau_threshold(spec: &ToyMixtureSpec, mode: &ToyMode, grid: &GridSpec, tau_max: f64, tol: f64) -> Result<f64> {
    let (_, truth, _) = toy_params(spec)?;
    let keeps = |tau: f64| -> Result<bool> { Ok(landscape(spec, mode, tau, grid)?.cells_from(truth[0], truth[1]) <= 1) };
    if keeps(tau_max)? {
        return Ok(tau_max);
    }
    if !keeps(0.0)? {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, tau_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if keeps(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exp() -> ToyMode {
        ToyMode::FitHinge(PclVariant::new(PclKind::Exponential))
    }

    #[test]
    fn fit_loss_values() {
        let spec = reference_mixture();
        assert_eq!(toy_fit_loss(0.0, 2.0, &spec).unwrap(), 0.0);
        assert!((toy_fit_loss(1.0, 2.0, &spec).unwrap() - 0.475).abs() < 1e-15);
        let move_m1 = toy_fit_loss(0.3, 2.0, &spec).unwrap();
        let move_m2 = toy_fit_loss(0.0, 2.3, &spec).unwrap();
        assert!((move_m1 / move_m2 - 0.95 / 0.05).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_mixtures() {
        let unequal = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![2.0]], vec![1.0, 2.0]).unwrap();
        assert!(toy_fit_loss(0.0, 0.0, &unequal).is_err());
        let three = ToyMixtureSpec::new(vec![0.4, 0.3, 0.3], vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0; 3]).unwrap();
        assert!(toy_fit_loss(0.0, 0.0, &three).is_err());
        let bad_step = GridSpec { step: 0.0, ..GridSpec::default() };
        assert!(landscape(&reference_mixture(), &ToyMode::Fit, 0.0, &bad_step).is_err());
    }

    #[test]
    fn objective_modes() {
        let spec = reference_mixture();
        assert_eq!(toy_objective(0.7, 1.1, &spec, &ToyMode::Fit, 9.0).unwrap(), toy_fit_loss(0.7, 1.1, &spec).unwrap());
        assert!(toy_objective(0.0, 2.0, &spec, &ToyMode::FitNaive, 0.5).unwrap() < 0.0);
        assert_eq!(toy_objective(0.0, 2.0, &spec, &ToyMode::FitHinge(PclVariant::hinge(2.0)), 0.5).unwrap(), 0.0);
        assert!(ToyMode::parse("bogus", 0.0).is_err());
        assert_eq!(ToyMode::parse("exponential", 0.0).unwrap(), exp());
    }

    #[test]
    fn grid_shape_and_csv() {
        let g = landscape(&reference_mixture(), &ToyMode::Fit, 0.0, &GridSpec::default()).unwrap();
        assert_eq!((g.m1.len(), g.m2.len()), (81, 81));
        assert_eq!(g.values.len(), 81 * 81);
        assert_eq!(g.argmin, (20, 60));
        assert_eq!(g.min_value(), g.values.iter().cloned().fold(f64::INFINITY, f64::min));
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "m1,m2,loss");
        assert_eq!(lines.len(), 81 * 81 + 2);
        assert!(lines.last().unwrap().starts_with("# argmin,0,2,"));
    }

    #[test]
    fn naive_objective_is_unbounded() {
        let spec = reference_mixture();
        let dir = unbounded_direction(&spec, &ToyMode::FitNaive, 0.5).unwrap().expect("unbounded");
        // the fit term is nearly flat in m2, so the escape direction is mostly along m2
        assert!(dir.direction[1].abs() > dir.direction[0].abs());
        assert!(dir.curvature < 0.0);
        // below pi1 pi2 / (pi1 + pi2) the repulsion cannot beat the fit curvature
        assert!(unbounded_direction(&spec, &ToyMode::FitNaive, 0.047).unwrap().is_none());
        assert!(unbounded_direction(&spec, &ToyMode::FitNaive, 0.048).unwrap().is_some());
        assert!(unbounded_direction(&spec, &exp(), 100.0).unwrap().is_none());
        assert!(unbounded_direction(&spec, &ToyMode::FitHinge(PclVariant::new(PclKind::NegativeL2)), 0.5).unwrap().is_some());
    }

    #[test]
    fn threshold_brackets_the_drift() {
        let spec = reference_mixture();
        let grid = GridSpec::default();
        let t = preserving_tau_threshold(&spec, &exp(), &grid, 10.0, 1e-4).unwrap();
        assert!(t > 0.0 && t < 10.0);
        assert!(landscape(&spec, &exp(), t, &grid).unwrap().cells_from(0.0, 2.0) <= 1);
        assert!(landscape(&spec, &exp(), t + 2e-4, &grid).unwrap().cells_from(0.0, 2.0) > 1);
        let hinge = ToyMode::FitHinge(PclVariant::hinge(2.0));
        assert_eq!(preserving_tau_threshold(&spec, &hinge, &grid, 10.0, 1e-4).unwrap(), 10.0);
    }

    proptest! {
        #[test]
        fn hinge_value_at_truth_is_bounded(tau in 0.0f64..5.0, margin in 0.0f64..6.0, k in 0usize..4) {
            let spec = reference_mixture();
            let v = PclVariant { kind: PclKind::ALL[k], margin };
            let at_truth = toy_objective(0.0, 2.0, &spec, &ToyMode::FitHinge(v), tau).unwrap();
            prop_assert!(at_truth <= tau * v.value(4.0).unwrap() + 1e-12);
        }
    }
}
