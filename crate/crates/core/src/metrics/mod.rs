//! Evaluation of generated samples in raw data space.

mod frechet;
mod knn;
mod overlap;
mod prd;
mod probe;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use frechet::{frechet_gaussian, frechet_moments, GaussianMoments};
pub use knn::knn_precision_recall;
pub use overlap::overlap_rate;
pub use prd::{cluster_histograms, f_beta, kmeans, max_f_beta, prd_curve, prd_f_beta};
pub use probe::{linear_probe, ProbeConfig, ProbeReport};

use crate::data::{DatasetStats, LabeledDataset, ToyMixtureSpec};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub knn_k: usize,
    /// Clusters per class for the PRD histograms.
    pub clusters_per_class: usize,
    pub seed: u64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { knn_k: 5, clusters_per_class: 20, seed: 0 }
    }
}

/// The two F-beta thresholds: recall-leaning 8 and precision-leaning 1/8.
pub const F_BETAS: [f64; 2] = [8.0, 0.125];

impl MetricsConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.knn_k == 0 {
            return Err(invalid("K must be >= 1"));
        }
        if self.clusters_per_class == 0 || self.clusters_per_class * num_classes < num_classes {
            return Err(invalid("cluster count must be at least the class count"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interval {
    Many,
    Med,
    Few,
}

impl Interval {
    pub fn name(self) -> &'static str {
        match self {
            Interval::Many => "many",
            Interval::Med => "med",
            Interval::Few => "few",
        }
    }
}

/// Assigns each class to many/med/few by descending training count (ties by
/// index): `C/3`, `C - 2 C/3`, `C/3` classes. Fewer than 3 classes are all "many".
pub fn interval_split(stats: &DatasetStats) -> Vec<Interval> {
    let c = stats.counts.len();
    if c < 3 {
        return vec![Interval::Many; c];
    }
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| stats.counts[b].cmp(&stats.counts[a]).then(a.cmp(&b)));
    let third = c / 3;
    let mut out = vec![Interval::Many; c];
    for (rank, &class) in order.iter().enumerate() {
        out[class] = if rank < third {
            Interval::Many
        } else if rank < c - third {
            Interval::Med
        } else {
            Interval::Few
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSummary {
    pub interval: Interval,
    pub classes: usize,
    pub mean_frechet: f64,
    /// Mean off-diagonal mass of the overlap rows in this interval.
    pub mean_overlap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frechet_global: f64,
    /// Against the analytic class component `N(m_c, s_c^2 I)`.
    pub frechet_per_class: Vec<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f_8: f64,
    pub f_1_8: f64,
    pub overlap: Vec<Vec<f64>>,
    pub intervals: Vec<IntervalSummary>,
    pub probe: Option<ProbeReport>,
}

/// Scores class-conditional samples against a class-balanced reference set
/// drawn from the true mixture.
pub fn evaluate_samples(
    generated: &LabeledDataset,
    reference: &LabeledDataset,
    mixture: &ToyMixtureSpec,
    train_stats: &DatasetStats,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    let k = mixture.num_classes();
    cfg.validate(k)?;
    if generated.dim() != mixture.dim() || reference.dim() != mixture.dim() {
        return Err(Error::DimensionMismatch { expected: mixture.dim(), actual: generated.dim() });
    }
    let gen_all: Vec<Vec<f64>> = generated.iter().map(|(x, _)| x.to_vec()).collect();
    let ref_all: Vec<Vec<f64>> = reference.iter().map(|(x, _)| x.to_vec()).collect();
    let frechet_global = frechet_moments(&GaussianMoments::from_samples(&gen_all)?, &GaussianMoments::from_samples(&ref_all)?)?;
    let per_class: Vec<Vec<Vec<f64>>> = (0..k).map(|c| generated.class_samples(c)).collect();
    let frechet_per_class = per_class
        .iter()
        .enumerate()
        .map(|(c, xs)| {
            let truth = GaussianMoments::isotropic(&mixture.means[c], mixture.scales[c]);
            frechet_moments(&GaussianMoments::from_samples(xs)?, &truth)
        })
        .collect::<Result<Vec<_>>>()?;
    let (precision, recall) = knn_precision_recall(&ref_all, &gen_all, cfg.knn_k)?;
    let f = prd_f_beta(&ref_all, &gen_all, cfg.clusters_per_class * k, &F_BETAS, cfg.seed)?;
    let overlap = overlap_rate(&per_class, mixture)?;

    let split = interval_split(train_stats);
    let intervals = [Interval::Many, Interval::Med, Interval::Few]
        .into_iter()
        .filter_map(|iv| {
            let members: Vec<usize> = (0..k).filter(|&c| split.get(c) == Some(&iv)).collect();
            if members.is_empty() {
                return None;
            }
            let m = members.len() as f64;
            Some(IntervalSummary {
                interval: iv,
                classes: members.len(),
                mean_frechet: members.iter().map(|&c| frechet_per_class[c]).sum::<f64>() / m,
                mean_overlap: members.iter().map(|&c| 1.0 - overlap[c][c]).sum::<f64>() / m,
            })
        })
        .collect();

    Ok(MetricsReport { frechet_global, frechet_per_class, precision, recall, f_8: f[0], f_1_8: f[1], overlap, intervals, probe: None })
}

impl MetricsReport {
    /// Flat `key,value` CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "key,value")?;
        writeln!(w, "frechet_global,{}", self.frechet_global)?;
        for (c, v) in self.frechet_per_class.iter().enumerate() {
            writeln!(w, "frechet_class_{c},{v}")?;
        }
        writeln!(w, "precision,{}", self.precision)?;
        writeln!(w, "recall,{}", self.recall)?;
        writeln!(w, "f_8,{}", self.f_8)?;
        writeln!(w, "f_1_8,{}", self.f_1_8)?;
        for iv in &self.intervals {
            let n = iv.interval.name();
            writeln!(w, "{n}_classes,{}", iv.classes)?;
            writeln!(w, "{n}_frechet,{}", iv.mean_frechet)?;
            writeln!(w, "{n}_overlap,{}", iv.mean_overlap)?;
        }
        if let Some(p) = &self.probe {
            writeln!(w, "probe_accuracy,{}", p.accuracy)?;
            writeln!(w, "probe_macro_precision,{}", p.macro_precision)?;
            writeln!(w, "probe_macro_recall,{}", p.macro_recall)?;
        }
        Ok(())
    }

    /// Square overlap matrix: header `from,to_0,...`, one row per conditioning class.
    pub fn write_overlap_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write_overlap_matrix(&mut w, &self.overlap)
    }
}

pub fn write_overlap_matrix<W: Write>(mut w: W, overlap: &[Vec<f64>]) -> Result<()> {
    write!(w, "from")?;
    for c in 0..overlap.len() {
        write!(w, ",to_{c}")?;
    }
    writeln!(w)?;
    for (c, row) in overlap.iter().enumerate() {
        write!(w, "{c}")?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
