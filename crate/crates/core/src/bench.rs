//! Plain vs reweighted vs contrastive training on the same imbalanced data,
//! scored by tail-to-head overlap and per-class Frechet distance.

use std::io::Write;

use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{invalid, Result};
use crate::experiment::{sample_classes, train_in_memory};
use crate::metrics::{frechet_moments, overlap_rate, GaussianMoments};
use crate::trainer::LossMode;

pub const MODES: [LossMode; 3] = [LossMode::Plain, LossMode::Reweighted, LossMode::Diffrop];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub mode: LossMode,
    pub seed: u64,
    pub overlap_tail_to_head: f64,
    pub frechet_tail: f64,
    pub frechet_head: f64,
    pub final_ddpm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSummary {
    pub mode: LossMode,
    pub overlap_tail_to_head: f64,
    pub frechet_tail: f64,
    pub frechet_head: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub head: usize,
    pub tail: usize,
    pub runs: Vec<BenchmarkRun>,
    /// Medians over seeds, one per mode in `MODES` order.
    pub summaries: Vec<ModeSummary>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn relative_change(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        value / baseline - 1.0
    }
}

impl BenchmarkReport {
    pub fn summary(&self, mode: LossMode) -> &ModeSummary {
        self.summaries.iter().find(|s| s.mode == mode).expect("every mode is summarized")
    }

    /// Relative decrease of the median tail-to-head overlap against plain training.
    pub fn overlap_reduction(&self, mode: LossMode) -> f64 {
        -relative_change(self.summary(mode).overlap_tail_to_head, self.summary(LossMode::Plain).overlap_tail_to_head)
    }

    /// Relative change of the median tail Frechet distance against plain training.
    pub fn tail_frechet_change(&self, mode: LossMode) -> f64 {
        relative_change(self.summary(mode).frechet_tail, self.summary(LossMode::Plain).frechet_tail)
    }

    pub fn head_frechet_change(&self, mode: LossMode) -> f64 {
        relative_change(self.summary(mode).frechet_head, self.summary(LossMode::Plain).frechet_head)
    }

    pub fn write_runs_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,seed,overlap_tail_to_head,frechet_tail,frechet_head,final_ddpm")?;
        for r in &self.runs {
            writeln!(w, "{},{},{},{},{},{}", r.mode.name(), r.seed, r.overlap_tail_to_head, r.frechet_tail, r.frechet_head, r.final_ddpm)?;
        }
        Ok(())
    }

    /// The comparison table: seed medians and changes relative to plain training.
    pub fn write_table_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mode,overlap_tail_to_head,frechet_tail,frechet_head,overlap_reduction,frechet_tail_change,frechet_head_change")?;
        for s in &self.summaries {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.mode.name(),
                s.overlap_tail_to_head,
                s.frechet_tail,
                s.frechet_head,
                self.overlap_reduction(s.mode),
                self.tail_frechet_change(s.mode),
                self.head_frechet_change(s.mode)
            )?;
        }
        Ok(())
    }
}

/// Tuned settings for the two-class benchmark: counts (2000, 20) at means
/// (0, 0) and (2, 0) with scale 0.5, 5000 steps, and an exponentially
/// decaying weight `5 exp(-t / 250)` on the exponential contrastive penalty.
pub fn default_benchmark() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.output_dir = "runs/benchmark".into();
    cfg
}

fn run_one(base: &ExperimentConfig, mode: LossMode, seed: u64, head: usize, tail: usize) -> Result<BenchmarkRun> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.sampler.seed = seed;
    cfg.train.mode = mode;
    let mixture = cfg.data.mixture()?;
    let sched = cfg.schedule.build()?;
    let run = train_in_memory(&cfg)?;
    let classes: Vec<usize> = (0..mixture.num_classes()).collect();
    let samples = sample_classes(&run.net, &run.outcome.params, &sched, &classes, &cfg.sampler)?;
    let per_class: Vec<Vec<Vec<f64>>> = classes.iter().map(|&c| samples.class_samples(c)).collect();
    let overlap = overlap_rate(&per_class, &mixture)?;
    let frechet = |c: usize| -> Result<f64> {
        frechet_moments(&GaussianMoments::from_samples(&per_class[c])?, &GaussianMoments::isotropic(&mixture.means[c], mixture.scales[c]))
    };
    Ok(BenchmarkRun {
        mode,
        seed,
        overlap_tail_to_head: overlap[tail][head],
        frechet_tail: frechet(tail)?,
        frechet_head: frechet(head)?,
        final_ddpm: run.outcome.log.last().map_or(f64::NAN, |r| r.ddpm),
    })
}

/// Trains every mode on every seed with otherwise identical settings. The
/// head is the most frequent class and the tail the least frequent.
pub fn run_benchmark(base: &ExperimentConfig, seeds: &[u64]) -> Result<BenchmarkReport> {
    if seeds.is_empty() {
        return Err(invalid("benchmark needs at least one seed"));
    }
    base.validate()?;
    let counts = base.data.class_counts()?;
    if counts.len() < 2 {
        return Err(invalid("benchmark needs at least two classes"));
    }
    let head = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    let tail = (0..counts.len()).fold(0, |b, c| if counts[c] < counts[b] { c } else { b });
    let jobs: Vec<(LossMode, u64)> = MODES.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    let runs = jobs.par_iter().map(|&(m, s)| run_one(base, m, s, head, tail)).collect::<Result<Vec<_>>>()?;
    let summaries = MODES
        .iter()
        .map(|&mode| {
            let pick = |f: fn(&BenchmarkRun) -> f64| {
                let mut v: Vec<f64> = runs.iter().filter(|r| r.mode == mode).map(f).collect();
                median(&mut v)
            };
            ModeSummary {
                mode,
                overlap_tail_to_head: pick(|r| r.overlap_tail_to_head),
                frechet_tail: pick(|r| r.frechet_tail),
                frechet_head: pick(|r| r.frechet_head),
            }
        })
        .collect();
    Ok(BenchmarkReport { head, tail, runs, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn tiny_benchmark_is_deterministic() {
        let mut cfg = default_benchmark();
        cfg.data.counts = vec![60, 6];
        cfg.schedule.steps = 50;
        cfg.train.steps = 20;
        cfg.train.tau.temperature = 12.5;
        cfg.sampler.count = 20;
        let a = run_benchmark(&cfg, &[0, 1]).unwrap();
        let b = run_benchmark(&cfg, &[0, 1]).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.head, a.tail), (0, 1));
        assert_eq!(a.runs.len(), 6);
        let mut t = Vec::new();
        a.write_table_csv(&mut t).unwrap();
        let text = String::from_utf8(t).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("plain,"));
        assert!(text.contains("\nreweighted,") && text.contains("\ndiffrop,"));
    }
}
