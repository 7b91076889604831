//! Run orchestration. Each `run_*` function writes its artifacts into a
//! directory and returns the in-memory result.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::audit::{gradient_audit, GradientCheck};
use crate::bench::{run_benchmark, BenchmarkReport};
use crate::config::ExperimentConfig;
use crate::data::{write_pgm, DatasetStats, LabeledDataset, Provenance, ToyMixtureSpec};
use crate::error::{Error, Result};
use crate::losses::{decompose_loss_by_class, BoundNet, ClassDecomposition, NoiseAssignment};
use crate::metrics::{evaluate_samples, linear_probe, MetricsReport, ProbeConfig};
use crate::net::{Checkpoint, NetworkConfig, NoisePredictor, ParameterVector};
use crate::rng;
use crate::sampler::{ancestral_sample, SamplerConfig};
use crate::schedule::{DiffusionSchedule, ScheduleConfig};
use crate::toylab::{landscape, preserving_tau_threshold, unbounded_direction, GridSpec, ToyMode, UnboundedDirection};
use crate::trainer::{write_log, Start, TrainOutcome, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "train_log.csv";
pub const DATA_FILE: &str = "train_data.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const OVERLAP_FILE: &str = "overlap.csv";
pub const DECOMPOSE_FILE: &str = "decompose.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const LANDSCAPE_SUMMARY_FILE: &str = "landscape_summary.csv";
pub const BENCHMARK_RUNS_FILE: &str = "benchmark_runs.csv";
pub const BENCHMARK_TABLE_FILE: &str = "benchmark_table.csv";

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub struct TrainRun {
    pub dataset: LabeledDataset,
    pub net: NoisePredictor,
    pub outcome: TrainOutcome,
}

/// Generates the training set and trains, without touching the filesystem.
pub fn train_in_memory(cfg: &ExperimentConfig) -> Result<TrainRun> {
    train_with(cfg, None)
}

fn train_with(cfg: &ExperimentConfig, dir: Option<&Path>) -> Result<TrainRun> {
    let dataset = cfg.data.generate(cfg.seed)?;
    let net = NoisePredictor::new(cfg.network()?)?;
    let outcome = Trainer { cfg: &cfg.train, net: &net, schedule: cfg.schedule, out_dir: dir }.train(&dataset, Start::Fresh)?;
    Ok(TrainRun { dataset, net, outcome })
}

/// Writes the config snapshot, then the training set, checkpoints and the log.
pub fn run_train(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainRun> {
    cfg.validate()?;
    let mut snapshot = create(&dir.join(CONFIG_FILE))?;
    snapshot.write_all(cfg.to_toml()?.as_bytes())?;
    snapshot.flush()?;
    drop(snapshot);
    let run = train_with(cfg, Some(dir))?;
    let mut data = create(&dir.join(DATA_FILE))?;
    run.dataset.write_csv(&mut data)?;
    data.flush()?;
    let mut log = create(&dir.join(LOG_FILE))?;
    write_log(&mut log, &run.outcome.log)?;
    log.flush()?;
    Ok(run)
}

/// Samples `cfg.count` points for each class in `classes`, labeled by the conditioning class.
pub fn sample_classes(
    net: &NoisePredictor,
    params: &ParameterVector,
    sched: &DiffusionSchedule,
    classes: &[usize],
    cfg: &SamplerConfig,
) -> Result<LabeledDataset> {
    let ncfg = net.config();
    let model = BoundNet::new(net, params)?;
    let mut out = LabeledDataset::empty(ncfg.input_dim, ncfg.num_classes, Provenance::Generated { omega: cfg.omega });
    for &c in classes {
        if c >= ncfg.num_classes {
            return Err(Error::ClassOutOfRange { class: c, max: ncfg.num_classes - 1 });
        }
        for x in ancestral_sample(&model, sched, cfg, c)? {
            out.push(&x, c)?;
        }
    }
    Ok(out)
}

pub fn sample_file_name(omega: f64, class: usize) -> String {
    format!("samples_omega{omega}_class{class}.csv")
}

pub fn sample_meta_file_name(omega: f64) -> String {
    format!("samples_omega{omega}_meta.csv")
}

/// Loads a checkpoint and writes one CSV per class plus a `key,value`
/// metadata file. With `pgm`, 64-dimensional samples are also dumped as images.
pub fn run_sample(checkpoint: &Checkpoint, classes: &[usize], cfg: &SamplerConfig, dir: &Path, pgm: bool) -> Result<Vec<PathBuf>> {
    let net = NoisePredictor::new(checkpoint.net.clone())?;
    let sched = checkpoint.schedule.build()?;
    let samples = sample_classes(&net, &checkpoint.params, &sched, classes, cfg)?;
    let mut written = Vec::new();
    for &c in classes {
        let mut part = LabeledDataset::empty(samples.dim(), samples.num_classes(), samples.provenance.clone());
        for (x, label) in samples.iter().filter(|(_, l)| *l == c) {
            part.push(x, label)?;
        }
        let path = dir.join(sample_file_name(cfg.omega, c));
        let mut w = create(&path)?;
        part.write_csv(&mut w)?;
        w.flush()?;
        written.push(path);
        if pgm && part.dim() == 64 {
            for i in 0..part.len() {
                let path = dir.join(format!("samples_omega{}_class{c}_{i}.pgm", cfg.omega));
                let mut w = create(&path)?;
                write_pgm(&mut w, part.sample(i))?;
                w.flush()?;
                written.push(path);
            }
        }
    }
    let path = dir.join(sample_meta_file_name(cfg.omega));
    let mut w = create(&path)?;
    writeln!(w, "key,value")?;
    writeln!(w, "omega,{}", cfg.omega)?;
    writeln!(w, "count,{}", cfg.count)?;
    writeln!(w, "seed,{}", cfg.seed)?;
    writeln!(w, "checkpoint_step,{}", checkpoint.step)?;
    let names: Vec<String> = classes.iter().map(|c| c.to_string()).collect();
    writeln!(w, "classes,{}", names.join(" "))?;
    w.flush()?;
    written.push(path);
    Ok(written)
}

/// A class-balanced draw from the true mixture with `per_class` points per class.
pub fn reference_set(mixture: &ToyMixtureSpec, per_class: usize, seed: u64) -> Result<LabeledDataset> {
    crate::data::generate_gmm_dataset(mixture, &vec![per_class; mixture.num_classes()], rng::derive_seed(seed, &[0x726566]))
}

/// Scores `generated` against the configured mixture. The probe trains on
/// the real training set augmented with `generated` and tests on the reference set.
pub fn run_metrics(cfg: &ExperimentConfig, generated: &LabeledDataset, dir: &Path) -> Result<MetricsReport> {
    let mixture = cfg.data.mixture()?;
    let counts = cfg.data.class_counts()?;
    let stats = DatasetStats::from_counts(&counts)?;
    let per_class = cfg.sampler.count.max(2);
    let reference = reference_set(&mixture, per_class, cfg.seed)?;
    let mut report = evaluate_samples(generated, &reference, &mixture, &stats, &cfg.metrics)?;
    let mut augmented = cfg.data.generate(cfg.seed)?;
    augmented.extend(generated)?;
    report.probe = Some(linear_probe(&augmented, &reference, &ProbeConfig::default())?);
    let mut w = create(&dir.join(METRICS_FILE))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(OVERLAP_FILE))?;
    report.write_overlap_csv(&mut w)?;
    w.flush()?;
    Ok(report)
}

/// Loss decomposition of a checkpoint (or a freshly initialized network) on the configured data.
pub fn run_decompose(cfg: &ExperimentConfig, checkpoint: Option<&Checkpoint>, dir: &Path) -> Result<ClassDecomposition> {
    let dataset = cfg.data.generate(cfg.seed)?;
    let (net_cfg, schedule, params): (NetworkConfig, ScheduleConfig, ParameterVector) = match checkpoint {
        Some(ck) => (ck.net.clone(), ck.schedule, ck.params.clone()),
        None => {
            let net_cfg = cfg.network()?;
            let params = NoisePredictor::new(net_cfg.clone())?.init(cfg.train.seed);
            (net_cfg, cfg.schedule, params)
        }
    };
    let net = NoisePredictor::new(net_cfg)?;
    let sched = schedule.build()?;
    let fixed = NoiseAssignment::draw(&dataset, &sched, cfg.seed);
    let dec = decompose_loss_by_class(&BoundNet::new(&net, &params)?, &sched, &dataset, &fixed)?;
    let counts = crate::data::class_stats(&dataset)?.counts;
    let mut w = create(&dir.join(DECOMPOSE_FILE))?;
    writeln!(w, "class,count,weight,loss")?;
    for (c, (l, wt)) in dec.per_class.iter().zip(&dec.weights).enumerate() {
        writeln!(w, "{c},{},{wt},{l}", counts[c])?;
    }
    writeln!(w, "# global,{}", dec.global)?;
    writeln!(w, "# weighted_sum,{}", dec.weighted_sum)?;
    writeln!(w, "# relative_error,{}", dec.relative_error())?;
    w.flush()?;
    Ok(dec)
}

pub fn run_gradcheck(net: &NetworkConfig, seed: u64, dir: &Path) -> Result<Vec<GradientCheck>> {
    let checks = gradient_audit(net, seed)?;
    let mut w = create(&dir.join(GRADCHECK_FILE))?;
    writeln!(w, "objective,num_params,relative_error,passed")?;
    for c in &checks {
        writeln!(w, "{},{},{},{}", c.objective, c.num_params, c.relative_error, c.passed())?;
    }
    w.flush()?;
    Ok(checks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSummary {
    pub mode: ToyMode,
    pub file: PathBuf,
    pub argmin: (f64, f64),
    pub value: f64,
    pub cells_from_truth: u64,
    pub unbounded: Option<UnboundedDirection>,
    /// Largest tau up to `TAU_SEARCH_MAX` that keeps the argmin within one cell.
    pub tau_threshold: f64,
}

pub const TAU_SEARCH_MAX: f64 = 10.0;

pub fn landscape_file_name(mode: &ToyMode) -> String {
    let slug = match mode {
        ToyMode::Fit => "fit",
        ToyMode::FitNaive => "naive",
        ToyMode::FitHinge(v) => v.kind.name(),
    };
    format!("landscape_{slug}.csv")
}

/// One grid CSV per mode plus `landscape_summary.csv`.
pub fn run_landscape(spec: &ToyMixtureSpec, modes: &[ToyMode], tau: f64, grid: &GridSpec, dir: &Path) -> Result<Vec<LandscapeSummary>> {
    let truth = (spec.means[0][0], spec.means[1][0]);
    let mut out = Vec::new();
    for mode in modes {
        let g = landscape(spec, mode, tau, grid)?;
        let file = dir.join(landscape_file_name(mode));
        let mut w = create(&file)?;
        g.write_csv(&mut w)?;
        w.flush()?;
        out.push(LandscapeSummary {
            mode: *mode,
            file,
            argmin: g.argmin_point(),
            value: g.min_value(),
            cells_from_truth: g.cells_from(truth.0, truth.1),
            unbounded: unbounded_direction(spec, mode, tau)?,
            tau_threshold: preserving_tau_threshold(spec, mode, grid, TAU_SEARCH_MAX, 1e-6)?,
        });
    }
    let mut w = create(&dir.join(LANDSCAPE_SUMMARY_FILE))?;
    writeln!(w, "mode,tau,argmin_m1,argmin_m2,value,cells_from_truth,unbounded_direction,tau_threshold")?;
    for s in &out {
        let dir = s.unbounded.map_or("none".to_string(), |u| format!("{} {}", u.direction[0], u.direction[1]));
        writeln!(
            w,
            "{},{tau},{},{},{},{},{dir},{}",
            s.mode.describe(),
            s.argmin.0,
            s.argmin.1,
            s.value,
            s.cells_from_truth,
            s.tau_threshold
        )?;
    }
    w.flush()?;
    Ok(out)
}

/// Runs the three-way comparison and writes per-run rows and the median table.
pub fn run_benchmark_files(cfg: &ExperimentConfig, seeds: &[u64], dir: &Path) -> Result<BenchmarkReport> {
    let report = run_benchmark(cfg, seeds)?;
    let mut w = create(&dir.join(BENCHMARK_RUNS_FILE))?;
    report.write_runs_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(BENCHMARK_TABLE_FILE))?;
    report.write_table_csv(&mut w)?;
    w.flush()?;
    Ok(report)
}
