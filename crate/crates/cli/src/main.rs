use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pcl_diffusion::audit::{audit_network, GRADIENT_TOLERANCE};
use pcl_diffusion::bench::default_benchmark;
use pcl_diffusion::config::ExperimentConfig;
use pcl_diffusion::data::{LabeledDataset, ToyMixtureSpec};
use pcl_diffusion::experiment;
use pcl_diffusion::net::Checkpoint;
use pcl_diffusion::sampler::SamplerConfig;
use pcl_diffusion::toylab::{reference_mixture, GridSpec, ToyMode};
use pcl_diffusion::Error;

/// Tolerance for the class-weighted loss identity.
const DECOMPOSE_TOLERANCE: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(name = "pcl-lab", version, about = "Class-conditional diffusion experiments on imbalanced toy data")]
struct Cli {
    /// Worker threads; 1 gives the single-threaded reference mode. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a noise predictor and write config snapshot, data, log and checkpoints
    Train(ConfigArgs),
    /// Draw class-conditional samples from a checkpoint
    Sample(SampleArgs),
    /// Evaluate toy loss landscapes over the two component means
    Landscape(LandscapeArgs),
    /// Score sample CSVs against the configured mixture
    Metrics(MetricsArgs),
    /// Check the class-weighted decomposition of the denoising loss
    Decompose(DecomposeArgs),
    /// Compare analytic and finite-difference gradients for every loss mode
    Gradcheck(GradcheckArgs),
    /// Plain vs reweighted vs contrastive training over several seeds
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Output directory, overriding `output_dir`
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Config overrides as `--section.key value` pairs
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,

    /// Conditioning classes, comma separated; all classes when omitted
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,

    #[arg(long, default_value_t = 1000)]
    count: usize,

    /// Guidance strength
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    omega: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, short)]
    out: PathBuf,

    /// Also write 64-dimensional samples as PGM images
    #[arg(long)]
    pgm: bool,
}

#[derive(Args, Debug)]
struct LandscapeArgs {
    /// Modes: fit, naive, or a contrastive variant name
    #[arg(long, value_delimiter = ',', default_value = "fit,naive,exponential,reciprocal,hinge_margin")]
    modes: Vec<String>,

    #[arg(long, default_value_t = 0.5)]
    tau: f64,

    /// Margin of the max-margin hinge
    #[arg(long, default_value_t = 2.0)]
    margin: f64,

    #[arg(long, default_value_t = 0.05)]
    step: f64,

    /// Mixture weights of the two components
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    weights: Option<Vec<f64>>,

    /// True means of the two components
    #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true)]
    means: Option<Vec<f64>>,

    #[arg(long)]
    sigma: Option<f64>,

    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Sample CSVs, merged before scoring
    #[arg(long, required = true, value_delimiter = ',')]
    samples: Vec<PathBuf>,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    /// Evaluate this checkpoint instead of a freshly initialized network
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,

    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,

    #[command(flatten)]
    config: ConfigArgs,
}

/// Failure with its process exit code: 1 for a failed check, 2 for bad
/// configuration or input, 3 for a numeric abort.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Aborted { .. } | Error::NonFinite(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn check_failed(message: String) -> Failure {
    Failure { code: 1, message }
}

type CmdResult = Result<(), Failure>;

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(arg) = it.next() {
        let key = arg.strip_prefix("--").ok_or_else(|| Error::Format(format!("expected `--key`, found `{arg}`")))?;
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let value = it.next().ok_or_else(|| Error::Format(format!("override `--{key}` has no value")))?;
                out.push((key.to_string(), value.clone()));
            }
        }
    }
    Ok(out)
}

fn load_config(args: &ConfigArgs, base: Option<ExperimentConfig>) -> Result<(ExperimentConfig, PathBuf), Error> {
    let overrides = parse_overrides(&args.overrides)?;
    let cfg = match (&args.config, base) {
        (None, Some(base)) => base.with_overrides(&overrides)?,
        (path, _) => ExperimentConfig::load(path.as_deref(), &overrides)?,
    };
    let dir = args.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, dir))
}

fn train(args: &ConfigArgs) -> CmdResult {
    let (cfg, dir) = load_config(args, None)?;
    let run = experiment::run_train(&cfg, &dir)?;
    let last = run.outcome.log.last();
    println!(
        "trained {} steps ({}); final loss {:.6}; artifacts in {}",
        cfg.train.steps,
        cfg.train.mode.name(),
        last.map_or(f64::NAN, |r| r.total),
        dir.display()
    );
    Ok(())
}

fn sample(args: &SampleArgs) -> CmdResult {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let classes = args.classes.clone().unwrap_or_else(|| (0..ck.net.num_classes).collect());
    let cfg = SamplerConfig { omega: args.omega, count: args.count, seed: args.seed };
    let files = experiment::run_sample(&ck, &classes, &cfg, &args.out, args.pgm)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn landscape(args: &LandscapeArgs) -> CmdResult {
    let base = reference_mixture();
    let weights = args.weights.clone().unwrap_or_else(|| base.weights.clone());
    let means = args.means.clone().map_or_else(|| base.means.clone(), |m| m.into_iter().map(|v| vec![v]).collect());
    let sigma = args.sigma.unwrap_or(base.scales[0]);
    let spec = ToyMixtureSpec::new(weights, means, vec![sigma; 2])?;
    let modes = args.modes.iter().map(|m| ToyMode::parse(m, args.margin)).collect::<Result<Vec<_>, _>>()?;
    let grid = GridSpec { step: args.step, ..GridSpec::default() };
    let summaries = experiment::run_landscape(&spec, &modes, args.tau, &grid, &args.out)?;
    println!("{:<36} {:>8} {:>8} {:>6} {:>10} unbounded", "mode", "m1", "m2", "cells", "tau_max");
    for s in summaries {
        println!(
            "{:<36} {:>8.2} {:>8.2} {:>6} {:>10.4} {}",
            s.mode.describe(),
            s.argmin.0,
            s.argmin.1,
            s.cells_from_truth,
            s.tau_threshold,
            s.unbounded.map_or("no".into(), |u| format!("along ({:.3}, {:.3})", u.direction[0], u.direction[1]))
        );
    }
    Ok(())
}

fn read_samples(paths: &[PathBuf], num_classes: usize) -> Result<LabeledDataset, Error> {
    let mut merged: Option<LabeledDataset> = None;
    for p in paths {
        let f = std::fs::File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
        let ds = LabeledDataset::read_csv(std::io::BufReader::new(f), num_classes)?;
        match merged.as_mut() {
            Some(m) => m.extend(&ds)?,
            None => merged = Some(ds),
        }
    }
    merged.ok_or_else(|| Error::Empty("no sample files".into()))
}

fn metrics(args: &MetricsArgs) -> CmdResult {
    let (cfg, dir) = load_config(&args.config, None)?;
    let classes = cfg.data.class_counts()?.len();
    let generated = read_samples(&args.samples, classes)?;
    let rep = experiment::run_metrics(&cfg, &generated, &dir)?;
    println!("frechet_global {:.6}", rep.frechet_global);
    println!("precision {:.4} recall {:.4}", rep.precision, rep.recall);
    println!("F_8 {:.4} F_1/8 {:.4}", rep.f_8, rep.f_1_8);
    for iv in &rep.intervals {
        println!("{:<5} classes {:>3} frechet {:.6} overlap {:.4}", iv.interval.name(), iv.classes, iv.mean_frechet, iv.mean_overlap);
    }
    Ok(())
}

fn decompose(args: &DecomposeArgs) -> CmdResult {
    let (cfg, dir) = load_config(&args.config, None)?;
    let ck = args.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let dec = experiment::run_decompose(&cfg, ck.as_ref(), &dir)?;
    let err = dec.relative_error();
    println!("global mean loss        {:.17e}", dec.global);
    println!("class-weighted sum      {:.17e}", dec.weighted_sum);
    println!("relative error          {err:.3e}");
    if err > DECOMPOSE_TOLERANCE {
        return Err(check_failed(format!("relative error {err:e} exceeds {DECOMPOSE_TOLERANCE:e}")));
    }
    println!("PASS");
    Ok(())
}

fn gradcheck(args: &GradcheckArgs) -> CmdResult {
    let checks = experiment::run_gradcheck(&audit_network(), args.seed, &args.out)?;
    let mut worst: f64 = 0.0;
    for c in &checks {
        println!("{:<24} params {:>5} relative error {:.3e}", c.objective, c.num_params, c.relative_error);
        worst = worst.max(c.relative_error);
    }
    println!("max relative error {worst:.3e}");
    if worst > GRADIENT_TOLERANCE {
        return Err(check_failed(format!("max relative error {worst:e} exceeds {GRADIENT_TOLERANCE:e}")));
    }
    println!("PASS");
    Ok(())
}

fn benchmark(args: &BenchmarkArgs) -> CmdResult {
    let (cfg, dir) = load_config(&args.config, Some(default_benchmark()))?;
    info!("benchmark over seeds {:?}", args.seeds);
    let report = experiment::run_benchmark_files(&cfg, &args.seeds, &dir)?;
    println!("{:<11} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10}", "mode", "overlap", "frechet_tail", "frechet_head", "d_overlap", "d_tail", "d_head");
    for s in &report.summaries {
        println!(
            "{:<11} {:>10.4} {:>12.5} {:>12.5} {:>+10.3} {:>+10.3} {:>+10.3}",
            s.mode.name(),
            s.overlap_tail_to_head,
            s.frechet_tail,
            s.frechet_head,
            -report.overlap_reduction(s.mode),
            report.tail_frechet_change(s.mode),
            report.head_frechet_change(s.mode)
        );
    }
    println!("tables in {}", dir.display());
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Landscape(a) => landscape(a),
        Command::Metrics(a) => metrics(a),
        Command::Decompose(a) => decompose(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Benchmark(a) => benchmark(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
