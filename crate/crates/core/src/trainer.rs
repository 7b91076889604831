//! Training loop: uniform random batches, Adam with linear warmup, log rows
//! and resumable checkpoints.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{class_stats, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::losses::{loss_and_grad, Batch, Objective, PclKind, PclVariant};
use crate::net::{Checkpoint, NoisePredictor, ParameterVector};
use crate::optim::{AdamConfig, AdamState};
use crate::rng;
use crate::schedule::{DiffusionSchedule, ScheduleConfig, TauSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Plain,
    Diffrop,
    Reweighted,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Plain => "plain",
            LossMode::Diffrop => "diffrop",
            LossMode::Reweighted => "reweighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    /// Linear warmup length; defaults to 5% of `steps` below 20k steps and 5000 otherwise.
    #[serde(default)]
    pub warmup: Option<u64>,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: LossMode,
    pub variant: PclVariant,
    pub tau: TauSchedule,
    pub p_uncond: f64,
    pub log_every: u64,
    /// Zero disables periodic checkpoints; the final one is always written when an output directory is given.
    #[serde(default)]
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            steps: 5000,
            lr: 2e-4,
            warmup: None,
            adam: AdamConfig::default(),
            seed: 0,
            mode: LossMode::Plain,
            variant: PclVariant::new(PclKind::Exponential),
            tau: TauSchedule::default_for(1000),
            p_uncond: 0.1,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn warmup_steps(&self) -> u64 {
        self.warmup.unwrap_or(if self.steps < 20_000 { self.steps / 20 } else { 5000 })
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if self.mode == LossMode::Diffrop && self.batch_size < 2 {
            return Err(invalid("contrastive training needs batch size >= 2"));
        }
        if self.warmup_steps() > self.steps {
            return Err(invalid(format!("warmup {} exceeds total steps {}", self.warmup_steps(), self.steps)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(invalid(format!("p_uncond must be in [0, 1], got {}", self.p_uncond)));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be >= 1"));
        }
        self.tau.validate()?;
        self.variant.validate()
    }
}

/// Learning rate for the update that produces step `step`: a linear ramp from 0
/// at step 0 to `lr` at the end of warmup, constant afterwards.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps();
    if warmup == 0 || step >= warmup {
        cfg.lr
    } else {
        cfg.lr * step as f64 / warmup as f64
    }
}

/// Losses of the batch drawn at `step`, evaluated before that step's update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: u64,
    pub total: f64,
    pub ddpm: f64,
    pub pcl: f64,
    pub tau_mean: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "step,total,ddpm,pcl,tau_mean,seconds";

impl TrainLogRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{:.3}", self.step, self.total, self.ddpm, self.pcl, self.tau_mean, self.seconds)
    }
}

pub fn write_log<W: Write>(mut w: W, rows: &[TrainLogRow]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterVector,
    pub optimizer: AdamState,
    pub log: Vec<TrainLogRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where a run starts from.
#[derive(Debug, Clone)]
pub enum Start {
    /// Fresh parameters from the network initializer seeded with the train seed.
    Fresh,
    /// Continue from a checkpoint that carries optimizer state.
    Resume(Checkpoint),
}

pub struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub net: &'a NoisePredictor,
    pub schedule: ScheduleConfig,
    /// Directory for `ckpt_{step}.bin` files; nothing is written when absent.
    pub out_dir: Option<&'a Path>,
}

impl Trainer<'_> {
    fn objective(&self, ds: &LabeledDataset) -> Result<Objective> {
        Ok(match self.cfg.mode {
            LossMode::Plain => Objective::Plain,
            LossMode::Diffrop => Objective::Contrastive { tau: self.cfg.tau, variant: self.cfg.variant },
            LossMode::Reweighted => Objective::Reweighted { stats: class_stats(ds)? },
        })
    }

    fn save(&self, step: u64, params: &ParameterVector, opt: &AdamState) -> Result<Option<PathBuf>> {
        let Some(dir) = self.out_dir else { return Ok(None) };
        let path = dir.join(format!("ckpt_{step}.bin"));
        Checkpoint {
            net: self.net.config().clone(),
            schedule: self.schedule,
            step,
            params: params.clone(),
            optimizer: Some(opt.clone()),
        }
        .save(&path)?;
        Ok(Some(path))
    }

    pub fn train(&self, ds: &LabeledDataset, start: Start) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        cfg.validate()?;
        if ds.is_empty() {
            return Err(Error::Empty("training set".into()));
        }
        let ncfg = self.net.config();
        if ds.dim() != ncfg.input_dim {
            return Err(Error::DimensionMismatch { expected: ncfg.input_dim, actual: ds.dim() });
        }
        if ds.num_classes() > ncfg.num_classes {
            return Err(invalid(format!("dataset has {} classes, network {}", ds.num_classes(), ncfg.num_classes)));
        }
        let sched: DiffusionSchedule = self.schedule.build()?;
        let objective = self.objective(ds)?;
        let (mut params, mut opt, first) = match start {
            Start::Fresh => {
                let p = self.net.init(cfg.seed);
                let n = p.len();
                (p, AdamState::new(n), 0)
            }
            Start::Resume(ck) => {
                if &ck.net != ncfg {
                    return Err(invalid("checkpoint network config differs from the run config"));
                }
                let opt = ck.optimizer.ok_or_else(|| invalid("checkpoint has no optimizer state to resume from"))?;
                (ck.params, opt, ck.step)
            }
        };

        let clock = Instant::now();
        let mut log = Vec::new();
        let mut checkpoints = Vec::new();
        let mut last_checkpoint: Option<PathBuf> = None;
        let abort = |step: u64, reason: String, last: &Option<PathBuf>| Error::Aborted {
            step,
            reason,
            last_checkpoint: last.as_ref().map(|p| p.display().to_string()),
        };

        for step in first..cfg.steps {
            let mut r = rng::stream(cfg.seed, &[0x7472, step]);
            let batch = Batch::draw(ds, cfg.batch_size, &sched, cfg.p_uncond, &mut r)?;
            let (value, grad) = match loss_and_grad(self.net, &params, &sched, &objective, &batch) {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => return Err(abort(step, format!("non-finite {what}"), &last_checkpoint)),
                Err(e) => return Err(e),
            };
            if step % cfg.log_every == 0 || step + 1 == cfg.steps {
                log.push(TrainLogRow {
                    step,
                    total: value.total,
                    ddpm: value.ddpm,
                    pcl: value.pcl,
                    tau_mean: value.tau_mean,
                    seconds: clock.elapsed().as_secs_f64(),
                });
            }
            opt.update(&cfg.adam, lr_at(step + 1, cfg), &mut params.0, &grad.0);
            if params.0.iter().any(|p| !p.is_finite()) {
                return Err(abort(step, "non-finite parameters after update".into(), &last_checkpoint));
            }
            let done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != cfg.steps {
                if let Some(p) = self.save(done, &params, &opt)? {
                    last_checkpoint = Some(p.clone());
                    checkpoints.push(p);
                }
            }
        }
        if let Some(p) = self.save(cfg.steps.max(first), &params, &opt)? {
            checkpoints.push(p);
        }
        Ok(TrainOutcome { params, optimizer: opt, log, checkpoints })
    }
}
