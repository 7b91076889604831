//! Experiment configuration: one TOML file with a table per subsystem, plus
//! `section.key=value` overrides applied before validation.
//!
//! ```toml
//! seed = 0
//! output_dir = "runs/gmm"
//!
//! [data]
//! kind = "gmm"
//! counts = [2000, 20]
//! means = [[0.0, 0.0], [2.0, 0.0]]
//! scale = 0.5
//!
//! [train]
//! mode = "diffrop"
//! steps = 5000
//! ```
//!
//! Omitted tables and keys take their defaults. The top-level `seed` drives
//! data generation; training, sampling and clustering each carry their own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_gmm_dataset, generate_raster_dataset, longtail_counts, raster_mixture, ImbalanceSpec, LabeledDataset, ToyMixtureSpec,
};
use crate::error::{invalid, Error, Result};
use crate::metrics::MetricsConfig;
use crate::net::{Activation, NetworkConfig};
use crate::sampler::SamplerConfig;
use crate::schedule::ScheduleConfig;
use crate::losses::{PclKind, PclVariant};
use crate::schedule::TauSchedule;
use crate::trainer::{LossMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// Explicit component means with a shared scale.
    Gmm,
    /// Components evenly spaced on a circle in the plane.
    Ring,
    /// Noisy 8x8 glyphs.
    Raster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Per-class counts; when empty, `longtail` decides them.
    pub counts: Vec<usize>,
    pub longtail: Option<ImbalanceSpec>,
    pub means: Vec<Vec<f64>>,
    pub scale: f64,
    pub radius: f64,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Gmm,
            counts: vec![2000, 20],
            longtail: None,
            means: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            scale: 0.5,
            radius: 4.0,
            noise: 0.3,
        }
    }
}

impl DataConfig {
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        match (&self.longtail, self.counts.is_empty()) {
            (Some(_), false) => Err(invalid("give either data.counts or data.longtail, not both")),
            (Some(lt), true) => longtail_counts(lt),
            (None, true) => Err(invalid("data.counts is empty")),
            (None, false) => Ok(self.counts.clone()),
        }
    }

    /// The true mixture, with weights proportional to the class counts.
    pub fn mixture(&self) -> Result<ToyMixtureSpec> {
        let counts = self.class_counts()?;
        match self.kind {
            DataKind::Gmm => {
                if self.means.len() != counts.len() {
                    return Err(Error::DimensionMismatch { expected: counts.len(), actual: self.means.len() });
                }
                ToyMixtureSpec::with_counts(&counts, self.means.clone(), vec![self.scale; counts.len()])
            }
            DataKind::Ring => {
                let total: usize = counts.iter().sum();
                let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
                ToyMixtureSpec::ring(counts.len(), self.radius, self.scale, weights)
            }
            DataKind::Raster => raster_mixture(&counts, self.noise),
        }
    }

    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        let counts = self.class_counts()?;
        match self.kind {
            DataKind::Raster => generate_raster_dataset(&counts, self.noise, seed),
            _ => generate_gmm_dataset(&self.mixture()?, &counts, seed),
        }
    }
}

/// Network shape; input width and class count follow from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub embed_dim: usize,
    pub activation: Activation,
}

impl Default for NetSection {
    fn default() -> Self {
        Self { hidden: vec![32, 32], time_features: 16, embed_dim: 8, activation: Activation::Silu }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub schedule: ScheduleConfig,
    pub net: NetSection,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            schedule: ScheduleConfig::default(),
            net: NetSection::default(),
            train: TrainConfig {
                lr: 2e-3,
                mode: LossMode::Diffrop,
                tau: TauSchedule::exponential(5.0, 250.0),
                variant: PclVariant::new(PclKind::Exponential),
                ..TrainConfig::default()
            },
            sampler: SamplerConfig { omega: 0.0, count: 1000, seed: 0 },
            metrics: MetricsConfig::default(),
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Recursively overlays `top` onto `base`; non-table values replace.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Format(format!("malformed override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("non-empty split");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Format(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(value));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Format(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `text` merged over the defaults, then applies `overrides`.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        Self::default().merged(text, overrides)
    }

    fn merged(&self, text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let mut table: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::Format(e.to_string()))?;
        let user_data = user.get("data").and_then(toml::Value::as_table);
        if user_data.is_some_and(|d| d.contains_key("longtail") && !d.contains_key("counts")) {
            // a long-tail spec replaces the default explicit counts
            if let Some(toml::Value::Table(d)) = table.get_mut("data") {
                d.insert("counts".into(), toml::Value::Array(Vec::new()));
            }
        }
        merge(&mut table, user);
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        Self::from_table(table)
    }

    /// Applies `section.key=value` overrides on top of this config.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        self.merged("", overrides)
    }

    /// Reads `path`; an empty path means all defaults plus the overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn network(&self) -> Result<NetworkConfig> {
        let probe = self.data.class_counts()?;
        let dim = match self.data.kind {
            DataKind::Raster => 64,
            _ => self.data.means.first().map_or(2, Vec::len),
        };
        let cfg = NetworkConfig {
            input_dim: dim,
            hidden: self.net.hidden.clone(),
            time_features: self.net.time_features,
            num_classes: probe.len(),
            embed_dim: self.net.embed_dim,
            activation: self.net.activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mixture = self.data.mixture()?;
        self.schedule.build()?;
        self.network()?;
        self.train.validate()?;
        self.metrics.validate(mixture.num_classes())?;
        if mixture.dim() != self.network()?.input_dim {
            return Err(Error::DimensionMismatch { expected: mixture.dim(), actual: self.network()?.input_dim });
        }
        Ok(())
    }
}
