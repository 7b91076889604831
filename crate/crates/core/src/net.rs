//! Conditional noise predictor: an MLP over `[x_t | time features | class embedding]`.
//!
//! Parameters live in one flat vector. The order is, for each layer from input to
//! output, the weight matrix (row-major, `out x in`) followed by its bias, and then
//! the class-embedding table (`(C + 1) x embed_dim`, row-major). Row `C` of the
//! table is the null class used for unconditional prediction.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::AdamState;
use crate::rng;
use crate::schedule::ScheduleConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Tanh => "tanh",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(invalid(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.input_dim, self.time_features, self.num_classes, self.embed_dim];
        if dims.iter().any(|&d| d == 0) || self.hidden.iter().any(|&h| h == 0) {
            return Err(invalid(format!("all network dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Index of the null (unconditional) class.
    pub fn null_class(&self) -> usize {
        self.num_classes
    }
}

/// Flat parameter vector in the documented layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

/// Gradient of a scalar loss, laid out like [`ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// Activations recorded during a forward pass, consumed by [`NoisePredictor::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace {
    class: usize,
    // inputs to each layer; `inputs[0]` is the concatenated network input
    inputs: Vec<Vec<f64>>,
    // pre-activations of each hidden layer
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// The network architecture; parameters are passed in separately.
#[derive(Debug, Clone)]
pub struct NoisePredictor {
    cfg: NetworkConfig,
    layers: Vec<LayerShape>,
    embed_offset: usize,
    num_params: usize,
    frequencies: Vec<f64>,
}

impl NoisePredictor {
    pub fn new(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut sizes = vec![cfg.input_dim + cfg.time_features + cfg.embed_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(cfg.input_dim);
        let mut offset = 0;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                shape
            })
            .collect();
        let embed_offset = offset;
        let num_params = offset + (cfg.num_classes + 1) * cfg.embed_dim;
        // feature j uses frequency index j / 2: sin for even j, cos for odd j
        let half = cfg.time_features.div_ceil(2);
        let frequencies = (0..half).map(|i| 10_000f64.powf(-(i as f64) / half as f64)).collect();
        Ok(Self { cfg, layers, embed_offset, num_params, frequencies })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases, and
    /// uniform `[-1, 1]` embeddings.
    pub fn init(&self, seed: u64) -> ParameterVector {
        let mut r = rng::stream(seed, &[0x696e6974]);
        let mut p = vec![0.0; self.num_params];
        for layer in &self.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut p[layer.weight_offset..layer.bias_offset] {
                *w = r.random_range(-bound..bound);
            }
        }
        for e in &mut p[self.embed_offset..] {
            *e = r.random_range(-1.0..1.0);
        }
        ParameterVector(p)
    }

    /// Sinusoidal features of the timestep.
    pub fn time_features(&self, t: usize) -> Vec<f64> {
        (0..self.cfg.time_features)
            .map(|j| {
                let arg = t as f64 * self.frequencies[j / 2];
                if j % 2 == 0 {
                    arg.sin()
                } else {
                    arg.cos()
                }
            })
            .collect()
    }

    /// Embedding row for `class` (the null class is `num_classes`).
    pub fn embedding<'a>(&self, params: &'a ParameterVector, class: usize) -> &'a [f64] {
        let e = self.cfg.embed_dim;
        let start = self.embed_offset + class * e;
        &params.0[start..start + e]
    }

    pub fn embedding_mut<'a>(&self, params: &'a mut ParameterVector, class: usize) -> &'a mut [f64] {
        let e = self.cfg.embed_dim;
        let start = self.embed_offset + class * e;
        &mut params.0[start..start + e]
    }

    fn check(&self, params: &ParameterVector, x_t: &[f64], class: usize) -> Result<()> {
        if params.len() != self.num_params {
            return Err(Error::DimensionMismatch { expected: self.num_params, actual: params.len() });
        }
        if x_t.len() != self.cfg.input_dim {
            return Err(Error::DimensionMismatch { expected: self.cfg.input_dim, actual: x_t.len() });
        }
        if class > self.cfg.num_classes {
            return Err(Error::ClassOutOfRange { class, max: self.cfg.num_classes });
        }
        Ok(())
    }

    /// Predicts the noise in `x_t` at timestep `t` under `class` (or the null class).
    pub fn predict_noise(&self, params: &ParameterVector, x_t: &[f64], t: usize, class: usize) -> Result<Vec<f64>> {
        self.check(params, x_t, class)?;
        let mut trace = Trace::default();
        self.forward(params, x_t, t, class, &mut trace);
        Ok(trace.output)
    }

    /// Forward pass recording everything the backward pass needs. Inputs are
    /// assumed validated.
    pub fn forward(&self, params: &ParameterVector, x_t: &[f64], t: usize, class: usize, trace: &mut Trace) {
        let p = &params.0;
        let n_layers = self.layers.len();
        trace.class = class;
        trace.inputs.resize_with(n_layers, Vec::new);
        trace.pre.resize_with(n_layers - 1, Vec::new);

        let input = &mut trace.inputs[0];
        input.clear();
        input.extend_from_slice(x_t);
        input.extend(self.time_features(t));
        input.extend_from_slice(self.embedding(params, class));

        for (l, layer) in self.layers.iter().enumerate() {
            let w = &p[layer.weight_offset..layer.bias_offset];
            let b = &p[layer.bias_offset..layer.bias_offset + layer.fan_out];
            let a = &trace.inputs[l];
            let mut z = Vec::with_capacity(layer.fan_out);
            for (row, bias) in w.chunks_exact(layer.fan_in).zip(b) {
                z.push(bias + dot(row, a));
            }
            if l + 1 == n_layers {
                trace.output = z;
            } else {
                let act = self.cfg.activation;
                let next: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
                trace.pre[l] = z;
                trace.inputs[l + 1] = next;
            }
        }
    }

    /// Accumulates `d(loss)/d(params)` into `grad`, given `d(loss)/d(output)` for the traced pass.
    pub fn backward(&self, params: &ParameterVector, trace: &Trace, grad_output: &[f64], grad: &mut [f64]) {
        let p = &params.0;
        let mut g = grad_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if l + 1 < self.layers.len() {
                let act = self.cfg.activation;
                for (gi, &z) in g.iter_mut().zip(&trace.pre[l]) {
                    *gi *= act.derivative(z);
                }
            }
            let a = &trace.inputs[l];
            let (wo, bo) = (layer.weight_offset, layer.bias_offset);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &mut grad[wo + o * layer.fan_in..wo + (o + 1) * layer.fan_in];
                for (r, &ai) in row.iter_mut().zip(a) {
                    *r += go * ai;
                }
                grad[bo + o] += go;
            }
            let w = &p[wo..bo];
            let mut g_in = vec![0.0; layer.fan_in];
            for (row, &go) in w.chunks_exact(layer.fan_in).zip(&g) {
                if go == 0.0 {
                    continue;
                }
                for (gi, &wi) in g_in.iter_mut().zip(row) {
                    *gi += go * wi;
                }
            }
            g = g_in;
        }
        let e = self.cfg.embed_dim;
        let start = self.cfg.input_dim + self.cfg.time_features;
        let row = self.embed_offset + trace.class * e;
        for (k, gk) in g[start..start + e].iter().enumerate() {
            grad[row + k] += gk;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const MAGIC: &[u8; 8] = b"PCLNET01";
const OPTIMIZER_TAG: &[u8; 8] = b"ADAMSTAT";

/// Everything needed to resume training or to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub step: u64,
    pub params: ParameterVector,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    /// Layout: the 8-byte magic `PCLNET01`; a little-endian `u32` byte length
    /// followed by that many bytes of UTF-8 `key=value` lines (the config
    /// block); a `u64` parameter count and the parameters as little-endian
    /// `f64` in flattening order. An optional trailer holds optimizer state:
    /// the tag `ADAMSTAT`, a `u64` step count, then the first and second moment
    /// vectors as `f64` arrays of the parameter length.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut block = BTreeMap::new();
        block.insert("input_dim", self.net.input_dim.to_string());
        block.insert(
            "hidden",
            self.net.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        block.insert("time_features", self.net.time_features.to_string());
        block.insert("num_classes", self.net.num_classes.to_string());
        block.insert("embed_dim", self.net.embed_dim.to_string());
        block.insert("activation", self.net.activation.name().to_string());
        block.insert("beta1", self.schedule.beta1.to_string());
        block.insert("beta_t", self.schedule.beta_t.to_string());
        block.insert("steps", self.schedule.steps.to_string());
        block.insert(
            "sigma_mode",
            match self.schedule.sigma_mode {
                crate::schedule::SigmaMode::Beta => "beta",
                crate::schedule::SigmaMode::TildeBeta => "tilde-beta",
            }
            .to_string(),
        );
        block.insert("train_step", self.step.to_string());
        let text: String = block.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

        w.write_all(MAGIC)?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, &self.params.0)?;
        if let Some(opt) = &self.optimizer {
            w.write_all(OPTIMIZER_TAG)?;
            w.write_all(&opt.step.to_le_bytes())?;
            write_f64s(&mut w, &opt.m)?;
            write_f64s(&mut w, &opt.v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Format("truncated checkpoint".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let len = read_u32(&mut r)? as usize;
        let mut text = vec![0u8; len];
        r.read_exact(&mut text).map_err(|_| Error::Format("truncated config block".into()))?;
        let text = String::from_utf8(text).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let mut block = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line `{line}`")))?;
            block.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| block.get(k).ok_or_else(|| Error::Format(format!("config block lacks `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value for `{k}`: `{v}`")))
        }
        let hidden_text = get("hidden")?;
        let hidden = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text.split(',').map(|h| num("hidden", h)).collect::<Result<_>>()?
        };
        let net = NetworkConfig {
            input_dim: num("input_dim", get("input_dim")?)?,
            hidden,
            time_features: num("time_features", get("time_features")?)?,
            num_classes: num("num_classes", get("num_classes")?)?,
            embed_dim: num("embed_dim", get("embed_dim")?)?,
            activation: Activation::parse(get("activation")?)?,
        };
        let schedule = ScheduleConfig {
            beta1: num("beta1", get("beta1")?)?,
            beta_t: num("beta_t", get("beta_t")?)?,
            steps: num("steps", get("steps")?)?,
            sigma_mode: match get("sigma_mode")?.as_str() {
                "beta" => crate::schedule::SigmaMode::Beta,
                "tilde-beta" => crate::schedule::SigmaMode::TildeBeta,
                other => return Err(Error::Format(format!("unknown sigma mode `{other}`"))),
            },
        };
        let step = num("train_step", get("train_step")?)?;
        let count = read_u64(&mut r)? as usize;
        let expected = NoisePredictor::new(net.clone())?.num_params();
        if count != expected {
            return Err(Error::Format(format!("checkpoint has {count} parameters, config implies {expected}")));
        }
        let params = ParameterVector(read_f64s(&mut r, count)?);
        let mut tag = [0u8; 8];
        let optimizer = match r.read_exact(&mut tag) {
            Err(_) => None,
            Ok(()) if &tag == OPTIMIZER_TAG => {
                let step = read_u64(&mut r)?;
                let m = read_f64s(&mut r, count)?;
                let v = read_f64s(&mut r, count)?;
                Some(AdamState { step, m, v })
            }
            Ok(()) => return Err(Error::Format("unknown checkpoint trailer".into())),
        };
        Ok(Self { net, schedule, step, params, optimizer })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::read(std::io::BufReader::new(f))
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated parameter block".into()))?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
