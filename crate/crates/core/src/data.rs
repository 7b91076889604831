//! Long-tailed synthetic datasets with analytically known class distributions.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// Exponentially decaying class sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSpec {
    pub num_classes: usize,
    /// Size of the largest class (class 0).
    pub base_count: usize,
    /// Ratio of smallest to largest class size, in `(0, 1]`.
    pub imb: f64,
}

/// Per-class counts `round(n_max * imb^(i / (C - 1)))`, rounded half away
/// from zero and clamped to at least one sample.
pub fn longtail_counts(spec: &ImbalanceSpec) -> Result<Vec<usize>> {
    if spec.num_classes < 2 {
        return Err(invalid(format!("need at least 2 classes, got {}", spec.num_classes)));
    }
    if !(spec.imb > 0.0 && spec.imb <= 1.0) {
        return Err(invalid(format!("imbalance factor must be in (0, 1], got {}", spec.imb)));
    }
    if spec.base_count < 1 {
        return Err(invalid("base count must be >= 1"));
    }
    let last = (spec.num_classes - 1) as f64;
    Ok((0..spec.num_classes)
        .map(|i| {
            let n = spec.base_count as f64 * spec.imb.powf(i as f64 / last);
            (n.round() as usize).max(1)
        })
        .collect())
}

/// Isotropic Gaussian mixture with one component per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl ToyMixtureSpec {
    /// Builds a mixture, normalizing nothing: weights must already sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        let spec = Self { weights, means, scales };
        spec.validate()?;
        Ok(spec)
    }

    /// Mixture whose weights are the empirical class proportions of `counts`.
    pub fn with_counts(counts: &[usize], means: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("class counts".into()));
        }
        let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Self::new(weights, means, scales)
    }

    /// `k` classes on a circle of the given radius in 2-D.
    pub fn ring(k: usize, radius: f64, scale: f64, weights: Vec<f64>) -> Result<Self> {
        let means = (0..k)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(weights, means, vec![scale; k])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::Empty("mixture components".into()));
        }
        if self.means.len() != k {
            return Err(Error::DimensionMismatch { expected: k, actual: self.means.len() });
        }
        if self.scales.len() != k {
            return Err(Error::DimensionMismatch { expected: k, actual: self.scales.len() });
        }
        let d = self.means[0].len();
        if d == 0 {
            return Err(invalid("mixture dimension must be >= 1"));
        }
        for m in &self.means {
            if m.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: m.len() });
            }
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0)) {
            return Err(invalid(format!("component scale must be > 0, got {s}")));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("mixture weights must be non-negative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Log of `N(x; m_k, s_k^2 I)`.
    pub fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let s2 = self.scales[k] * self.scales[k];
        let sq: f64 = x.iter().zip(&self.means[k]).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = x.len() as f64;
        -0.5 * sq / s2 - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln()
    }

    /// Maximum-posterior class under the mixture; ties go to the lowest index.
    pub fn bayes_class(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..self.num_classes() {
            let score = self.weights[k].ln() + self.component_log_density(k, x);
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        best
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Mixture(ToyMixtureSpec),
    Raster { noise: f64 },
    Resampled,
    Generated { omega: f64 },
    Loaded,
}

/// Labeled samples stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    num_classes: usize,
    samples: Vec<f64>,
    labels: Vec<usize>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        dim: usize,
        num_classes: usize,
        samples: Vec<f64>,
        labels: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be >= 1"));
        }
        if samples.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch { expected: labels.len() * dim, actual: samples.len() });
        }
        if let Some(&c) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::ClassOutOfRange { class: c, max: num_classes.saturating_sub(1) });
        }
        Ok(Self { dim, num_classes, samples, labels, provenance })
    }

    pub fn empty(dim: usize, num_classes: usize, provenance: Provenance) -> Self {
        Self { dim, num_classes, samples: Vec::new(), labels: Vec::new(), provenance }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn flat_samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.samples.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    pub fn push(&mut self, x: &[f64], label: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        if label >= self.num_classes {
            return Err(Error::ClassOutOfRange { class: label, max: self.num_classes - 1 });
        }
        self.samples.extend_from_slice(x);
        self.labels.push(label);
        Ok(())
    }

    /// Appends every sample of `other`, which must share dimension and class count.
    pub fn extend(&mut self, other: &LabeledDataset) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: other.dim });
        }
        for (x, c) in other.iter() {
            self.push(x, c)?;
        }
        Ok(())
    }

    /// Indices of the samples in each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes];
        for (i, &c) in self.labels.iter().enumerate() {
            idx[c].push(i);
        }
        idx
    }

    /// Samples of one class as a row list.
    pub fn class_samples(&self, class: usize) -> Vec<Vec<f64>> {
        self.iter().filter(|(_, c)| *c == class).map(|(x, _)| x.to_vec()).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "dim,label")?;
        for j in 0..self.dim {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for (x, c) in self.iter() {
            write!(w, "{},{}", self.dim, c)?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses the CSV layout written by [`write_csv`](Self::write_csv).
    ///
    /// The class count is the larger of `min_classes` and one past the largest label.
    pub fn read_csv<R: BufRead>(r: R, min_classes: usize) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Format("missing header".into()))??;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 3 || cols[0] != "dim" || cols[1] != "label" {
            return Err(Error::Format(format!("unexpected header `{header}`")));
        }
        let dim = cols.len() - 2;
        for (j, name) in cols[2..].iter().enumerate() {
            if *name != format!("x{j}") {
                return Err(Error::Format(format!("column {} should be x{j}, found `{name}`", j + 2)));
            }
        }
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim_end().split(',').collect();
            let bad = |what: &str| Error::Format(format!("row {}: {what}", lineno + 2));
            if fields.len() != dim + 2 {
                return Err(bad("wrong field count"));
            }
            let d: usize = fields[0].parse().map_err(|_| bad("bad dim"))?;
            if d != dim {
                return Err(bad("dim column disagrees with header"));
            }
            labels.push(fields[1].parse().map_err(|_| bad("bad label"))?);
            for f in &fields[2..] {
                samples.push(f.parse::<f64>().map_err(|_| bad("bad value"))?);
            }
        }
        let num_classes = labels.iter().map(|c| c + 1).max().unwrap_or(0).max(min_classes);
        Self::new(dim, num_classes, samples, labels, Provenance::Loaded)
    }
}

/// Class counts and proportions of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub total: usize,
    pub counts: Vec<usize>,
    pub weights: Vec<f64>,
}

impl DatasetStats {
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Empty("class counts".into()));
        }
        let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self { total, counts: counts.to_vec(), weights })
    }
}

pub fn class_stats(ds: &LabeledDataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset".into()));
    }
    let mut counts = vec![0usize; ds.num_classes()];
    for &c in ds.labels() {
        counts[c] += 1;
    }
    let total = ds.len();
    let weights = counts.iter().map(|&n| n as f64 / total as f64).collect();
    Ok(DatasetStats { total, counts, weights })
}

/// Draws `counts[k]` samples from component `k` of the mixture.
///
/// Each class uses its own RNG stream derived from `seed`.
pub fn generate_gmm_dataset(spec: &ToyMixtureSpec, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if counts.len() != spec.num_classes() {
        return Err(Error::DimensionMismatch { expected: spec.num_classes(), actual: counts.len() });
    }
    let d = spec.dim();
    let total: usize = counts.iter().sum();
    let mut samples = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    for (k, &n) in counts.iter().enumerate() {
        let mut r = rng::stream(seed, &[0x6d6d, k as u64]);
        for _ in 0..n {
            for j in 0..d {
                let z: f64 = r.sample(StandardNormal);
                samples.push(spec.means[k][j] + spec.scales[k] * z);
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(d, spec.num_classes(), samples, labels, Provenance::Mixture(spec.clone()))
}

/// Uniform-over-classes resampling: pick a class uniformly, then a member
/// of that class uniformly with replacement.
pub fn resample_uniform(ds: &LabeledDataset, total: usize, seed: u64) -> Result<LabeledDataset> {
    let idx = ds.class_indices();
    if let Some(k) = idx.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptyClass(k));
    }
    let mut out = LabeledDataset::empty(ds.dim(), ds.num_classes(), Provenance::Resampled);
    let mut r = rng::stream(seed, &[0x7273]);
    for _ in 0..total {
        let c = r.random_range(0..ds.num_classes());
        let i = idx[c][r.random_range(0..idx[c].len())];
        out.push(ds.sample(i), c)?;
    }
    Ok(out)
}

/// Side length of the raster glyphs.
pub const GLYPH_SIDE: usize = 8;

// One 8x8 bitmap per class, one byte per row, most significant bit leftmost.
const GLYPHS: [[u8; GLYPH_SIDE]; 10] = [
    [0x3C, 0x42, 0x42, 0x42, 0x42, 0x42, 0x42, 0x3C], // ring
    [0x18, 0x38, 0x18, 0x18, 0x18, 0x18, 0x18, 0x3C], // vertical bar
    [0x3C, 0x42, 0x02, 0x0C, 0x30, 0x40, 0x40, 0x7E], // two
    [0xFF, 0x00, 0x00, 0xFF, 0x00, 0x00, 0xFF, 0x00], // stripes
    [0x81, 0x42, 0x24, 0x18, 0x18, 0x24, 0x42, 0x81], // cross
    [0xFF, 0x81, 0x81, 0x81, 0x81, 0x81, 0x81, 0xFF], // box
    [0x18, 0x18, 0x18, 0xFF, 0xFF, 0x18, 0x18, 0x18], // plus
    [0x01, 0x03, 0x07, 0x0F, 0x1F, 0x3F, 0x7F, 0xFF], // wedge
    [0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55], // checker
    [0x00, 0x3C, 0x3C, 0x3C, 0x3C, 0x3C, 0x3C, 0x00], // block
];

pub const MAX_GLYPH_CLASSES: usize = GLYPHS.len();

/// The noiseless template for `class`, flattened row-major with values in {-1, 1}.
pub fn glyph_template(class: usize) -> Result<Vec<f64>> {
    let rows = GLYPHS
        .get(class)
        .ok_or(Error::ClassOutOfRange { class, max: MAX_GLYPH_CLASSES - 1 })?;
    Ok(rows
        .iter()
        .flat_map(|row| (0..GLYPH_SIDE).map(move |j| if row & (0x80 >> j) != 0 { 1.0 } else { -1.0 }))
        .collect())
}

/// Class-conditional 8x8 glyphs with isotropic Gaussian pixel noise.
pub fn generate_raster_dataset(counts: &[usize], noise: f64, seed: u64) -> Result<LabeledDataset> {
    if counts.len() > MAX_GLYPH_CLASSES {
        return Err(invalid(format!("raster mode supports at most {MAX_GLYPH_CLASSES} classes")));
    }
    if !(noise > 0.0) {
        return Err(invalid(format!("pixel noise must be > 0, got {noise}")));
    }
    let d = GLYPH_SIDE * GLYPH_SIDE;
    let mut out = LabeledDataset::empty(d, counts.len(), Provenance::Raster { noise });
    let mut x = vec![0.0; d];
    for (k, &n) in counts.iter().enumerate() {
        let template = glyph_template(k)?;
        let mut r = rng::stream(seed, &[0x7261, k as u64]);
        for _ in 0..n {
            for (xi, ti) in x.iter_mut().zip(&template) {
                let z: f64 = r.sample(StandardNormal);
                *xi = ti + noise * z;
            }
            out.push(&x, k)?;
        }
    }
    Ok(out)
}

/// The mixture equivalent of the raster generator, for Bayes-classifier metrics.
pub fn raster_mixture(counts: &[usize], noise: f64) -> Result<ToyMixtureSpec> {
    let means = (0..counts.len()).map(glyph_template).collect::<Result<Vec<_>>>()?;
    ToyMixtureSpec::with_counts(counts, means, vec![noise; counts.len()])
}

/// Writes one 8x8 glyph sample as an ASCII PGM image, mapping [-1.5, 1.5] to [0, 255].
pub fn write_pgm<W: Write>(mut w: W, pixels: &[f64]) -> Result<()> {
    if pixels.len() != GLYPH_SIDE * GLYPH_SIDE {
        return Err(Error::DimensionMismatch { expected: GLYPH_SIDE * GLYPH_SIDE, actual: pixels.len() });
    }
    writeln!(w, "P2\n{GLYPH_SIDE} {GLYPH_SIDE}\n255")?;
    for row in pixels.chunks(GLYPH_SIDE) {
        let vals: Vec<String> = row
            .iter()
            .map(|v| (((v + 1.5) / 3.0).clamp(0.0, 1.0) * 255.0).round().to_string())
            .collect();
        writeln!(w, "{}", vals.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class_1d(counts: &[usize]) -> LabeledDataset {
        let spec = ToyMixtureSpec::with_counts(counts, vec![vec![0.0], vec![2.0]], vec![1.0, 1.0]).unwrap();
        generate_gmm_dataset(&spec, counts, 11).unwrap()
    }

    #[test]
    fn longtail_two_class_anchor() {
        let spec = ImbalanceSpec { num_classes: 2, base_count: 5000, imb: 0.01 };
        assert_eq!(longtail_counts(&spec).unwrap(), vec![5000, 50]);
    }

    #[test]
    fn longtail_balanced_limit() {
        let spec = ImbalanceSpec { num_classes: 10, base_count: 5000, imb: 1.0 };
        assert_eq!(longtail_counts(&spec).unwrap(), vec![5000; 10]);
    }

    // 5000 * 0.01^(5/9) = 387.1318... from a 50-digit evaluation.
    #[test]
    fn longtail_middle_class_matches_oracle() {
        let spec = ImbalanceSpec { num_classes: 10, base_count: 5000, imb: 0.01 };
        let counts = longtail_counts(&spec).unwrap();
        assert_eq!(counts[5], 387);
        assert_eq!(counts, vec![5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50]);
    }

    #[test]
    fn longtail_rejects_bad_specs() {
        let bad = [
            ImbalanceSpec { num_classes: 1, base_count: 10, imb: 0.5 },
            ImbalanceSpec { num_classes: 3, base_count: 0, imb: 0.5 },
            ImbalanceSpec { num_classes: 3, base_count: 10, imb: 0.0 },
            ImbalanceSpec { num_classes: 3, base_count: 10, imb: 1.5 },
        ];
        for spec in bad {
            assert!(longtail_counts(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn longtail_clamps_to_one() {
        let spec = ImbalanceSpec { num_classes: 3, base_count: 10, imb: 0.001 };
        assert_eq!(longtail_counts(&spec).unwrap(), vec![10, 1, 1]);
    }

    #[test]
    fn gmm_class_mean_concentrates() {
        let ds = two_class_1d(&[9500, 500]);
        let xs = ds.class_samples(0);
        assert_eq!(xs.len(), 9500);
        let mean = xs.iter().map(|x| x[0]).sum::<f64>() / 9500.0;
        assert!(mean.abs() < 5.0 / 9500f64.sqrt(), "mean {mean}");
        assert_eq!(ds.class_samples(1).len(), 500);
    }

    #[test]
    fn zero_scale_rejected() {
        let err = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn gmm_rejects_mismatched_counts() {
        let spec = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert!(generate_gmm_dataset(&spec, &[10], 0).is_err());
    }

    #[test]
    fn ring_dataset_is_deterministic() {
        let spec = ToyMixtureSpec::ring(8, 4.0, 0.5, vec![0.125; 8]).unwrap();
        let counts = [40; 8];
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_gmm_dataset(&spec, &counts, 99).unwrap().write_csv(&mut a).unwrap();
        generate_gmm_dataset(&spec, &counts, 99).unwrap().write_csv(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_gmm_dataset(&spec, &counts, 100).unwrap().write_csv(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stats_balanced() {
        let spec = ToyMixtureSpec::ring(4, 1.0, 0.1, vec![0.25; 4]).unwrap();
        let ds = generate_gmm_dataset(&spec, &[25; 4], 1).unwrap();
        let st = class_stats(&ds).unwrap();
        assert_eq!(st.total, 100);
        assert_eq!(st.weights, vec![0.25; 4]);
    }

    #[test]
    fn stats_imbalanced_match_rationals() {
        let st = class_stats(&two_class_1d(&[5000, 50])).unwrap();
        assert_eq!(st.counts, vec![5000, 50]);
        assert!((st.weights[0] - 0.990_099_009_900_990_1).abs() < 1e-9);
        assert!((st.weights[1] - 0.009_900_990_099_009_901).abs() < 1e-9);
    }

    #[test]
    fn stats_single_class_and_empty() {
        let ds = LabeledDataset::new(1, 1, vec![0.0, 1.0], vec![0, 0], Provenance::Loaded).unwrap();
        assert_eq!(class_stats(&ds).unwrap().weights, vec![1.0]);
        let empty = LabeledDataset::empty(1, 2, Provenance::Loaded);
        assert!(class_stats(&empty).is_err());
    }

    #[test]
    fn resample_zero_total_is_empty() {
        let out = resample_uniform(&two_class_1d(&[10, 2]), 0, 3).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn resample_rejects_empty_class() {
        let ds = LabeledDataset::new(1, 2, vec![0.0], vec![0], Provenance::Loaded).unwrap();
        assert_eq!(resample_uniform(&ds, 5, 0), Err(Error::EmptyClass(1)));
    }

    #[test]
    fn resample_balances_long_tail() {
        let ds = two_class_1d(&[5000, 50]);
        let out = resample_uniform(&ds, 1000, 5).unwrap();
        let st = class_stats(&out).unwrap();
        let bound = 5.0 * (1000.0f64 * 0.25).sqrt();
        for &n in &st.counts {
            assert!((n as f64 - 500.0).abs() <= bound, "{:?}", st.counts);
        }
        // Tail samples are copies of the 50 originals.
        let originals = ds.class_samples(1);
        for x in out.class_samples(1) {
            assert!(originals.contains(&x));
        }
    }

    // Chi-square goodness of fit against uniform, 3 degrees of freedom.
    // The 0.999 quantile of chi2(3) is 16.266.
    #[test]
    fn resample_counts_pass_chi_square() {
        let spec = ToyMixtureSpec::ring(4, 1.0, 0.1, vec![0.25; 4]).unwrap();
        let ds = generate_gmm_dataset(&spec, &[50; 4], 2).unwrap();
        for seed in 0..10 {
            let out = resample_uniform(&ds, 2000, seed).unwrap();
            let st = class_stats(&out).unwrap();
            let chi2: f64 = st.counts.iter().map(|&n| (n as f64 - 500.0).powi(2) / 500.0).sum();
            assert!(chi2 < 16.266, "seed {seed}: chi2 {chi2}");
        }
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = two_class_1d(&[3, 2]);
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("dim,label,x0\n1,0,"));
        let back = LabeledDataset::read_csv(&buf[..], 2).unwrap();
        assert_eq!(back.flat_samples(), ds.flat_samples());
        assert_eq!(back.labels(), ds.labels());
        assert!(LabeledDataset::read_csv(&b"label,x0\n"[..], 0).is_err());
        assert!(LabeledDataset::read_csv(&b"dim,label,x0\n2,0,1.0\n"[..], 0).is_err());
    }

    #[test]
    fn raster_templates_are_distinct() {
        let ts: Vec<_> = (0..MAX_GLYPH_CLASSES).map(|k| glyph_template(k).unwrap()).collect();
        for i in 0..ts.len() {
            assert_eq!(ts[i].len(), 64);
            for j in 0..i {
                assert_ne!(ts[i], ts[j]);
            }
        }
        let ds = generate_raster_dataset(&[5, 3], 0.2, 0).unwrap();
        assert_eq!(ds.dim(), 64);
        assert_eq!(class_stats(&ds).unwrap().counts, vec![5, 3]);
        let mut pgm = Vec::new();
        write_pgm(&mut pgm, ds.sample(0)).unwrap();
        assert!(String::from_utf8(pgm).unwrap().starts_with("P2\n8 8\n255\n"));
    }

    #[test]
    fn bayes_tie_goes_to_lowest_index() {
        let spec = ToyMixtureSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![0.0]], vec![1.0, 1.0]).unwrap();
        assert_eq!(spec.bayes_class(&[0.3]), 0);
    }

    proptest! {
        #[test]
        fn longtail_monotone(c in 2usize..50, n in 1usize..10000, imb in 0.001f64..=1.0) {
            let counts = longtail_counts(&ImbalanceSpec { num_classes: c, base_count: n, imb }).unwrap();
            prop_assert_eq!(counts[0], n);
            prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(counts.iter().all(|&k| k >= 1));
        }

        #[test]
        fn stats_weights_sum_to_one(counts in proptest::collection::vec(1usize..200, 2..8), seed in 0u64..1000) {
            let k = counts.len();
            let spec = ToyMixtureSpec::ring(k, 2.0, 0.3, vec![1.0 / k as f64; k]);
            // ring weights may not sum to exactly one in floating point; fall back to counts
            let spec = spec.or_else(|_| ToyMixtureSpec::with_counts(&counts, (0..k).map(|i| vec![i as f64, 0.0]).collect(), vec![0.3; k])).unwrap();
            let ds = generate_gmm_dataset(&spec, &counts, seed).unwrap();
            let st = class_stats(&ds).unwrap();
            prop_assert_eq!(st.counts.iter().sum::<usize>(), st.total);
            prop_assert!((st.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
