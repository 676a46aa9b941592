//! Data sources: IDX image files, a Gaussian-mixture generator with a
//! closed-form posterior, long-tail subsampling and warm-up/pool/test splits.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ProbVector, RngStream};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Features in `[0, 1]` with class labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("dataset features must lie in [0, 1]".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
            name: name.into(),
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: self.name.clone(),
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::ShortRead(what.to_string()))
}

/// Parses an IDX image/label pair already in memory. `classes` is one more than
/// the largest label (zero for an empty file).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::NotIdx(magic));
    }
    let n = read_u32(images, 4, "image header")? as usize;
    let rows = read_u32(images, 8, "image header")? as usize;
    let cols = read_u32(images, 12, "image header")? as usize;
    let magic = read_u32(labels, 0, "label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::NotIdx(magic));
    }
    let n_labels = read_u32(labels, 4, "label header")? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    let pixels = images
        .get(16..16 + n * dim)
        .ok_or_else(|| Error::ShortRead("image payload".into()))?;
    let ys = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::ShortRead("label payload".into()))?;
    let features = Matrix::from_vec(n, dim, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = ys.iter().map(|&y| y as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes, "idx")
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = std::fs::read(&images_path).map_err(|e| Error::io(&images_path, e))?;
    let labels = std::fs::read(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
    let mut ds = parse_idx(&images, &labels)?;
    ds.name = images_path
        .as_ref()
        .file_stem()
        .map_or_else(|| "idx".into(), |s| s.to_string_lossy().into_owned());
    Ok(ds)
}

/// Encodes a dataset as an IDX pair with images of `rows × cols` pixels.
/// Pixels are rounded to the nearest multiple of 1/255.
pub fn encode_idx(dataset: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: rows * cols,
        });
    }
    if dataset.labels.iter().any(|&y| y > u8::MAX as usize) {
        return Err(Error::InvalidConfig("IDX labels must fit in a byte".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.len() * rows * cols);
    for word in [IDX_IMAGES_MAGIC, n, rows as u32, cols as u32] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend(dataset.features.as_slice().iter().map(|v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    for word in [IDX_LABELS_MAGIC, n] {
        labels.extend_from_slice(&word.to_be_bytes());
    }
    labels.extend(dataset.labels.iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (images, labels) = encode_idx(dataset, rows, cols)?;
    std::fs::write(&images_path, images).map_err(|e| Error::io(&images_path, e))?;
    std::fs::write(&labels_path, labels).map_err(|e| Error::io(&labels_path, e))?;
    Ok(())
}

/// Isotropic Gaussian mixture with uniform class prior and symmetric label noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibratedSynthConfig {
    pub classes: usize,
    pub dim: usize,
    /// One mean per class; when absent, means sit evenly on a circle of
    /// diameter `separation` in the first two coordinates.
    #[serde(default)]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Per-class standard deviations; a single value applies to all classes.
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default)]
    pub label_noise: f64,
    pub n: usize,
}

fn default_separation() -> f64 {
    4.0
}

fn default_scales() -> Vec<f64> {
    vec![1.0]
}

impl CalibratedSynthConfig {
    pub fn new(classes: usize, dim: usize, label_noise: f64, n: usize) -> Self {
        Self {
            classes,
            dim,
            means: None,
            separation: default_separation(),
            scales: default_scales(),
            label_noise,
            n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("synthetic data needs at least 2 classes".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("synthetic dim must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::InvalidConfig("label_noise must lie in [0, 0.5)".into()));
        }
        if self.scales.len() != 1 && self.scales.len() != self.classes {
            return Err(Error::InvalidConfig("scales needs 1 or `classes` entries".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidConfig("cluster scales must be > 0".into()));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return Err(Error::InvalidConfig("separation must be finite and >= 0".into()));
        }
        if let Some(means) = &self.means {
            if means.len() != self.classes || means.iter().any(|m| m.len() != self.dim) {
                return Err(Error::InvalidConfig("means must be classes × dim".into()));
            }
        }
        Ok(())
    }

    fn resolved_means(&self) -> Vec<Vec<f64>> {
        if let Some(means) = &self.means {
            return means.clone();
        }
        let radius = self.separation / 2.0;
        (0..self.classes)
            .map(|c| {
                let mut mu = vec![0.0; self.dim];
                if self.dim == 1 {
                    mu[0] = c as f64 * self.separation;
                } else {
                    let angle = 2.0 * PI * c as f64 / self.classes as f64;
                    mu[0] = radius * angle.cos();
                    mu[1] = radius * angle.sin();
                }
                mu
            })
            .collect()
    }

    fn scale(&self, class: usize) -> f64 {
        if self.scales.len() == 1 {
            self.scales[0]
        } else {
            self.scales[class]
        }
    }
}

/// Closed-form `P(Y | x)` for a generated mixture, evaluated in the
/// normalized feature space of the returned dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePosterior {
    means: Vec<Vec<f64>>,
    scales: Vec<f64>,
    label_noise: f64,
    offset: Vec<f64>,
    span: Vec<f64>,
}

impl MixturePosterior {
    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// Noise-free class posterior at a raw (unnormalized) point.
    fn clean_raw(&self, raw: &[f64]) -> Vec<f64> {
        let d = raw.len() as f64;
        let log_lik: Vec<f64> = self
            .means
            .iter()
            .zip(&self.scales)
            .map(|(mu, &s)| {
                let sq: f64 = raw.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum();
                -sq / (2.0 * s * s) - d * s.ln()
            })
            .collect();
        let top = log_lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_lik.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    fn to_raw(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.offset.iter().zip(&self.span))
            .map(|(v, (o, s))| o + v * s)
            .collect()
    }

    /// Posterior over observed labels at normalized `x`.
    pub fn posterior_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.offset.len() {
            return Err(Error::DimensionMismatch {
                expected: self.offset.len(),
                got: x.len(),
            });
        }
        let clean = self.clean_raw(&self.to_raw(x));
        let k = clean.len() as f64;
        let eta = self.label_noise;
        Ok(clean
            .iter()
            .map(|&c| (1.0 - eta) * c + eta / (k - 1.0) * (1.0 - c))
            .collect())
    }

    pub fn posterior(&self, x: &[f64]) -> Result<ProbVector> {
        ProbVector::new(self.posterior_raw(x)?)
    }

    pub fn posteriors(&self, features: &Matrix) -> Result<Vec<ProbVector>> {
        features.iter_rows().map(|x| self.posterior(x)).collect()
    }
}

/// Draws `cfg.n` points from the mixture, min-max normalizes every feature to
/// `[0, 1]`, and returns the matching posterior evaluator.
pub fn make_gaussian_mixture(cfg: &CalibratedSynthConfig, rng: &mut RngStream) -> Result<(Dataset, MixturePosterior)> {
    cfg.validate()?;
    let means = cfg.resolved_means();
    let k = cfg.classes;
    let mut raw = Vec::with_capacity(cfg.n * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let c = rng.below(k);
        let s = cfg.scale(c);
        raw.extend(means[c].iter().map(|m| m + s * rng.normal()));
        let y = if rng.uniform() < cfg.label_noise {
            let other = rng.below(k - 1);
            if other >= c {
                other + 1
            } else {
                other
            }
        } else {
            c
        };
        labels.push(y);
    }
    let mut offset = vec![0.0; cfg.dim];
    let mut span = vec![1.0; cfg.dim];
    if cfg.n > 0 {
        for j in 0..cfg.dim {
            let col = raw.iter().skip(j).step_by(cfg.dim);
            let lo = col.clone().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.cloned().fold(f64::NEG_INFINITY, f64::max);
            offset[j] = lo;
            span[j] = if hi > lo { hi - lo } else { 1.0 };
        }
    }
    let features: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let j = i % cfg.dim;
            ((v - offset[j]) / span[j]).clamp(0.0, 1.0)
        })
        .collect();
    let features = Matrix::from_vec(cfg.n, cfg.dim, features)?;
    let scales = (0..k).map(|c| cfg.scale(c)).collect();
    let posterior = MixturePosterior {
        means,
        scales,
        label_noise: cfg.label_noise,
        offset,
        span,
    };
    Ok((Dataset::new(features, labels, k, "gaussian-mixture")?, posterior))
}

/// Target class counts `floor(n_max · IF^(−c/(K−1)))`, at least 1.
pub fn longtail_counts(n_max: usize, classes: usize, imbalance_factor: f64) -> Vec<usize> {
    if classes == 1 {
        return vec![n_max];
    }
    (0..classes)
        .map(|c| {
            let frac = c as f64 / (classes - 1) as f64;
            let v = n_max as f64 * imbalance_factor.powf(-frac);
            // Absorb representation error so exact products are not floored down.
            ((v + 1e-9).floor() as usize).max(1)
        })
        .collect()
}

/// Subsamples classes to an exponentially decaying profile. `n_max` is the
/// smallest class count of the input, so the first class keeps that many.
pub fn make_longtail(dataset: &Dataset, imbalance_factor: f64, rng: &mut RngStream) -> Result<Dataset> {
    if !(imbalance_factor >= 1.0) || !imbalance_factor.is_finite() {
        return Err(Error::InvalidConfig("imbalance_factor must be >= 1".into()));
    }
    let counts = dataset.class_counts();
    let n_max = counts.iter().copied().min().unwrap_or(0);
    let target = longtail_counts(n_max, dataset.classes, imbalance_factor);
    let mut keep = Vec::new();
    for (c, &want) in target.iter().enumerate() {
        let members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        if want > members.len() {
            return Err(Error::InsufficientClassSamples {
                class: c,
                available: members.len(),
                requested: want,
            });
        }
        keep.extend(rng.choose_distinct(members.len(), want).into_iter().map(|p| members[p]));
    }
    keep.sort_unstable();
    Ok(dataset.subset(&keep))
}

/// Disjoint warm-up, pool and test indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub warmup: Vec<usize>,
    pub warmup_balanced: bool,
    pub pool: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn warmup_size(&self) -> usize {
        self.warmup.len()
    }
}

/// Test indices are a uniform `test_fraction` of the data; the warm-up set is
/// drawn from the rest, balanced across classes when requested (the first
/// `n₀ mod K` classes in a random order get one extra sample).
pub fn plan_split(
    dataset: &Dataset,
    warmup_size: usize,
    test_fraction: f64,
    balanced: bool,
    rng: &mut RngStream,
) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidConfig("test_fraction must lie in [0, 1)".into()));
    }
    let n = dataset.len();
    let n_test = (test_fraction * n as f64).round() as usize;
    if warmup_size + n_test > n {
        return Err(Error::BatchTooLarge {
            k: warmup_size + n_test,
            available: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let rest = &order[n_test..];

    let warmup: Vec<usize> = if balanced && warmup_size > 0 {
        let k = dataset.classes;
        let mut class_order: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut class_order);
        let mut quota = vec![warmup_size / k; k];
        for &c in class_order.iter().take(warmup_size % k) {
            quota[c] += 1;
        }
        let mut picked = Vec::with_capacity(warmup_size);
        for c in 0..k {
            let members: Vec<usize> = rest.iter().copied().filter(|&i| dataset.labels[i] == c).collect();
            if members.len() < quota[c] {
                return Err(Error::InsufficientClassSamples {
                    class: c,
                    available: members.len(),
                    requested: quota[c],
                });
            }
            picked.extend_from_slice(&members[..quota[c]]);
        }
        picked
    } else {
        rest[..warmup_size].to_vec()
    };
    let mut in_warmup = vec![false; n];
    for &i in &warmup {
        in_warmup[i] = true;
    }
    let mut pool: Vec<usize> = rest.iter().copied().filter(|&i| !in_warmup[i]).collect();
    let mut warmup = warmup;
    warmup.sort_unstable();
    pool.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        warmup,
        warmup_balanced: balanced,
        pool,
        test,
        seed: rng.seed(),
    })
}
