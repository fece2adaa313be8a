use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Labelled samples with inputs normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f32> {
    inputs: Vec<Tensor<T>>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Tensor<T>>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if let Some(first) = inputs.first() {
            if let Some(odd) = inputs.iter().find(|t| t.shape() != first.shape()) {
                return Err(Error::shape("dataset sample", first.shape(), odd.shape()));
            }
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(Tensor::shape)
    }

    /// Stacks the selected samples into a `(batch, ...)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let items: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.inputs[i]).collect();
        let x = Tensor::stack(&items)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// Seeded random subset holding `fraction` of the samples (at least one).
    pub fn take_fraction(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "data fraction {fraction} outside (0, 1]"
            )));
        }
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let keep = ((self.len() as f64 * fraction).round() as usize).clamp(1, self.len());
        idx.truncate(keep);
        idx.sort_unstable();
        Ok(self.subset(&idx))
    }

    /// Seeded shuffle into train/validation/test parts by fraction.
    pub fn split_three(&self, train: f64, validation: f64, seed: u64) -> Result<(Self, Self, Self)> {
        if train <= 0.0 || validation < 0.0 || train + validation >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "split fractions train={train} validation={validation} leave no test data"
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (self.len() as f64 * train).round() as usize;
        let n_val = (self.len() as f64 * validation).round() as usize;
        let (a, rest) = idx.split_at(n_train.min(idx.len()));
        let (b, c) = rest.split_at(n_val.min(rest.len()));
        Ok((
            self.subset(a).with_split(Split::Train),
            self.subset(b).with_split(Split::Validation),
            self.subset(c).with_split(Split::Test),
        ))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            inputs: self.inputs.iter().map(Tensor::cast).collect(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyntheticKind {
    /// Gaussian clusters on a circle around (0.5, 0.5).
    Blobs { classes: usize, std: f64 },
    /// Two interleaved spirals.
    Spirals { noise: f64 },
    /// `1 x side x side` images with class-dependent stripe orientation.
    Stripes { side: usize, classes: usize, noise: f64 },
}

impl SyntheticKind {
    pub fn blobs(classes: usize) -> Self {
        SyntheticKind::Blobs { classes, std: 0.05 }
    }

    pub fn generate<T: Scalar>(&self, n: usize, seed: u64) -> Result<Dataset<T>> {
        if n == 0 {
            return Err(Error::InvalidArgument("synthetic dataset needs n >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let classes = match *self {
            SyntheticKind::Blobs { classes, std } => {
                if classes < 2 || !(std > 0.0) {
                    return Err(Error::InvalidArgument("blobs need >= 2 classes and std > 0".into()));
                }
                let noise = Normal::new(0.0, std).expect("positive std");
                for i in 0..n {
                    let c = i % classes;
                    let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                    let x = 0.5 + 0.3 * angle.cos() + noise.sample(&mut rng);
                    let y = 0.5 + 0.3 * angle.sin() + noise.sample(&mut rng);
                    inputs.push(Tensor::from_f64(vec![2], &[x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)])?);
                    labels.push(c);
                }
                classes
            }
            SyntheticKind::Spirals { noise } => {
                let jitter = Normal::new(0.0, noise.max(1e-12)).expect("positive noise");
                for i in 0..n {
                    let c = i % 2;
                    let t: f64 = rng.random_range(0.05..1.0);
                    let angle = t * 2.0 * std::f64::consts::TAU + c as f64 * std::f64::consts::PI;
                    let x = 0.5 + 0.45 * t * angle.cos() + jitter.sample(&mut rng);
                    let y = 0.5 + 0.45 * t * angle.sin() + jitter.sample(&mut rng);
                    inputs.push(Tensor::from_f64(vec![2], &[x.clamp(0.0, 1.0), y.clamp(0.0, 1.0)])?);
                    labels.push(c);
                }
                2
            }
            SyntheticKind::Stripes { side, classes, noise } => {
                if side < 2 || classes < 2 {
                    return Err(Error::InvalidArgument("stripes need side >= 2 and >= 2 classes".into()));
                }
                let jitter = Normal::new(0.0, noise.max(1e-12)).expect("positive noise");
                for i in 0..n {
                    let c = i % classes;
                    let orientation = c % 4;
                    let period = 2 + c / 4;
                    let phase: usize = rng.random_range(0..period);
                    let mut px = Vec::with_capacity(side * side);
                    for r in 0..side {
                        for q in 0..side {
                            let coord = match orientation {
                                0 => r,
                                1 => q,
                                2 => r + q,
                                _ => r + side - q,
                            };
                            let on = (coord + phase) % period == 0;
                            let v = if on { 0.9 } else { 0.1 } + jitter.sample(&mut rng);
                            px.push(v.clamp(0.0, 1.0));
                        }
                    }
                    inputs.push(Tensor::from_f64(vec![1, side, side], &px)?);
                    labels.push(c);
                }
                classes
            }
        };
        Dataset::new(inputs, labels, classes, Split::Train)
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Idx { images: PathBuf, labels: PathBuf },
    Csv { path: PathBuf },
    Synthetic { kind: SyntheticKind, n: usize, seed: u64 },
}

impl DatasetSource {
    pub fn load<T: Scalar>(&self) -> Result<Dataset<T>> {
        match self {
            DatasetSource::Idx { images, labels } => load_idx(images, labels),
            DatasetSource::Csv { path } => load_csv(path),
            DatasetSource::Synthetic { kind, n, seed } => kind.generate(*n, *seed),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Format {
        source_name: path.display().to_string(),
        location,
        message: message.into(),
    }
}

/// Parses an IDX header: returns the dimensions and the payload offset.
fn parse_idx_header(bytes: &[u8], path: &Path, expect_dims: usize) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 {
        return Err(format_err(path, "byte 0".into(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(path, "byte 0".into(), "magic must start with two zero bytes"));
    }
    if bytes[2] != 0x08 {
        return Err(format_err(
            path,
            "byte 2".into(),
            format!("unsupported element type 0x{:02x} (only unsigned bytes)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims != expect_dims {
        return Err(format_err(
            path,
            "byte 3".into(),
            format!("expected {expect_dims} dimensions, header declares {ndims}"),
        ));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format_err(path, format!("byte {}", bytes.len()), "truncated dimension header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let payload: usize = dims.iter().product();
    if bytes.len() != header + payload {
        return Err(format_err(
            path,
            format!("byte {}", header),
            format!("payload holds {} bytes, dimensions need {payload}", bytes.len() - header),
        ));
    }
    Ok((dims, header))
}

pub(crate) fn parse_idx_images<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Vec<Tensor<T>>> {
    let (dims, offset) = parse_idx_header(bytes, path, 3)?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    if h == 0 || w == 0 {
        return Err(format_err(path, "byte 8".into(), "image dimensions must be positive"));
    }
    let scale = 1.0 / 255.0;
    (0..n)
        .map(|i| {
            let start = offset + i * h * w;
            let px: Vec<f64> = bytes[start..start + h * w].iter().map(|&b| b as f64 * scale).collect();
            Tensor::from_f64(vec![1, h, w], &px)
        })
        .collect()
}

pub(crate) fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let (_, offset) = parse_idx_header(bytes, path, 1)?;
    Ok(bytes[offset..].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image file (`0x00000803`) with its label file (`0x00000801`).
pub fn load_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let inputs = parse_idx_images(&read(images)?, images)?;
    let labels_v = parse_idx_labels(&read(labels)?, labels)?;
    if inputs.len() != labels_v.len() {
        return Err(format_err(
            labels,
            "byte 4".into(),
            format!("{} labels for {} images", labels_v.len(), inputs.len()),
        ));
    }
    let classes = labels_v.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels_v, classes, Split::Train)
}

/// Loads header-less `label,feature0,feature1,...` rows. Each feature column
/// is min-max scaled to `[0, 1]` over the file.
pub fn load_csv<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let mut fields = line.split(',').map(str::trim);
        let label: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| format_err(path, loc(), "label must be a non-negative integer"))?;
        let feats = fields
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| format_err(path, loc(), "feature is not a finite number"))?;
        match width {
            None if feats.is_empty() => return Err(format_err(path, loc(), "row has no features")),
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(format_err(
                    path,
                    loc(),
                    format!("ragged row: {} features, expected {w}", feats.len()),
                ))
            }
            _ => {}
        }
        rows.push(feats);
        labels.push(label);
    }
    let width = width.ok_or(Error::EmptyDataset)?;
    let mut lo = vec![f64::INFINITY; width];
    let mut hi = vec![f64::NEG_INFINITY; width];
    for r in &rows {
        for (j, &v) in r.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    let inputs = rows
        .iter()
        .map(|r| {
            let scaled: Vec<f64> = r
                .iter()
                .enumerate()
                .map(|(j, &v)| if hi[j] > lo[j] { (v - lo[j]) / (hi[j] - lo[j]) } else { 0.0 })
                .collect();
            Tensor::from_f64(vec![width], &scaled)
        })
        .collect::<Result<Vec<_>>>()?;
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(inputs, labels, classes, Split::Train)
}
