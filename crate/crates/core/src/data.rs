//! Datasets: seeded synthetic classification sets and an IDX image loader.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, ...input shape]`.
    pub features: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Tensor<f64>, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invalid("dataset must not be empty".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::CountMismatch { images: features.rows(), labels: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset { features, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
        }
    }

    /// First `n` samples (all if `n >= len`).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Mini-batch index lists for one epoch; the order is a seeded shuffle.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64 + 1);
        idx.shuffle(&mut rng);
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticKind {
    TwoMoons,
    GaussianBlobs,
    Spirals,
}

impl FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-moons" | "moons" => Ok(SyntheticKind::TwoMoons),
            "gaussian-blobs" | "blobs" => Ok(SyntheticKind::GaussianBlobs),
            "spirals" => Ok(SyntheticKind::Spirals),
            other => Err(Error::Invalid(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::TwoMoons => "two-moons",
            SyntheticKind::GaussianBlobs => "gaussian-blobs",
            SyntheticKind::Spirals => "spirals",
        })
    }
}

/// Blob centers used by [`make_synthetic`].
pub const BLOB_CENTERS: [[f64; 2]; 2] = [[-1.0, 0.0], [1.0, 0.0]];

/// Two-class 2D dataset. Train and test draw from separate generator streams
/// of the same seed, so the splits never share a sample path.
pub fn make_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64, split: Split) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Invalid(format!("synthetic dataset needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::Invalid(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // alternating labels keep class counts within one of each other
        let label = i % 2;
        let (x, y) = match kind {
            SyntheticKind::TwoMoons => {
                let t = PI * rng.gen::<f64>();
                if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            SyntheticKind::GaussianBlobs => (BLOB_CENTERS[label][0], BLOB_CENTERS[label][1]),
            SyntheticKind::Spirals => {
                let r = rng.gen::<f64>();
                let angle = 3.0 * PI * r + label as f64 * PI;
                (r * angle.cos(), r * angle.sin())
            }
        };
        let ex: f64 = rng.sample(StandardNormal);
        let ey: f64 = rng.sample(StandardNormal);
        xs.push(x + noise * ex);
        xs.push(y + noise * ey);
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 2], xs)?, labels, 2, split)
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(path.to_path_buf()))
}

/// Parses an IDX image file (`0x00000803`, dims `N, rows, cols`) into `[N, 1, rows, cols]` in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor<f64>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic { expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    let data = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Parses an IDX label file (`0x00000801`, dim `N`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic { expected: IDX_LABELS_MAGIC, found: magic });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Truncated(path.to_path_buf()));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is `max label + 1` (at least 2).
pub fn load_idx(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let ib = std::fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = std::fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let features = parse_idx_images(&ib, images)?;
    let labels_v = parse_idx_labels(&lb, labels)?;
    if features.rows() != labels_v.len() {
        return Err(Error::CountMismatch { images: features.rows(), labels: labels_v.len() });
    }
    let classes = labels_v.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(features, labels_v, classes, split)
}

/// Serializes images back into IDX bytes (values rounded to the nearest byte).
pub fn write_idx_images(images: &Tensor<f64>) -> Vec<u8> {
    let s = images.shape();
    let (n, rows, cols) = (s[0], s[s.len() - 2], s[s.len() - 1]);
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}
