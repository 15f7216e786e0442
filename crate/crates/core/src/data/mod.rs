//! Image datasets: generators, CIFAR-10 ingestion, normalization, a
//! fixture-friendly disk format and HoG features.

mod cifar;
mod hog;
mod patterns;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_binary};
pub use hog::{hog_dim, hog_features, HogConfig};
pub use patterns::{generate_patterns, PatternsConfig};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ARKDS001";

/// How stored bytes map to pixel values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelCoding {
    /// `b / 255`, for natural images.
    Unit,
    /// `(b - 127.5) / 32`, for zero-mean Gaussian images.
    Centered,
}

impl PixelCoding {
    pub fn decode(self, b: u8) -> f32 {
        match self {
            PixelCoding::Unit => f32::from(b) / 255.0,
            PixelCoding::Centered => (f32::from(b) - 127.5) / 32.0,
        }
    }

    pub fn encode(self, v: f32) -> u8 {
        let raw = match self {
            PixelCoding::Unit => v * 255.0,
            PixelCoding::Centered => v * 32.0 + 127.5,
        };
        raw.round().clamp(0.0, 255.0) as u8
    }

    fn tag(self) -> u64 {
        match self {
            PixelCoding::Unit => 0,
            PixelCoding::Centered => 1,
        }
    }

    fn from_tag(tag: u64) -> Option<Self> {
        match tag {
            0 => Some(PixelCoding::Unit),
            1 => Some(PixelCoding::Centered),
            _ => None,
        }
    }
}

/// Per-channel affine map applied in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// `N x C x H x W` images held as bytes plus their decoded (and optionally
/// normalized) values, with labels and a train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub name: String,
    pub seed: u64,
    pub num_classes: usize,
    pub channels: usize,
    pub hw: usize,
    pub coding: PixelCoding,
    pixels: Vec<u8>,
    labels: Vec<usize>,
    train: Vec<usize>,
    test: Vec<usize>,
    values: Vec<f32>,
    stats: Option<ChannelStats>,
}

impl ImageDataset {
    /// Builds a dataset and checks its invariants. `is_test[i]` places sample
    /// `i` in the test split.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        seed: u64,
        num_classes: usize,
        channels: usize,
        hw: usize,
        coding: PixelCoding,
        pixels: Vec<u8>,
        labels: Vec<usize>,
        is_test: &[bool],
    ) -> Result<Self> {
        let name = name.into();
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset(name));
        }
        if pixels.len() != n * channels * hw * hw {
            return Err(Error::Shape(format!(
                "{} pixel bytes for {n} images of {channels}x{hw}x{hw}",
                pixels.len()
            )));
        }
        if is_test.len() != n {
            return Err(Error::Shape("split flags must cover every sample".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Domain(format!("label {bad} outside [0, {num_classes})")));
        }
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
        let values = pixels.iter().map(|&b| coding.decode(b)).collect();
        Ok(Self {
            name,
            seed,
            num_classes,
            channels,
            hw,
            coding,
            pixels,
            labels,
            train,
            test,
            values,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.hw * self.hw
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn test(&self) -> &[usize] {
        &self.test
    }

    /// First half of the test split, used for validation-metric scores.
    pub fn validation(&self) -> &[usize] {
        &self.test[..self.test.len() / 2]
    }

    /// Second half of the test split, disjoint from [`Self::validation`];
    /// ground-truth accuracy is measured here.
    pub fn holdout(&self) -> &[usize] {
        &self.test[self.test.len() / 2..]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn stats(&self) -> Option<&ChannelStats> {
        self.stats.as_ref()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let d = self.image_len();
        &self.values[i * d..(i + 1) * d]
    }

    /// Copies the images and labels at `indices` into contiguous buffers.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f32>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.image_len());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.image(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Per-channel standardization with train-split statistics. A channel
    /// with zero variance keeps divisor 1.
    pub fn normalize(&self) -> Result<Self> {
        if self.train.is_empty() {
            return Err(Error::EmptyDataset(format!("{} has no training split", self.name)));
        }
        let plane = self.hw * self.hw;
        let mut mean = vec![0.0f64; self.channels];
        let mut sq = vec![0.0f64; self.channels];
        for &i in &self.train {
            let img = self.image(i);
            for c in 0..self.channels {
                for &v in &img[c * plane..(c + 1) * plane] {
                    mean[c] += f64::from(v);
                    sq[c] += f64::from(v) * f64::from(v);
                }
            }
        }
        let count = (self.train.len() * plane) as f64;
        let mut std = vec![1.0f64; self.channels];
        for c in 0..self.channels {
            mean[c] /= count;
            let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
            if var > 1e-12 {
                std[c] = var.sqrt();
            } else {
                log::warn!("{}: channel {c} has zero variance, divisor left at 1", self.name);
            }
        }
        let mut out = self.clone();
        let d = self.image_len();
        for (i, v) in out.values.iter_mut().enumerate() {
            let c = (i % d) / plane;
            *v = ((f64::from(*v) - mean[c]) / std[c]) as f32;
        }
        out.stats = Some(ChannelStats { mean, std });
        Ok(out)
    }

    /// Writes the header and raw bytes.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        let n_test = self.test.len() as u64;
        for v in [
            self.len() as u64,
            self.channels as u64,
            self.hw as u64,
            self.hw as u64,
            self.num_classes as u64,
            self.seed,
            self.coding.tag(),
            n_test,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.name.len() as u64).to_le_bytes())?;
        w.write_all(self.name.as_bytes())?;
        let labels: Vec<u8> = self.labels.iter().map(|&l| l as u8).collect();
        w.write_all(&labels)?;
        let mut split = vec![0u8; self.len()];
        for &i in &self.test {
            split[i] = 1;
        }
        w.write_all(&split)?;
        w.write_all(&self.pixels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut take = |k: usize| -> std::result::Result<&[u8], String> {
            if cur.len() < k {
                return Err("truncated".to_string());
            }
            let (head, rest) = cur.split_at(k);
            cur = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err("bad magic".into());
        }
        let mut header = [0u64; 9];
        for h in &mut header {
            *h = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        let [n, c, h, w, classes, seed, coding, n_test, name_len] = header;
        if h != w {
            return Err(format!("non-square images {h}x{w}"));
        }
        if classes == 0 || classes > 256 {
            return Err(format!("unsupported class count {classes}"));
        }
        let coding = PixelCoding::from_tag(coding).ok_or_else(|| format!("unknown pixel coding {coding}"))?;
        let name = String::from_utf8(take(name_len as usize)?.to_vec()).map_err(|_| "name is not UTF-8")?;
        let n = n as usize;
        let labels: Vec<usize> = take(n)?.iter().map(|&b| b as usize).collect();
        let split: Vec<bool> = take(n)?.iter().map(|&b| b == 1).collect();
        if split.iter().filter(|&&t| t).count() as u64 != n_test {
            return Err("split flags disagree with header".into());
        }
        let pixels = take(n * (c * h * w) as usize)?.to_vec();
        if !cur.is_empty() {
            return Err(format!("{} trailing bytes", cur.len()));
        }
        Self::new(
            name,
            seed,
            classes as usize,
            c as usize,
            h as usize,
            coding,
            pixels,
            labels,
            &split,
        )
        .map_err(|e| e.to_string())
    }
}

/// Which synthetic generator and its parameters; one record per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticConfig),
    Patterns(PatternsConfig),
    Cifar10 { train: Vec<std::path::PathBuf>, test: Vec<std::path::PathBuf> },
    File { path: std::path::PathBuf },
}

impl DatasetSpec {
    /// Materializes the dataset (unnormalized).
    pub fn build(&self, seed: u64) -> Result<ImageDataset> {
        match self {
            DatasetSpec::Synthetic(cfg) => generate_synthetic(cfg, seed),
            DatasetSpec::Patterns(cfg) => generate_patterns(cfg, seed),
            DatasetSpec::Cifar10 { train, test } => load_cifar10(train, test),
            DatasetSpec::File { path } => ImageDataset::load(path),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> ImageDataset {
        let pixels: Vec<u8> = (0..4 * 3 * 2 * 2).map(|i| (i * 7 % 256) as u8).collect();
        ImageDataset::new("tiny", 3, 2, 3, 2, PixelCoding::Unit, pixels, vec![0, 1, 1, 0], &[false, false, true, false])
            .unwrap()
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let ds = tiny();
        assert_eq!(ds.train(), &[0, 1, 3]);
        assert_eq!(ds.test(), &[2]);
    }

    #[test]
    fn invariants_are_checked() {
        let bad_label = ImageDataset::new("x", 0, 2, 1, 1, PixelCoding::Unit, vec![0], vec![2], &[false]);
        assert!(matches!(bad_label, Err(Error::Domain(_))));
        let bad_len = ImageDataset::new("x", 0, 2, 1, 2, PixelCoding::Unit, vec![0], vec![1], &[false]);
        assert!(matches!(bad_len, Err(Error::Shape(_))));
        let empty = ImageDataset::new("x", 0, 2, 1, 1, PixelCoding::Unit, vec![], vec![], &[]);
        assert!(matches!(empty, Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn disk_roundtrip_is_byte_identical() {
        let ds = tiny();
        let mut buf = Vec::new();
        ds.write_to(&mut buf).unwrap();
        let back = ImageDataset::from_bytes(&buf).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
        assert!(ImageDataset::from_bytes(&buf[..buf.len() - 1]).is_err());
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(ImageDataset::from_bytes(&corrupt).is_err());
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.bin");
        let ds = tiny();
        ds.save(&path).unwrap();
        assert_eq!(ImageDataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn normalized_train_channels_are_standard() {
        let pixels: Vec<u8> = (0..50 * 3 * 4 * 4).map(|i| ((i * 131 + i / 7) % 256) as u8).collect();
        let labels = vec![0; 50];
        let split: Vec<bool> = (0..50).map(|i| i % 5 == 0).collect();
        let ds = ImageDataset::new("n", 0, 1, 3, 4, PixelCoding::Unit, pixels, labels, &split).unwrap();
        let norm = ds.normalize().unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = norm
                .train()
                .iter()
                .flat_map(|&i| norm.image(i)[c * 16..(c + 1) * 16].to_vec())
                .map(f64::from)
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn constant_channel_is_only_centered() {
        let pixels = vec![200u8; 3 * 3 * 2 * 2];
        let ds = ImageDataset::new("c", 0, 1, 3, 2, PixelCoding::Unit, pixels, vec![0; 3], &[false; 3]).unwrap();
        let norm = ds.normalize().unwrap();
        assert!(norm.values().iter().all(|&v| v == 0.0));
        assert_eq!(norm.stats().unwrap().std, vec![1.0; 3]);
    }

    proptest! {
        #[test]
        fn coding_roundtrips_bytes(b in any::<u8>()) {
            for coding in [PixelCoding::Unit, PixelCoding::Centered] {
                prop_assert_eq!(coding.encode(coding.decode(b)), b);
            }
        }
    }
}
