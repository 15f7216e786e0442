//! Gaussian images labeled by the argmax of random two-layer networks.

use super::{ImageDataset, PixelCoding};
use crate::engine::scalar::gemm_nt;
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_total: usize,
    pub n_train: usize,
    pub hw: usize,
    #[serde(default = "three")]
    pub channels: usize,
    #[serde(default = "ten")]
    pub num_classes: usize,
    #[serde(default = "ten")]
    pub num_labelers: usize,
    #[serde(default)]
    pub balance_classes: bool,
    /// Hidden width of each labeler; `None` means `channels * hw * hw`.
    #[serde(default)]
    pub hidden: Option<usize>,
    /// Candidate images drawn per kept image before balancing gives up.
    #[serde(default = "default_attempts")]
    pub max_attempts_per_image: usize,
}

fn three() -> usize {
    3
}

fn ten() -> usize {
    10
}

fn default_attempts() -> usize {
    1000
}

impl SyntheticConfig {
    pub fn desk(n_total: usize, n_train: usize, hw: usize) -> Self {
        Self {
            n_total,
            n_train,
            hw,
            channels: 3,
            num_classes: 10,
            num_labelers: 10,
            balance_classes: true,
            hidden: None,
            max_attempts_per_image: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train >= self.n_total || self.n_train == 0 {
            return Err(Error::Config(format!(
                "need 0 < n_train < n_total, got {} of {}",
                self.n_train, self.n_total
            )));
        }
        if self.num_labelers != self.num_classes {
            return Err(Error::Config("one labeler per class is required".into()));
        }
        if self.num_classes < 2 || self.num_classes > 256 || self.hw == 0 || self.channels == 0 {
            return Err(Error::Config(format!("invalid synthetic shape {self:?}")));
        }
        Ok(())
    }

    fn dim(&self) -> usize {
        self.channels * self.hw * self.hw
    }
}

struct Labeler {
    w1: Vec<f32>,
    w2: Vec<f32>,
}

fn gaussian(rng: &mut rng::Rng, len: usize, std: f64) -> Vec<f32> {
    (0..len)
        .map(|_| (std * Distribution::<f64>::sample(&StandardNormal, rng)) as f32)
        .collect()
}

/// Labels for a chunk of decoded images `x` (`n x dim`).
fn label_chunk(labelers: &[Labeler], x: &[f32], n: usize, dim: usize, hidden: usize) -> Vec<usize> {
    let mut outputs = vec![f32::NEG_INFINITY; n * labelers.len()];
    let mut h = vec![0.0f32; n * hidden];
    for (k, lab) in labelers.iter().enumerate() {
        gemm_nt(n, dim, hidden, x, &lab.w1, 0.0, &mut h);
        for i in 0..n {
            let row = &h[i * hidden..(i + 1) * hidden];
            outputs[i * labelers.len() + k] = row.iter().zip(&lab.w2).map(|(&a, &w)| a.max(0.0) * w).sum();
        }
    }
    outputs
        .chunks(labelers.len())
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Draws iid standard-normal images (stored with centered byte coding) and
/// labels each by the argmax over `num_labelers` random
/// `linear -> relu -> linear` scorers. With `balance_classes`, candidates
/// of already-full classes are rejected until every class holds its quota.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<ImageDataset> {
    cfg.validate()?;
    let dim = cfg.dim();
    let hidden = cfg.hidden.unwrap_or(dim);
    let mut wrng = rng::stream(seed, "synthetic-labelers", 0);
    let labelers: Vec<Labeler> = (0..cfg.num_labelers)
        .map(|_| Labeler {
            w1: gaussian(&mut wrng, hidden * dim, (1.0 / dim as f64).sqrt()),
            w2: gaussian(&mut wrng, hidden, (1.0 / hidden as f64).sqrt()),
        })
        .collect();

    let quota: Vec<usize> = (0..cfg.num_classes)
        .map(|c| cfg.n_total / cfg.num_classes + usize::from(c < cfg.n_total % cfg.num_classes))
        .collect();
    let mut counts = vec![0usize; cfg.num_classes];
    let mut pixels = Vec::with_capacity(cfg.n_total * dim);
    let mut labels = Vec::with_capacity(cfg.n_total);
    let mut irng = rng::stream(seed, "synthetic-images", 0);
    let budget = cfg.n_total * cfg.max_attempts_per_image.max(1);
    let mut attempts = 0usize;
    let chunk = 256;
    while labels.len() < cfg.n_total {
        if attempts >= budget {
            return Err(Error::Balancing { attempts, counts });
        }
        let n = chunk.min(budget - attempts);
        attempts += n;
        let bytes: Vec<u8> = (0..n * dim)
            .map(|_| PixelCoding::Centered.encode(Distribution::<f64>::sample(&StandardNormal, &mut irng) as f32))
            .collect();
        let x: Vec<f32> = bytes.iter().map(|&b| PixelCoding::Centered.decode(b)).collect();
        for (i, y) in label_chunk(&labelers, &x, n, dim, hidden).into_iter().enumerate() {
            if labels.len() == cfg.n_total {
                break;
            }
            if cfg.balance_classes && counts[y] >= quota[y] {
                continue;
            }
            counts[y] += 1;
            labels.push(y);
            pixels.extend_from_slice(&bytes[i * dim..(i + 1) * dim]);
        }
    }

    // Acceptance order is biased toward rare classes late in the stream.
    let mut order: Vec<usize> = (0..cfg.n_total).collect();
    order.shuffle(&mut rng::stream(seed, "synthetic-split", 0));
    let mut is_test = vec![true; cfg.n_total];
    for &i in &order[..cfg.n_train] {
        is_test[i] = false;
    }
    ImageDataset::new(
        "synthetic",
        seed,
        cfg.num_classes,
        cfg.channels,
        cfg.hw,
        PixelCoding::Centered,
        pixels,
        labels,
        &is_test,
    )
}
