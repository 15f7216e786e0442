//! Procedural natural-ish images: noisy oriented gratings whose orientation
//! and spatial frequency encode the class.

use super::{ImageDataset, PixelCoding};
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternsConfig {
    pub n_total: usize,
    pub n_train: usize,
    pub hw: usize,
    #[serde(default = "ten")]
    pub num_classes: usize,
    /// Standard deviation of additive pixel noise, in `[0, 1]` intensity units.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Standard deviation of the per-image orientation jitter, degrees.
    #[serde(default = "default_jitter")]
    pub angle_jitter_deg: f64,
}

fn ten() -> usize {
    10
}

fn default_noise() -> f64 {
    0.2
}

fn default_jitter() -> f64 {
    8.0
}

impl PatternsConfig {
    pub fn desk(n_total: usize, n_train: usize, hw: usize) -> Self {
        Self {
            n_total,
            n_train,
            hw,
            num_classes: 10,
            noise: default_noise(),
            angle_jitter_deg: default_jitter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train >= self.n_total || self.n_train == 0 {
            return Err(Error::Config(format!(
                "need 0 < n_train < n_total, got {} of {}",
                self.n_train, self.n_total
            )));
        }
        if self.num_classes < 2 || self.num_classes > 256 || self.hw < 2 {
            return Err(Error::Config(format!("invalid patterns shape {self:?}")));
        }
        if !(self.noise >= 0.0 && self.angle_jitter_deg >= 0.0) {
            return Err(Error::Config("noise and jitter must be non-negative".into()));
        }
        Ok(())
    }

    /// Orientation in radians and frequency in cycles per pixel for `class`.
    /// Classes split evenly over two frequency bands; orientations are spread
    /// over half a turn within each band.
    pub fn class_params(&self, class: usize) -> (f64, f64) {
        let per_band = self.num_classes.div_ceil(2);
        let (band, slot) = (class / per_band, class % per_band);
        let theta = PI * slot as f64 / per_band as f64;
        let freq = if band == 0 { 0.14 } else { 0.3 };
        (theta, freq)
    }
}

/// Balanced classes (round robin), 3 channels, unit byte coding.
pub fn generate_patterns(cfg: &PatternsConfig, seed: u64) -> Result<ImageDataset> {
    cfg.validate()?;
    let hw = cfg.hw;
    let plane = hw * hw;
    let mut r = rng::stream(seed, "patterns", 0);
    let mut pixels = Vec::with_capacity(cfg.n_total * 3 * plane);
    let mut labels = Vec::with_capacity(cfg.n_total);
    let center = (hw as f64 - 1.0) / 2.0;
    for i in 0..cfg.n_total {
        let class = i % cfg.num_classes;
        let (theta0, freq0) = cfg.class_params(class);
        let jitter: f64 = Distribution::<f64>::sample(&StandardNormal, &mut r);
        let theta = theta0 + cfg.angle_jitter_deg.to_radians() * jitter;
        let freq = freq0 * r.random_range(0.9..1.1);
        let phase = r.random_range(0.0..2.0 * PI);
        let contrast = r.random_range(0.5..1.0);
        let color: [f64; 3] = [r.random_range(0.3..1.0), r.random_range(0.3..1.0), r.random_range(0.3..1.0)];
        let (s, c) = theta.sin_cos();
        for tint in color {
            for y in 0..hw {
                for x in 0..hw {
                    let u = (x as f64 - center) * c + (y as f64 - center) * s;
                    let wave = (2.0 * PI * freq * u + phase).sin();
                    let noise: f64 = Distribution::<f64>::sample(&StandardNormal, &mut r);
                    let v = 0.5 + 0.35 * contrast * tint * wave + cfg.noise * noise;
                    pixels.push(PixelCoding::Unit.encode(v as f32));
                }
            }
        }
        labels.push(class);
    }
    let mut order: Vec<usize> = (0..cfg.n_total).collect();
    order.shuffle(&mut rng::stream(seed, "patterns-split", 0));
    let mut is_test = vec![true; cfg.n_total];
    for &i in &order[..cfg.n_train] {
        is_test[i] = false;
    }
    ImageDataset::new(
        "patterns",
        seed,
        cfg.num_classes,
        3,
        hw,
        PixelCoding::Unit,
        pixels,
        labels,
        &is_test,
    )
}
