//! Histogram-of-oriented-gradients features.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HogConfig {
    /// Cell side in pixels.
    pub cell: usize,
    /// Unsigned orientation bins over `[0, 180)` degrees.
    pub bins: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self { cell: 8, bins: 9 }
    }
}

const EPS: f64 = 1e-6;

/// Feature length for a square `hw` image: `(cells - 1)^2` blocks of
/// `2 x 2` cells, each contributing `4 * bins` values.
pub fn hog_dim(hw: usize, cfg: &HogConfig) -> Result<usize> {
    let cells = hw / cfg.cell.max(1);
    if cfg.cell == 0 || cfg.bins == 0 || cells < 2 {
        return Err(Error::Shape(format!(
            "{hw}x{hw} image is smaller than one 2x2 block of {}-pixel cells",
            cfg.cell
        )));
    }
    Ok((cells - 1) * (cells - 1) * 4 * cfg.bins)
}

/// HoG of a channel-major `channels x hw x hw` image. Three-channel images
/// are reduced to luma first.
pub fn hog_features(image: &[f32], channels: usize, hw: usize, cfg: &HogConfig) -> Result<Vec<f32>> {
    let dim = hog_dim(hw, cfg)?;
    let plane = hw * hw;
    if image.len() != channels * plane {
        return Err(Error::Shape(format!("image of {} values is not {channels}x{hw}x{hw}", image.len())));
    }
    let gray: Vec<f64> = match channels {
        1 => image.iter().map(|&v| f64::from(v)).collect(),
        3 => (0..plane)
            .map(|p| {
                0.299 * f64::from(image[p]) + 0.587 * f64::from(image[plane + p]) + 0.114 * f64::from(image[2 * plane + p])
            })
            .collect(),
        c => return Err(Error::Shape(format!("HoG needs 1 or 3 channels, got {c}"))),
    };

    let cells = hw / cfg.cell;
    let bin_width = 180.0 / cfg.bins as f64;
    let mut hist = vec![0.0f64; cells * cells * cfg.bins];
    for y in 0..cells * cfg.cell {
        for x in 0..cells * cfg.cell {
            // Centered differences; border rows/columns get zero gradient.
            let gx = if x > 0 && x + 1 < hw { gray[y * hw + x + 1] - gray[y * hw + x - 1] } else { 0.0 };
            let gy = if y > 0 && y + 1 < hw { gray[(y + 1) * hw + x] - gray[(y - 1) * hw + x] } else { 0.0 };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            // Bin i is centered at i * bin_width; split between neighbors.
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % cfg.bins;
            let hi = (lo + 1) % cfg.bins;
            let h = &mut hist[((y / cfg.cell) * cells + x / cfg.cell) * cfg.bins..][..cfg.bins];
            h[lo] += mag * (1.0 - frac);
            h[hi] += mag * frac;
        }
    }

    let mut out = Vec::with_capacity(dim);
    let mut block = Vec::with_capacity(4 * cfg.bins);
    for by in 0..cells - 1 {
        for bx in 0..cells - 1 {
            block.clear();
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let c = (by + dy) * cells + bx + dx;
                block.extend_from_slice(&hist[c * cfg.bins..(c + 1) * cfg.bins]);
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            out.extend(block.iter().map(|v| (v / norm) as f32));
        }
    }
    debug_assert_eq!(out.len(), dim);
    Ok(out)
}
