//! Epoch-level training and evaluation loops over row-major sample buffers.

use crate::engine::{sgd_step, Network, SgdConfig};
use crate::error::Result;
use crate::rng::Rng;
use rand::seq::SliceRandom;

/// Optimizer settings shared by every training procedure; the step count
/// is filled in per run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.1,
            lr_min: 0.0,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
        }
    }
}

impl OptimConfig {
    pub fn sgd(&self, total_steps: usize) -> SgdConfig {
        SgdConfig {
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            nesterov: self.nesterov,
            total_steps: total_steps.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    /// Accuracy of the training forward passes, accumulated over the epoch.
    pub accuracy: f64,
    pub cost_units: u64,
    pub steps: usize,
}

/// Optimizer steps in one epoch over `n` samples. A trailing batch of a
/// single sample is dropped because training-mode batchnorm needs two.
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n / batch + usize::from(n % batch >= 2)
}

/// Source of training rows: `x` holds `dim` values per sample.
#[derive(Clone, Copy)]
pub struct Rows<'a> {
    pub x: &'a [f32],
    pub y: &'a [usize],
    pub dim: usize,
}

impl Rows<'_> {
    fn gather(&self, idx: &[usize], xb: &mut Vec<f32>, yb: &mut Vec<usize>) {
        xb.clear();
        yb.clear();
        for &i in idx {
            xb.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
            yb.push(self.y[i]);
        }
    }
}

/// One pass over `indices` in an order shuffled by `rng`, one optimizer
/// step per batch. `step` is the global step counter of the schedule.
pub fn train_epoch(
    net: &mut Network<f32>,
    rows: Rows<'_>,
    indices: &[usize],
    batch: usize,
    rng: &mut Rng,
    step: &mut usize,
    sgd: &SgdConfig,
) -> Result<EpochStats> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut stats = EpochStats::default();
    let mut seen = 0usize;
    let mut correct = 0.0;
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    for chunk in order.chunks(batch) {
        if chunk.len() < 2 {
            continue;
        }
        rows.gather(chunk, &mut xb, &mut yb);
        let (loss, acc) = net.loss_and_backward(&xb, &yb)?;
        let s = (*step).min(sgd.total_steps);
        sgd_step(net, s, sgd)?;
        *step += 1;
        stats.loss += loss * chunk.len() as f64;
        correct += acc * chunk.len() as f64;
        seen += chunk.len();
        stats.cost_units += net.step_cost(chunk.len());
        stats.steps += 1;
    }
    if seen > 0 {
        stats.loss /= seen as f64;
        stats.accuracy = correct / seen as f64;
    }
    Ok(stats)
}

/// Evaluation-mode accuracy over `indices` and its forward cost.
pub fn accuracy(net: &mut Network<f32>, rows: Rows<'_>, indices: &[usize], chunk: usize) -> Result<(f64, u64)> {
    if indices.is_empty() {
        return Ok((0.0, 0));
    }
    let mut correct = 0usize;
    let (mut xb, mut yb) = (Vec::new(), Vec::new());
    for part in indices.chunks(chunk.max(1)) {
        rows.gather(part, &mut xb, &mut yb);
        correct += net.evaluate(&xb, &yb)?.1;
    }
    Ok((correct as f64 / indices.len() as f64, net.forward_cost(indices.len())))
}
