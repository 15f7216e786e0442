//! Training-based architecture evaluators: two-stage threshold-then-freeze
//! (FEAR), fixed short training (shortreg), and the full-training oracle.

use crate::data::ImageDataset;
use crate::engine::{cosine_lr, Network, SgdConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::space::{boundary_for_fraction, build_network, freeze_prefix, ArchId, MacroConfig};
use crate::threshold::ScoreMetric;
use crate::train::{accuracy, steps_per_epoch, train_epoch, EpochStats, OptimConfig, Rows};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Evaluation batch used for inference-only passes.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FearConfig {
    pub tau: f64,
    #[serde(default = "default_freeze")]
    pub freeze_fraction: f64,
    #[serde(default = "default_stage2")]
    pub stage2_epochs: usize,
    #[serde(default = "default_stage1_max")]
    pub stage1_max_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Metric compared against `tau` in stage 1.
    #[serde(default)]
    pub threshold_metric: ScoreMetric,
    #[serde(default)]
    pub score_metric: ScoreMetric,
    #[serde(default = "default_ratio")]
    pub reject_ratio: f64,
    #[serde(default)]
    pub optim: OptimConfig,
}

fn default_freeze() -> f64 {
    0.53
}

fn default_stage2() -> usize {
    5
}

fn default_stage1_max() -> usize {
    50
}

fn default_batch() -> usize {
    64
}

fn default_ratio() -> f64 {
    4.0
}

impl FearConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            freeze_fraction: default_freeze(),
            stage2_epochs: default_stage2(),
            stage1_max_epochs: default_stage1_max(),
            batch: default_batch(),
            threshold_metric: ScoreMetric::TrainAccuracy,
            score_metric: ScoreMetric::TrainAccuracy,
            reject_ratio: default_ratio(),
            optim: OptimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.freeze_fraction > 0.0 && self.freeze_fraction < 1.0) {
            return Err(Error::Config(format!("freeze_fraction {} outside (0, 1)", self.freeze_fraction)));
        }
        if !(self.reject_ratio > 1.0) {
            return Err(Error::Config(format!("reject_ratio {} must exceed 1", self.reject_ratio)));
        }
        if self.batch < 2 || self.stage1_max_epochs == 0 {
            return Err(Error::Config("batch >= 2 and stage1_max_epochs >= 1 are required".into()));
        }
        Ok(())
    }
}

/// Stage-1 cost cap for a running fastest time-to-threshold.
pub fn reject_cap(ratio: f64, fastest: u64) -> u64 {
    (ratio * fastest as f64).floor() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortregConfig {
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub score_metric: ScoreMetric,
    #[serde(default)]
    pub optim: OptimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthConfig {
    #[serde(default = "default_gt_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub optim: OptimConfig,
}

fn default_gt_epochs() -> usize {
    60
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        Self {
            epochs: default_gt_epochs(),
            batch: default_batch(),
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub arch: ArchId,
    pub reached_threshold: bool,
    pub score: Option<f64>,
    pub cost_units: u64,
    /// Stage-1 cost: the time to reach the threshold when it was reached.
    pub stage1_cost_units: u64,
    pub wall_ms: u64,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub rejected_early: bool,
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub arch: ArchId,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub cost_units: u64,
    pub wall_ms: u64,
}

fn rows(ds: &ImageDataset) -> Rows<'_> {
    Rows {
        x: ds.values(),
        y: ds.labels(),
        dim: ds.image_len(),
    }
}

fn order_rng(seed: u64, arch: ArchId) -> rng::Rng {
    rng::stream(seed, "train-order", u64::from(arch.get()))
}

/// The metric after an epoch, plus any extra inference cost it took.
fn epoch_metric(
    net: &mut Network<f32>,
    ds: &ImageDataset,
    metric: ScoreMetric,
    train_accuracy: f64,
) -> Result<(f64, u64)> {
    match metric {
        ScoreMetric::TrainAccuracy => Ok((train_accuracy, 0)),
        ScoreMetric::ValAccuracy => {
            if ds.validation().is_empty() {
                return Err(Error::EmptyDataset(format!("{} has no validation samples", ds.name)));
            }
            accuracy(net, rows(ds), ds.validation(), EVAL_CHUNK)
        }
    }
}

/// Result of stage 1, training until the threshold metric is met.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage1 {
    pub reached: bool,
    pub rejected: bool,
    pub epochs: usize,
    pub cost_units: u64,
    pub metric: f64,
    /// Running training accuracy of the last epoch.
    pub train_accuracy: f64,
    /// Optimizer steps taken, the position in the stage-1 schedule.
    pub steps: usize,
}

/// Trains the whole network epoch by epoch on a cosine schedule spanning
/// `max_epochs`. After each epoch the cost cap is checked first, then the
/// threshold, so the outcome under a cap is a pure function of the
/// uncapped trajectory.
#[allow(clippy::too_many_arguments)]
pub fn train_to_threshold(
    net: &mut Network<f32>,
    ds: &ImageDataset,
    tau: f64,
    cost_cap: Option<u64>,
    max_epochs: usize,
    batch: usize,
    metric: ScoreMetric,
    sgd: &SgdConfig,
    order: &mut rng::Rng,
) -> Result<Stage1> {
    let mut s = Stage1 {
        reached: false,
        rejected: false,
        epochs: 0,
        cost_units: 0,
        metric: 0.0,
        train_accuracy: 0.0,
        steps: 0,
    };
    while s.epochs < max_epochs {
        let stats = train_epoch(net, rows(ds), ds.train(), batch, order, &mut s.steps, sgd)?;
        let (m, extra) = epoch_metric(net, ds, metric, stats.accuracy)?;
        s.epochs += 1;
        s.train_accuracy = stats.accuracy;
        s.cost_units += stats.cost_units + extra;
        s.metric = m;
        if cost_cap.is_some_and(|cap| s.cost_units > cap) {
            s.rejected = true;
            break;
        }
        if m >= tau {
            s.reached = true;
            break;
        }
    }
    Ok(s)
}

fn failed_outcome(arch: ArchId, start: Instant, err: &Error) -> EvalOutcome {
    log::warn!("evaluation of arch {arch} failed: {err}");
    EvalOutcome {
        arch,
        reached_threshold: false,
        score: None,
        cost_units: 1,
        stage1_cost_units: 1,
        wall_ms: start.elapsed().as_millis() as u64,
        epochs_stage1: 0,
        epochs_stage2: 0,
        rejected_early: true,
        failed: true,
    }
}

/// FEAR on an already-built network. `fastest_budget` is the running
/// fastest time-to-threshold; stage 1 is capped at `reject_ratio` times it.
pub fn fear_on_network(
    net: &mut Network<f32>,
    arch: ArchId,
    ds: &ImageDataset,
    cfg: &FearConfig,
    fastest_budget: Option<u64>,
    seed: u64,
) -> Result<EvalOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    match fear_inner(net, arch, ds, cfg, fastest_budget, seed, start) {
        Err(e @ Error::Numeric { .. }) => Ok(failed_outcome(arch, start, &e)),
        other => other,
    }
}

fn fear_inner(
    net: &mut Network<f32>,
    arch: ArchId,
    ds: &ImageDataset,
    cfg: &FearConfig,
    fastest_budget: Option<u64>,
    seed: u64,
    start: Instant,
) -> Result<EvalOutcome> {
    let spe = steps_per_epoch(ds.train().len(), cfg.batch);
    if spe == 0 {
        return Err(Error::EmptyDataset(format!("{} has too few training samples", ds.name)));
    }
    let sgd1 = cfg.optim.sgd(cfg.stage1_max_epochs * spe);
    let cap = fastest_budget.map(|b| reject_cap(cfg.reject_ratio, b));
    let mut order = order_rng(seed, arch);
    let s1 = train_to_threshold(
        net,
        ds,
        cfg.tau,
        cap,
        cfg.stage1_max_epochs,
        cfg.batch,
        cfg.threshold_metric,
        &sgd1,
        &mut order,
    )?;
    let mut outcome = EvalOutcome {
        arch,
        reached_threshold: s1.reached,
        score: None,
        cost_units: s1.cost_units,
        stage1_cost_units: s1.cost_units,
        wall_ms: 0,
        epochs_stage1: s1.epochs,
        epochs_stage2: 0,
        rejected_early: s1.rejected,
        failed: false,
    };
    if s1.rejected {
        outcome.wall_ms = start.elapsed().as_millis() as u64;
        return Ok(outcome);
    }

    let boundary = boundary_for_fraction(net, cfg.freeze_fraction);
    freeze_prefix(net, boundary);
    // Stage 2 anneals from wherever stage 1 left the rate.
    let lr_start = cosine_lr(s1.steps.min(sgd1.total_steps), &sgd1)?;
    let sgd2 = SgdConfig {
        lr_max: lr_start.max(cfg.optim.lr_min),
        total_steps: (cfg.stage2_epochs * spe).max(1),
        ..sgd1
    };
    let mut step = 0;
    let mut train_accuracy = s1.train_accuracy;
    for _ in 0..cfg.stage2_epochs {
        let stats = train_epoch(net, rows(ds), ds.train(), cfg.batch, &mut order, &mut step, &sgd2)?;
        outcome.cost_units += stats.cost_units;
        outcome.epochs_stage2 += 1;
        train_accuracy = stats.accuracy;
    }
    let score = if cfg.stage2_epochs == 0 && cfg.score_metric == cfg.threshold_metric {
        s1.metric
    } else {
        let (m, extra) = epoch_metric(net, ds, cfg.score_metric, train_accuracy)?;
        outcome.cost_units += extra;
        m
    };
    outcome.score = Some(score);
    outcome.wall_ms = start.elapsed().as_millis() as u64;
    Ok(outcome)
}

/// Builds `arch` under `seed` and runs FEAR on it.
pub fn fear_evaluate(
    arch: ArchId,
    ds: &ImageDataset,
    macro_cfg: &MacroConfig,
    cfg: &FearConfig,
    fastest_budget: Option<u64>,
    seed: u64,
) -> Result<EvalOutcome> {
    let mut net = build_network(&arch.decode(), macro_cfg, seed)?;
    fear_on_network(&mut net, arch, ds, cfg, fastest_budget, seed)
}

/// Plain training on a full cosine schedule; returns the last epoch's
/// statistics and the total cost.
fn train_plain(
    net: &mut Network<f32>,
    ds: &ImageDataset,
    epochs: usize,
    batch: usize,
    optim: &OptimConfig,
    order: &mut rng::Rng,
) -> Result<(EpochStats, u64)> {
    let spe = steps_per_epoch(ds.train().len(), batch);
    if spe == 0 {
        return Err(Error::EmptyDataset(format!("{} has too few training samples", ds.name)));
    }
    let sgd = optim.sgd(epochs * spe);
    let mut step = 0;
    let mut last = EpochStats::default();
    let mut cost = 0;
    for _ in 0..epochs {
        last = train_epoch(net, rows(ds), ds.train(), batch, order, &mut step, &sgd)?;
        cost += last.cost_units;
    }
    Ok((last, cost))
}

pub fn shortreg_evaluate(
    arch: ArchId,
    ds: &ImageDataset,
    macro_cfg: &MacroConfig,
    cfg: &ShortregConfig,
    seed: u64,
) -> Result<EvalOutcome> {
    if cfg.epochs == 0 || cfg.batch < 2 {
        return Err(Error::Config(format!("invalid shortreg config {cfg:?}")));
    }
    let start = Instant::now();
    let mut net = build_network(&arch.decode(), macro_cfg, seed)?;
    let mut order = order_rng(seed, arch);
    let run = train_plain(&mut net, ds, cfg.epochs, cfg.batch, &cfg.optim, &mut order).and_then(|(last, cost)| {
        let (score, extra) = epoch_metric(&mut net, ds, cfg.score_metric, last.accuracy)?;
        Ok((score, cost + extra))
    });
    match run {
        Ok((score, cost)) => Ok(EvalOutcome {
            arch,
            reached_threshold: false,
            score: Some(score),
            cost_units: cost,
            stage1_cost_units: cost,
            wall_ms: start.elapsed().as_millis() as u64,
            epochs_stage1: cfg.epochs,
            epochs_stage2: 0,
            rejected_early: false,
            failed: false,
        }),
        Err(e @ Error::Numeric { .. }) => Ok(failed_outcome(arch, start, &e)),
        Err(e) => Err(e),
    }
}

/// Full training followed by evaluation-mode test accuracy.
pub fn ground_truth(
    arch: ArchId,
    ds: &ImageDataset,
    macro_cfg: &MacroConfig,
    cfg: &GroundTruthConfig,
    seed: u64,
) -> Result<GroundTruth> {
    if cfg.epochs == 0 || cfg.batch < 2 {
        return Err(Error::Config(format!("invalid ground-truth config {cfg:?}")));
    }
    if ds.holdout().is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no test split", ds.name)));
    }
    let start = Instant::now();
    let mut net = build_network(&arch.decode(), macro_cfg, seed)?;
    let mut order = order_rng(seed, arch);
    let (last, cost) = match train_plain(&mut net, ds, cfg.epochs, cfg.batch, &cfg.optim, &mut order) {
        Ok(r) => r,
        // A diverged network is recorded at zero accuracy instead of aborting the build.
        Err(Error::Numeric { location }) => {
            log::warn!("ground truth for arch {arch} diverged at {location}");
            return Ok(GroundTruth {
                arch,
                test_accuracy: 0.0,
                train_accuracy: 0.0,
                cost_units: 1,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        }
        Err(e) => return Err(e),
    };
    let (test_accuracy, extra) = accuracy(&mut net, rows(ds), ds.holdout(), EVAL_CHUNK)?;
    Ok(GroundTruth {
        arch,
        test_accuracy,
        train_accuracy: last.accuracy,
        cost_units: cost + extra,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}
