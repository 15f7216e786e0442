//! Task-dependent threshold accuracy from a shallow HoG + MLP learner.

use crate::data::{hog_dim, hog_features, HogConfig, ImageDataset};
use crate::engine::{BlockKind, Layout, Network, NetworkBuilder};
use crate::error::{Error, Result};
use crate::rng;
use crate::train::{accuracy, steps_per_epoch, train_epoch, OptimConfig, Rows};
use serde::{Deserialize, Serialize};

/// Which accuracy a threshold or score refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    #[default]
    TrainAccuracy,
    ValAccuracy,
}

/// Reference threshold reported for full-scale CIFAR-10 training.
pub const REFERENCE_CIFAR10_TAU: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    #[serde(default)]
    pub hog: HogConfig,
    pub hidden_sizes: [usize; 2],
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    #[serde(default)]
    pub target_metric: ScoreMetric,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            hog: HogConfig::default(),
            hidden_sizes: [256, 128],
            epochs: 20,
            batch: 64,
            lr: 0.05,
            seed: 0,
            target_metric: ScoreMetric::TrainAccuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub chance: f64,
    pub config: ThresholdConfig,
}

fn shallow_mlp(input: usize, hidden: [usize; 2], classes: usize, seed: u64) -> Network<f32> {
    let mut r = rng::stream(seed, "threshold-init", 0);
    let mut b = NetworkBuilder::new(Layout::Flat { f: input }, &mut r);
    b.begin_block(BlockKind::Head, "mlp");
    let h1 = b.linear(b.input(), hidden[0], "fc1");
    let a1 = b.relu(h1, "fc1");
    let h2 = b.linear(a1, hidden[1], "fc2");
    let a2 = b.relu(h2, "fc2");
    let out = b.linear(a2, classes, "fc3");
    b.finish(out)
}

/// Trains `HoG -> fc -> relu -> fc -> relu -> fc` with constant-rate
/// Nesterov SGD and returns the final accuracy selected by
/// `cfg.target_metric` as τ.
pub fn compute_threshold(ds: &ImageDataset, cfg: &ThresholdConfig) -> Result<ThresholdReport> {
    if ds.num_classes < 2 {
        return Err(Error::Domain("threshold needs at least two classes".into()));
    }
    if cfg.hidden_sizes.contains(&0) || cfg.batch < 2 || cfg.epochs == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("invalid threshold config {cfg:?}")));
    }
    if ds.train().is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no training split", ds.name)));
    }
    let dim = hog_dim(ds.hw, &cfg.hog)?;
    let mut features = Vec::with_capacity(ds.len() * dim);
    for i in 0..ds.len() {
        features.extend(hog_features(ds.image(i), ds.channels, ds.hw, &cfg.hog)?);
    }
    let rows = Rows {
        x: &features,
        y: ds.labels(),
        dim,
    };
    let mut net = shallow_mlp(dim, cfg.hidden_sizes, ds.num_classes, cfg.seed);
    let optim = OptimConfig {
        lr_max: cfg.lr,
        lr_min: cfg.lr,
        ..OptimConfig::default()
    };
    let sgd = optim.sgd(cfg.epochs * steps_per_epoch(ds.train().len(), cfg.batch));
    let mut order_rng = rng::stream(cfg.seed, "threshold-order", 0);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        train_epoch(&mut net, rows, ds.train(), cfg.batch, &mut order_rng, &mut step, &sgd)?;
    }
    let (train_accuracy, _) = accuracy(&mut net, rows, ds.train(), 256)?;
    let val_accuracy = if ds.validation().is_empty() {
        None
    } else {
        Some(accuracy(&mut net, rows, ds.validation(), 256)?.0)
    };
    let tau = match cfg.target_metric {
        ScoreMetric::TrainAccuracy => train_accuracy,
        ScoreMetric::ValAccuracy => val_accuracy
            .ok_or_else(|| Error::EmptyDataset(format!("{} has no test split for val_accuracy", ds.name)))?,
    };
    let chance = 1.0 / ds.num_classes as f64;
    if tau <= chance || tau >= 1.0 {
        log::warn!("threshold {tau:.4} is outside ({chance:.4}, 1)");
    }
    Ok(ThresholdReport {
        tau,
        train_accuracy,
        val_accuracy,
        chance,
        config: cfg.clone(),
    })
}
