//! Random search with FEAR and early rejection, and the reduced-training control.

use crate::data::ImageDataset;
use crate::error::{Error, Result};
use crate::eval::{fear_evaluate, reject_cap, shortreg_evaluate, EvalOutcome, FearConfig, ShortregConfig};
use crate::rng;
use crate::space::{ArchId, MacroConfig, SPACE_SIZE};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// When the running fastest time-to-threshold is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FastestUpdateMode {
    /// Only when the evaluation also improved the best score.
    #[default]
    AsPrinted,
    /// After every evaluation that reached the threshold.
    AllCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub budget: usize,
    #[serde(default = "default_ratio")]
    pub reject_ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub fastest_update_mode: FastestUpdateMode,
}

fn default_ratio() -> f64 {
    4.0
}

impl SearchConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            reject_ratio: default_ratio(),
            seed,
            fastest_update_mode: FastestUpdateMode::AsPrinted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("search budget must be at least 1".into()));
        }
        if !(self.reject_ratio > 1.0) {
            return Err(Error::Config(format!("reject_ratio must exceed 1, got {}", self.reject_ratio)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRecord {
    pub index: usize,
    pub arch: ArchId,
    /// Fastest time-to-threshold handed to the evaluation, if any.
    pub fastest_at_start: Option<u64>,
    pub outcome: EvalOutcome,
    pub best_so_far: Option<ArchId>,
    pub best_score: Option<f64>,
    pub fastest_so_far: Option<u64>,
    pub cumulative_cost: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ArchId,
    pub best_score: f64,
    pub total_cost: u64,
    pub trace: Vec<SearchRecord>,
}

/// Uniform draws with replacement over the whole space. Both searches use
/// this stream, so equal seeds visit equal architectures.
pub fn sample_stream(seed: u64, n: usize) -> Vec<ArchId> {
    let mut r = rng::stream(seed, "search-sample", 0);
    (0..n)
        .map(|_| ArchId::new(r.random_range(0..SPACE_SIZE)).expect("in range"))
        .collect()
}

struct Tracker {
    best: Option<(ArchId, f64)>,
    cost: u64,
    trace: Vec<SearchRecord>,
}

impl Tracker {
    fn new() -> Self {
        Self {
            best: None,
            cost: 0,
            trace: Vec::new(),
        }
    }

    /// Records `outcome` and reports whether it improved the best score.
    fn push(&mut self, arch: ArchId, fastest_at_start: Option<u64>, outcome: EvalOutcome) -> bool {
        self.cost += outcome.cost_units;
        let improved = match (outcome.rejected_early, outcome.score) {
            (false, Some(s)) if self.best.is_none_or(|(_, b)| s > b) => {
                self.best = Some((arch, s));
                true
            }
            _ => false,
        };
        self.trace.push(SearchRecord {
            index: self.trace.len(),
            arch,
            fastest_at_start,
            outcome,
            best_so_far: self.best.map(|b| b.0),
            best_score: self.best.map(|b| b.1),
            fastest_so_far: fastest_at_start,
            cumulative_cost: self.cost,
        });
        improved
    }

    fn finish(self) -> Result<SearchResult> {
        let (best, best_score) = self.best.ok_or(Error::NoSurvivor {
            evaluated: self.trace.len(),
        })?;
        Ok(SearchResult {
            best,
            best_score,
            total_cost: self.cost,
            trace: self.trace,
        })
    }
}

/// Random search with FEAR. `evaluate(arch, fastest)` must cap stage 1 at
/// `reject_cap(cfg.reject_ratio, fastest)`; `None` means no budget.
pub fn random_search_fear_with(
    cfg: &SearchConfig,
    mut evaluate: impl FnMut(ArchId, Option<u64>) -> Result<EvalOutcome>,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut t = Tracker::new();
    let mut fastest: Option<u64> = None;
    for arch in sample_stream(cfg.seed, cfg.budget) {
        let outcome = evaluate(arch, fastest)?;
        let at_start = fastest;
        let time = (outcome.reached_threshold && !outcome.rejected_early).then_some(outcome.stage1_cost_units);
        let improved = t.push(arch, at_start, outcome);
        let may_update = match cfg.fastest_update_mode {
            FastestUpdateMode::AsPrinted => improved,
            FastestUpdateMode::AllCompleted => true,
        };
        if let (true, Some(time)) = (may_update, time) {
            fastest = Some(fastest.map_or(time, |f| f.min(time)));
        }
        t.trace.last_mut().expect("pushed").fastest_so_far = fastest;
    }
    t.finish()
}

/// Random search with `fear_evaluate` on `ds`. The rejection ratio of
/// `fear` is replaced by the one in `cfg`.
pub fn random_search_fear(
    ds: &ImageDataset,
    macro_cfg: &MacroConfig,
    fear: &FearConfig,
    cfg: &SearchConfig,
    eval_seed: u64,
) -> Result<SearchResult> {
    let fear = FearConfig {
        reject_ratio: cfg.reject_ratio,
        ..fear.clone()
    };
    random_search_fear_with(cfg, |arch, fastest| fear_evaluate(arch, ds, macro_cfg, &fear, fastest, eval_seed))
}

/// Random search ranking by reduced training; nothing is rejected.
pub fn random_search_shortreg_with(
    cfg: &SearchConfig,
    mut evaluate: impl FnMut(ArchId) -> Result<EvalOutcome>,
) -> Result<SearchResult> {
    cfg.validate()?;
    let mut t = Tracker::new();
    for arch in sample_stream(cfg.seed, cfg.budget) {
        let outcome = evaluate(arch)?;
        t.push(arch, None, outcome);
    }
    t.finish()
}

pub fn random_search_shortreg(
    ds: &ImageDataset,
    macro_cfg: &MacroConfig,
    shortreg: &ShortregConfig,
    cfg: &SearchConfig,
    eval_seed: u64,
) -> Result<SearchResult> {
    random_search_shortreg_with(cfg, |arch| shortreg_evaluate(arch, ds, macro_cfg, shortreg, eval_seed))
}

/// Predicts from budget-free outcomes of the same stream which entries a
/// budgeted search rejects: an entry is rejected iff its unbudgeted
/// stage-1 cost exceeds the cap derived from the fastest time so far.
pub fn predict_rejections(cfg: &SearchConfig, unbudgeted: &[EvalOutcome]) -> Vec<bool> {
    let mut fastest: Option<u64> = None;
    let mut best: Option<f64> = None;
    unbudgeted
        .iter()
        .map(|o| {
            let rejected = fastest.is_some_and(|f| o.stage1_cost_units > reject_cap(cfg.reject_ratio, f));
            if !rejected {
                let improved = o.score.is_some_and(|s| best.is_none_or(|b| s > b));
                if improved {
                    best = o.score;
                }
                let counts = match cfg.fastest_update_mode {
                    FastestUpdateMode::AsPrinted => improved,
                    FastestUpdateMode::AllCompleted => true,
                };
                if counts && o.reached_threshold {
                    fastest = Some(fastest.map_or(o.stage1_cost_units, |f| f.min(o.stage1_cost_units)));
                }
            }
            rejected
        })
        .collect()
}
