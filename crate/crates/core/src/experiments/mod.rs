//! Experiment configuration, orchestration and persistence.
//!
//! Every run reads one [`ExperimentConfig`], writes its outputs to an output
//! directory and keeps per-job results in append-only caches there, so a
//! rerun with the same directory trains nothing twice. Seeds flow through
//! named streams: for an experiment seed `s`, ground truth trains with
//! `stream_seed(s, "ground-truth", 0)` and every ranking method with
//! `stream_seed(s, "evaluation", 0)`.

mod runners;
pub mod store;

use crate::data::{DatasetSpec, HogConfig, ImageDataset};
use crate::error::{Error, Result};
use crate::eval::{FearConfig, GroundTruthConfig, ShortregConfig};
use crate::proxies::ProxyKind;
use crate::rng;
use crate::search::FastestUpdateMode;
use crate::space::{ArchId, MacroConfig, SPACE_SIZE};
use crate::threshold::{compute_threshold, ScoreMetric, ThresholdConfig, ThresholdReport};
use crate::train::OptimConfig;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use store::Store;

pub use runners::GtRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GroundTruthBuild,
    RankCompare,
    TimeToThreshold,
    ZeroCostOverEpochs,
    SyntheticZeroCost,
    RandomSearchCompare,
}

/// Architectures under study: explicit ids, or `size` distinct ids drawn
/// uniformly with `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolSpec {
    Ids { ids: Vec<ArchId> },
    Sample { size: usize, #[serde(default)] seed: u64 },
}

impl Default for PoolSpec {
    fn default() -> Self {
        PoolSpec::Sample { size: 32, seed: 0 }
    }
}

impl PoolSpec {
    pub fn resolve(&self) -> Result<Vec<ArchId>> {
        match self {
            PoolSpec::Ids { ids } => {
                let mut seen = std::collections::HashSet::new();
                if let Some(dup) = ids.iter().find(|a| !seen.insert(**a)) {
                    return Err(Error::Config(format!("pool lists arch {dup} twice")));
                }
                if ids.is_empty() {
                    return Err(Error::Config("pool is empty".into()));
                }
                Ok(ids.clone())
            }
            PoolSpec::Sample { size, seed } => {
                if *size == 0 || *size > SPACE_SIZE as usize {
                    return Err(Error::Config(format!("pool size {size} outside 1..={SPACE_SIZE}")));
                }
                let mut r = rng::stream(*seed, "pool", 0);
                let mut ids: Vec<ArchId> = rand::seq::index::sample(&mut r, SPACE_SIZE as usize, *size)
                    .into_iter()
                    .map(|i| ArchId::new(i as u32).expect("in range"))
                    .collect();
                ids.sort_unstable();
                Ok(ids)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    /// Fixed threshold; when absent it is learned from the dataset.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Learner settings; the default uses HoG cells of `max(2, hw / 4)` pixels.
    #[serde(default)]
    pub learner: Option<ThresholdConfig>,
}

/// FEAR settings without the threshold, which is resolved per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FearSection {
    pub freeze_fraction: f64,
    pub stage2_epochs: usize,
    pub stage1_max_epochs: usize,
    pub batch: usize,
    pub score_metric: ScoreMetric,
    pub optim: OptimConfig,
}

impl Default for FearSection {
    fn default() -> Self {
        let f = FearConfig::new(0.5);
        Self {
            freeze_fraction: f.freeze_fraction,
            stage2_epochs: f.stage2_epochs,
            stage1_max_epochs: f.stage1_max_epochs,
            batch: f.batch,
            score_metric: f.score_metric,
            optim: f.optim,
        }
    }
}

impl FearSection {
    /// The full FEAR config for threshold `tau` measured by `threshold_metric`.
    pub fn with_tau(&self, tau: f64, threshold_metric: ScoreMetric) -> FearConfig {
        FearConfig {
            tau,
            threshold_metric,
            freeze_fraction: self.freeze_fraction,
            stage2_epochs: self.stage2_epochs,
            stage1_max_epochs: self.stage1_max_epochs,
            batch: self.batch,
            score_metric: self.score_metric,
            reject_ratio: FearConfig::new(tau).reject_ratio,
            optim: self.optim,
        }
    }
}

/// Grid of reduced-training configurations, epochs x batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShortregSweep {
    pub epochs: Vec<usize>,
    pub batches: Vec<usize>,
    pub score_metric: ScoreMetric,
    pub optim: OptimConfig,
}

impl Default for ShortregSweep {
    fn default() -> Self {
        Self {
            epochs: vec![1, 2, 4, 8],
            batches: vec![32, 64, 128],
            score_metric: ScoreMetric::TrainAccuracy,
            optim: OptimConfig::default(),
        }
    }
}

impl ShortregSweep {
    pub fn configs(&self) -> Vec<ShortregConfig> {
        let mut out = Vec::new();
        for &epochs in &self.epochs {
            for &batch in &self.batches {
                out.push(ShortregConfig {
                    epochs,
                    batch,
                    score_metric: self.score_metric,
                    optim: self.optim,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxySection {
    pub batch: usize,
    pub kinds: Vec<ProxyKind>,
}

impl Default for ProxySection {
    fn default() -> Self {
        Self {
            batch: 64,
            kinds: ProxyKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZcEpochsSection {
    pub epochs: usize,
    pub batch: usize,
    pub optim: OptimConfig,
}

impl Default for ZcEpochsSection {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch: 64,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub budget: usize,
    pub reject_ratio: f64,
    pub fastest_update_mode: FastestUpdateMode,
    /// The reduced-training control of the search comparison.
    pub shortreg: ShortregConfig,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            budget: 50,
            reject_ratio: 4.0,
            fastest_update_mode: FastestUpdateMode::AsPrinted,
            shortreg: ShortregConfig {
                epochs: 15,
                batch: 64,
                score_metric: ScoreMetric::TrainAccuracy,
                optim: OptimConfig::default(),
            },
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

/// One experiment run. Relative paths (output and store directories, the
/// reference config and the reference's own directories) resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "MacroConfig::desk", rename = "macro")]
    pub macro_cfg: MacroConfig,
    #[serde(default)]
    pub pool: PoolSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory holding `ground_truth.jsonl`; defaults to the output directory.
    #[serde(default)]
    pub ground_truth_dir: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: GroundTruthConfig,
    #[serde(default)]
    pub threshold: ThresholdSection,
    #[serde(default)]
    pub fear: FearSection,
    #[serde(default)]
    pub shortreg: ShortregSweep,
    #[serde(default)]
    pub proxies: ProxySection,
    #[serde(default)]
    pub zc_epochs: ZcEpochsSection,
    #[serde(default)]
    pub search: SearchSection,
    /// For `synthetic_zero_cost`: a config file whose dataset and ground
    /// truth serve as the real-data reference for synflow.
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.macro_cfg.validate()?;
        self.pool.resolve()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.proxies.batch < 2 || self.proxies.kinds.is_empty() {
            return Err(Error::Config("proxies need batch >= 2 and at least one kind".into()));
        }
        if self.shortreg.configs().is_empty() {
            return Err(Error::Config("shortreg sweep is empty".into()));
        }
        if let Some(t) = self.threshold.tau {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("threshold.tau {t} outside (0, 1)")));
            }
        }
        self.fear.with_tau(0.5, ScoreMetric::TrainAccuracy).validate()
    }

    pub fn gt_seed(seed: u64) -> u64 {
        rng::stream_seed(seed, "ground-truth", 0)
    }

    pub fn eval_seed(seed: u64) -> u64 {
        rng::stream_seed(seed, "evaluation", 0)
    }

    pub fn threshold_learner(&self) -> ThresholdConfig {
        self.threshold.learner.clone().unwrap_or_else(|| ThresholdConfig {
            hog: HogConfig {
                cell: (self.macro_cfg.image_hw / 4).max(2),
                ..HogConfig::default()
            },
            ..ThresholdConfig::default()
        })
    }
}

/// Stable 64-bit FNV-1a digest of a value's JSON form, used to key caches.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config serializes");
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Everything a runner needs: resolved config, data, pool and caches.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub ds: ImageDataset,
    pub pool: Vec<ArchId>,
    pub(crate) data_fp: String,
    threads: rayon::ThreadPool,
    gt_store: Store<GtRecord>,
    cache_dir: PathBuf,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out: &Path, workers: usize) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let ds = cfg.dataset.build(cfg.data_seed)?.normalize()?;
        check_compatible(&ds, &cfg.macro_cfg)?;
        let pool = cfg.pool.resolve()?;
        let data_fp = fingerprint(&(&cfg.dataset, cfg.data_seed, &cfg.macro_cfg));
        let gt_dir = cfg.ground_truth_dir.clone().unwrap_or_else(|| out.to_path_buf());
        let gt_store = Store::open(&gt_dir.join("ground_truth.jsonl"))?;
        let threads = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            ds,
            pool,
            data_fp,
            threads,
            gt_store,
            cache_dir: out.join("cache"),
        })
    }

    fn cache<R: Serialize + serde::de::DeserializeOwned + Clone>(&self, name: &str) -> Result<Store<R>> {
        Store::open(&self.cache_dir.join(format!("{name}.jsonl")))
    }

    /// FEAR with this run's threshold. Stage 1 compares against the
    /// learner's target metric whether the threshold is fixed or learned.
    pub fn fear(&self) -> Result<(FearConfig, Option<ThresholdReport>)> {
        let (tau, report) = self.tau()?;
        let fear = self.cfg.fear.with_tau(tau, self.cfg.threshold_learner().target_metric);
        Ok((fear, report))
    }

    /// The threshold for this dataset: fixed in the config or learned
    /// (and cached).
    pub fn tau(&self) -> Result<(f64, Option<ThresholdReport>)> {
        if let Some(t) = self.cfg.threshold.tau {
            return Ok((t, None));
        }
        let learner = self.cfg.threshold_learner();
        let store: Store<ThresholdReport> = self.cache("threshold")?;
        let key = format!("{}/{}", self.data_fp, fingerprint(&learner));
        let report = store.get_or_compute(&key, || compute_threshold(&self.ds, &learner))?;
        if !(report.tau > 0.0 && report.tau < 1.0) {
            return Err(Error::Domain(format!(
                "learned threshold {} is unusable; set threshold.tau explicitly",
                report.tau
            )));
        }
        Ok((report.tau, Some(report)))
    }

    fn write_header(&self, w: &mut impl Write, prefix: &str) -> Result<()> {
        let header = serde_json::json!({ "config": &self.cfg });
        writeln!(w, "{prefix}{header}").map_err(|e| Error::io(&self.out, e))
    }

    /// Writes a JSON-lines file whose first line embeds the config.
    fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.out.join(name);
        let mut buf = Vec::new();
        self.write_header(&mut buf, "")?;
        for r in rows {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Writes a CSV file preceded by a `# config=` comment line.
    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.out.join(name);
        let mut buf = Vec::new();
        self.write_header(&mut buf, "# config=")?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn check_compatible(ds: &ImageDataset, m: &MacroConfig) -> Result<()> {
    if ds.hw != m.image_hw || ds.channels != m.in_channels || ds.num_classes != m.num_classes {
        return Err(Error::Config(format!(
            "dataset {} is {}x{}x{} with {} classes but the macro config expects {}x{}x{} with {}",
            ds.name, ds.channels, ds.hw, ds.hw, ds.num_classes, m.in_channels, m.image_hw, m.image_hw, m.num_classes
        )));
    }
    Ok(())
}

/// Outcome of a run: the files written and a JSON summary (also saved as
/// `summary.json`).
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub kind: ExperimentKind,
    pub files: Vec<PathBuf>,
    pub summary: serde_json::Value,
}

/// Runs `cfg` writing into `out` with `workers` parallel jobs.
pub fn run(cfg: &ExperimentConfig, out: &Path, workers: usize) -> Result<RunReport> {
    let ctx = Context::new(cfg.clone(), out, workers)?;
    let (mut files, summary) = match cfg.kind {
        ExperimentKind::GroundTruthBuild => runners::ground_truth_build(&ctx)?,
        ExperimentKind::RankCompare => runners::rank_compare(&ctx)?,
        ExperimentKind::TimeToThreshold => runners::time_to_threshold(&ctx)?,
        ExperimentKind::ZeroCostOverEpochs => runners::zero_cost_over_epochs(&ctx)?,
        ExperimentKind::SyntheticZeroCost => runners::synthetic_zero_cost(&ctx)?,
        ExperimentKind::RandomSearchCompare => runners::random_search_compare(&ctx)?,
    };
    let summary = serde_json::json!({ "kind": cfg.kind, "config": cfg, "results": summary });
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(RunReport {
        kind: cfg.kind,
        files,
        summary,
    })
}

/// Plot-ready CSV of (average cost, whole-population Spearman) per method
/// and seed, read back from a finished `rank_compare` directory.
pub fn plot_data(run_dir: &Path) -> Result<PathBuf> {
    runners::plot_data(run_dir)
}
