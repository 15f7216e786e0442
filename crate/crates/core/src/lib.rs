//! Architecture ranking workbench: threshold-then-freeze evaluation, reduced-training and
//! zero-cost baselines, random search with early rejection, and the experiment runners.

pub mod engine;
pub mod error;
pub mod rng;
pub mod search;
pub mod space;
pub mod data;
pub mod eval;
pub mod experiments;
pub mod metrics;
pub mod proxies;
pub mod threshold;
pub mod train;

pub use error::{Error, Result};
pub use data::{DatasetSpec, ImageDataset};
pub use eval::{EvalOutcome, FearConfig, GroundTruthConfig, ShortregConfig};
pub use proxies::ProxyKind;
pub use search::{SearchConfig, SearchResult};
pub use space::{ArchId, CellSpec, MacroConfig, OpKind};
pub use threshold::{ScoreMetric, ThresholdConfig};
