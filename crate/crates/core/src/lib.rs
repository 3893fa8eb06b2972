//! Static auditing of agent skill packages.

pub mod adjudication;
pub mod audit;
pub mod chain;
pub mod config;
pub mod consolidation;
pub mod corpus_gen;
pub mod evidence;
pub mod metrics;
pub mod package;
pub mod pipeline;
pub mod thresholds;
pub mod verification;

pub use chain::{Chain, PerChain};
pub use package::{FileRole, Label, SkillPackage};
pub use pipeline::{Auditor, PipelineStage};
pub use thresholds::Thresholds;
