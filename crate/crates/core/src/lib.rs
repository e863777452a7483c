//! Feature-space reconstruction for tabular data with three cascading
//! actor-critic agents.
//!
//! Each search step clusters the current feature columns into groups, encodes
//! the feature space into a fixed-length state, lets one agent pick a head
//! group, a second an operation and a third a tail group, and generates new
//! columns by crossing them. Every generated column carries a lineage
//! expression over the original columns, and the rendered expression is the
//! column name.

pub mod agents;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod forest;
pub mod info;
pub mod lineage;
pub mod nn;
pub mod report;
pub mod search;
pub mod state;
pub mod transform;

pub use agents::{AgentBundle, AgentConfig, Rewards, Transition};
pub use clustering::{cluster_for_step, fg_cluster, ClusterSet};
pub use dataset::{load_csv, read_csv, write_csv, Column, FeatureMeta, FeatureSet, LoadOptions, Target, TaskHint, TaskKind};
pub use error::{Error, Result};
pub use evaluator::{downstream_score, metric_only, Evaluator, MetricKind};
pub use forest::{fit_forest, ForestConfig, RandomForest};
pub use info::{feature_set_quality, features_group_distance, mutual_information, DistanceKind, InfoContext};
pub use lineage::{BinaryOp, LineageExpr, UnaryOp};
pub use report::write_outputs;
pub use search::{run_search, RunResult, SearchConfig, SearchMode, SeedBlock};
pub use state::{EncoderConfig, EncoderKind, StateVector};
pub use transform::{Operation, OperationSet};
