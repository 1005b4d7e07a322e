//! Trajectory attribution for offline RL at desk scale.
//!
//! The pipeline runs five steps over a grid-world offline dataset: encode
//! trajectories with a recurrent sequence model, cluster the embeddings with
//! X-means, build permutation-invariant data embeddings on the probability
//! simplex, train one explanation policy per left-out cluster, and attribute
//! each policy decision to the cluster whose removal flips it.

pub mod artifacts;
pub mod attribution;
pub mod clustering;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod gridworld;
pub(crate) mod hashing;
pub mod offline_rl;
pub mod pipeline;
pub mod render;
pub mod validate;

pub use attribution::{ActionValue, AttributionResult, Attributor, ExplanationSuite, RlConfig};
pub use clustering::ClusterSet;
pub use data::{BehaviorMix, Dataset, DatasetMeta, Step, Trajectory};
pub use embedding::{DataEmbedding, EmbeddingSource, SimplexMetric};
pub use encoder::{Encoder, EncoderConfig, TokenVocab, TrajectoryEmbedding};
pub use error::{Error, Result};
pub use gridworld::{CellKind, GridAction, GridLayout, GridState};
pub use offline_rl::{TabularMDP, TabularPolicy};
pub use pipeline::{EvalStates, LoadedRun, MPolicy, RunConfig, Stage};
