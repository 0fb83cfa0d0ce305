//! Ranks the deleted lines of bug-fixing commits by how likely each one is the
//! root cause of the fixed bug.
//!
//! The pipeline has two halves. A confident-learning denoiser ([`denoise`])
//! prunes suspect root-cause labels using out-of-fold probabilities from a
//! simple classifier ([`baseclf`]). A weighted graph-convolutional network
//! ([`gcnrank`]) then scores every line of a per-commit dependency graph
//! ([`graphbuild`]) and is trained pairwise with the RankNet objective
//! ([`trainer`]). Rankings are scored with Recall@N and mean first rank
//! ([`metrics`]).

pub mod baseclf;
pub mod checkpoint;
pub mod dataset;
pub mod denoise;
pub mod embedding;
pub mod error;
pub mod gcnrank;
pub mod graphbuild;
pub mod metrics;
mod par;
pub mod synth;
pub mod trainer;

pub use crate::dataset::{cross_project_split, kfold_split, load_dataset, DatasetIndex, EdgeRecord, LineNode, Role, Split, Version};
pub use crate::embedding::{hash_embed, load_precomputed, EmbeddingMatrix};
pub use crate::error::{Error, Result};



pub use crate::gcnrank::{ModelConfig, RankModel};
pub use crate::metrics::{EvalReport, RankingResult};
pub use crate::trainer::{run_cross_project, run_kfold, train, TrainConfig};
