//! Train-time L2 feature normalization, feature-norm OoD scoring, and
//! neural-collapse measurement on a small, fully auditable MLP stack.
//!
//! A classifier trained with cross entropy tends to produce feature vectors
//! of similar length for every input. Normalizing features to the unit sphere
//! during training removes that pressure: gradients become orthogonal to the
//! features, pre-normalization norms grow freely, and a sample's recorded
//! norm at test time becomes a useful out-of-distribution score (higher norm,
//! more in-distribution). This crate implements the whole loop at desk scale:
//!
//! - [`linalg`]: dense matrices, a Jacobi symmetric eigensolver, and a PSD
//!   pseudoinverse.
//! - [`rng`]: a seeded, platform-independent generator whose state serializes
//!   into checkpoints.
//! - [`model`]: leaky-ReLU MLP encoder, the normalization layer with its
//!   exact projection Jacobian, and an explicit backward pass.
//! - [`train`]: deterministic SGD with a step schedule and per-epoch
//!   checkpoints.
//! - [`collapse`]: NC1, equinormality, equiangularity, norm dispersion, and
//!   the cross-entropy lower bound.
//! - [`ood`]: scoring rules (feature norm, max softmax, max logit, logit
//!   norm, scaled softmax), rank-based AUROC, and FPR at a TPR target.
//! - [`analysis`]: checkpoint-replay analyses of training dynamics.
//! - [`data`]: synthetic blob benchmarks, OoD variants, and a raw image
//!   binary loader.
//! - [`experiment`]: run directories, CSV reports, manifests, and the
//!   train/eval/analyze/compare entry points behind the CLI.
//!
//! See the `examples/` directory for one runnable walkthrough per capability;
//! start with `train_and_score`.

pub mod analysis;
pub mod checkpoint;
pub mod collapse;
pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod model;
pub mod ood;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use rng::RngState;
