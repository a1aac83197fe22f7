//! Reweighted risks for selective classification and calibration.
//!
//! The crate bundles the pieces needed to train and evaluate classifiers with
//! rank-weighted objectives:
//!
//! - [`batch`]: logit/probability/label batches, softmax and prediction dumps.
//! - [`softrank`]: hard ranks and differentiable ranks via permutahedron projection.
//! - [`csf`]: confidence score functions and their gradients.
//! - [`losses`]: cross-entropy, focal, inverse focal and the (regularized) AURC loss.
//! - [`metrics`]: risk–coverage curves, AURC, binned ECE/cwECE, Brier score.
//! - [`calibmaps`]: post-hoc maps, including temperature scaling.
//! - [`oracle`]: exact population quantities on finite distributions, synthetic data.
//! - [`trainer`]: a small MLP with manual backprop and SGD with momentum.
//! - [`gradcheck`]: central finite-difference harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod batch;
pub mod calibmaps;
pub mod csf;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod softrank;
pub mod trainer;

pub use batch::{LabelBatch, LogitBatch, PredictionRecord, ProbBatch};
pub use csf::CsfKind;
pub use error::{Error, Result};
pub use softrank::{SoftRankConfig, SoftRankResult};
