//! Tandem-head detection ensemble with variance-based OOD scoring.
//!
//! The crate implements the full stack at desk scale and without a deep
//! learning framework:
//!
//! - [`tensor`], [`mlp`], [`optim`], [`gradcheck`]: dense linear algebra,
//!   feed-forward networks with analytic backward passes, AdamW, and a
//!   finite-difference gradient oracle;
//! - [`world`]: seeded synthetic detection scenes and query features in
//!   in-distribution, near-OOD, far-OOD, and held-out-novel-class regimes;
//! - [`model`]: the shared trunk with duplicated tandem detection heads and
//!   mean-fusion inference (plus a single-head vanilla mode);
//! - [`matching`], [`losses`]: bipartite matching and the aiding / quelling /
//!   diversity loss stack with analytic gradients;
//! - [`monitor`]: image- and object-level uncertainty from tandem
//!   disagreement;
//! - [`metrics`]: AUROC, AUPR, FPR@95, DE@95, Pearson calibration splits,
//!   and COCO-style average precision.

pub mod error;
pub mod gradcheck;
pub mod geometry;
pub mod jsonx;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod monitor;
pub mod optim;
pub mod tensor;
pub mod world;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use tensor::Tensor2;
