//! impactbench: a benchmark engine that scores saliency explanations by
//! how much the classifier's decision actually depends on them.
//!
//! The pipeline classifies an image, asks an explainer for the critical
//! region, removes that region under a fill policy, classifies again, and
//! aggregates decision/confidence changes into impact metrics. An
//! adversarial-patch pipeline additionally measures how well explanations
//! cover a planted causal region.

pub mod ablation;
pub mod adversarial;
pub mod datasets;
pub mod explain;
pub mod harness;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod types;

pub use ablation::{apply_absence, FillPolicy};
pub use mask::BinaryMask;
pub use types::{EvalRecord, Image, Prediction, SaliencyMap};
