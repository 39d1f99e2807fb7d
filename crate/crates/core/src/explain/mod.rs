//! Explainer implementations: occlusion saliency, superpixel linear
//! surrogates (locality-kernel and Shapley-kernel weighted), integrated
//! gradients, and expected gradients, plus the saliency-to-mask
//! binarization they all share.

mod occlusion;
mod path_attr;
mod segmentation;
mod surrogate;

pub use occlusion::occlusion_explain;
pub use path_attr::{expected_gradients, integrated_gradients, AlphaSchedule, PathAttributionConfig};
pub use segmentation::{grid_segmentation, Segmentation};
pub use surrogate::{surrogate_explain, SampleScheme, SurrogateConfig, SurrogateKernel};

use thiserror::Error;

use crate::ablation::AblationError;
use crate::mask::BinaryMask;
use crate::model::{Classifier, ModelError};
use crate::types::{CoreError, Image, SaliencyMap};

#[derive(Error, Debug)]
pub enum ExplainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model does not expose gradients but the explainer needs them")]
    GradientRequired,
    #[error("regression system is singular; raise the ridge penalty or add samples")]
    SingularSystem,
    #[error("segmentation {seg_height}x{seg_width} does not match image {height}x{width}")]
    SegmentationMismatch {
        seg_height: usize,
        seg_width: usize,
        height: usize,
        width: usize,
    },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("ablation: {0}")]
    Ablation(#[from] AblationError),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type ExplainResult<T> = Result<T, ExplainError>;

/// The explainer contract: produce a per-pixel saliency map for the
/// model's decision on `x`. `seed` drives any sampling the method does;
/// deterministic methods ignore it.
pub trait Explainer: Send + Sync {
    fn name(&self) -> &str;

    fn requires_gradients(&self) -> bool {
        false
    }

    fn explain(&self, x: &Image, model: &dyn Classifier, seed: u64)
        -> ExplainResult<SaliencyMap>;
}

/// Thresholds a saliency map into the critical-region mask: exactly
/// `ceil(q * height * width)` pixels with the highest scores are set,
/// ties at the cutoff broken by row-major pixel index (lower index wins).
pub fn binarize_topk(s: &SaliencyMap, q: f64) -> ExplainResult<BinaryMask> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(ExplainError::InvalidConfig(format!(
            "binarization fraction {q} outside (0,1]"
        )));
    }
    let total = s.height() * s.width();
    let keep = (q * total as f64).ceil() as usize;
    let keep = keep.min(total).max(1);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_unstable_by(|&a, &b| {
        s.scores()[b]
            .partial_cmp(&s.scores()[a])
            .expect("saliency scores are finite")
            .then(a.cmp(&b))
    });
    let mut set = vec![false; total];
    for &idx in order.iter().take(keep) {
        set[idx] = true;
    }
    Ok(BinaryMask::from_fn(s.height(), s.width(), |r, c| {
        set[r * s.width() + c]
    }))
}
