//! Superpixel linear surrogate explainer: fit a weighted ridge regression
//! of the model's original-class probability on random segment
//! presence/absence patterns, then read per-segment importances off the
//! fitted coefficients.
//!
//! Two sample-weighting kernels are provided: an exponential locality
//! kernel over the fraction of removed segments, and the Shapley kernel
//! over coalition sizes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExplainError, ExplainResult, Segmentation};
use crate::ablation::{apply_absence, FillPolicy};
use crate::mask::BinaryMask;
use crate::model::Classifier;
use crate::types::{Image, SaliencyMap};

/// Weight assigned to each sampled presence vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurrogateKernel {
    /// exp(-d^2 / sigma^2) where d is the fraction of switched-off
    /// segments.
    ExponentialLocality { sigma: f64 },
    /// (K-1) / (C(K,k) * k * (K-k)) for k of K segments present; the
    /// all-on and all-off patterns get a large finite weight.
    ShapleyKernel,
}

/// Weight given to the all-on/all-off coalitions, which the Shapley
/// kernel formula leaves unbounded.
const SHAPLEY_ENDPOINT_WEIGHT: f64 = 1e6;

impl SurrogateKernel {
    fn weight(&self, present: usize, total: usize) -> f64 {
        match self {
            SurrogateKernel::ExponentialLocality { sigma } => {
                let d = (total - present) as f64 / total as f64;
                (-d * d / (sigma * sigma)).exp()
            }
            SurrogateKernel::ShapleyKernel => {
                if present == 0 || present == total {
                    return SHAPLEY_ENDPOINT_WEIGHT;
                }
                let k = present as f64;
                let n = total as f64;
                (n - 1.0) / (binomial(total, present) * k * (n - k))
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 1..=k {
        acc = acc * (n - k + i) as f64 / i as f64;
    }
    acc
}

/// How presence vectors are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleScheme {
    /// Independent fair coin per segment, seeded.
    Random,
    /// All 2^K presence vectors exactly once (requires num_samples = 2^K).
    Enumerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub num_samples: usize,
    /// Ridge penalty on segment coefficients (the intercept is free).
    pub ridge_lambda: f64,
    pub kernel: SurrogateKernel,
    pub scheme: SampleScheme,
    pub seed: u64,
    /// Fill applied to switched-off segments.
    pub fill: FillPolicy,
}

impl SurrogateConfig {
    fn validate(&self, segment_count: usize) -> ExplainResult<()> {
        if self.num_samples < segment_count + 1 {
            return Err(ExplainError::InvalidConfig(format!(
                "num_samples {} below segment_count + 1 = {}",
                self.num_samples,
                segment_count + 1
            )));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(ExplainError::InvalidConfig(format!(
                "ridge lambda {} must be finite and non-negative",
                self.ridge_lambda
            )));
        }
        if let SurrogateKernel::ExponentialLocality { sigma } = self.kernel {
            if !(sigma > 0.0) {
                return Err(ExplainError::InvalidConfig(format!(
                    "kernel width {sigma} must be positive"
                )));
            }
        }
        if self.scheme == SampleScheme::Enumerate {
            if segment_count >= usize::BITS as usize - 1 {
                return Err(ExplainError::InvalidConfig(format!(
                    "cannot enumerate 2^{segment_count} presence vectors"
                )));
            }
            if self.num_samples != 1usize << segment_count {
                return Err(ExplainError::InvalidConfig(format!(
                    "enumeration needs num_samples = 2^{} = {}, got {}",
                    segment_count,
                    1usize << segment_count,
                    self.num_samples
                )));
            }
        }
        Ok(())
    }
}

fn presence_vectors(
    scheme: SampleScheme,
    num_samples: usize,
    segments: usize,
    seed: u64,
) -> Vec<Vec<bool>> {
    match scheme {
        SampleScheme::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..num_samples)
                .map(|_| (0..segments).map(|_| rng.random::<bool>()).collect())
                .collect()
        }
        SampleScheme::Enumerate => (0..num_samples)
            .map(|pattern| (0..segments).map(|j| pattern >> j & 1 == 1).collect())
            .collect(),
    }
}

/// Weighted ridge on rows of `[v_1..v_K, 1]`; only the K segment
/// coefficients are penalized. Returns K coefficients plus the intercept.
pub(crate) fn fit_weighted_ridge(
    rows: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> ExplainResult<Vec<f64>> {
    let n = rows[0].len();
    let mut xtwx = DMatrix::<f64>::zeros(n, n);
    let mut xtwt = DVector::<f64>::zeros(n);
    for ((row, &t), &w) in rows.iter().zip(targets).zip(weights) {
        for a in 0..n {
            xtwt[a] += w * row[a] * t;
            for b in a..n {
                xtwx[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    for j in 0..n - 1 {
        xtwx[(j, j)] += lambda;
    }
    let beta = xtwx
        .cholesky()
        .ok_or(ExplainError::SingularSystem)?
        .solve(&xtwt);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(ExplainError::SingularSystem);
    }
    Ok(beta.iter().copied().collect())
}

/// Fits the surrogate and assigns each pixel its segment's coefficient.
pub fn surrogate_explain(
    x: &Image,
    model: &dyn Classifier,
    seg: &Segmentation,
    cfg: &SurrogateConfig,
) -> ExplainResult<SaliencyMap> {
    if seg.height() != x.height() || seg.width() != x.width() {
        return Err(ExplainError::SegmentationMismatch {
            seg_height: seg.height(),
            seg_width: seg.width(),
            height: x.height(),
            width: x.width(),
        });
    }
    let segments = seg.segment_count();
    cfg.validate(segments)?;

    let original_class = model.classify(x)?.label();
    let samples = presence_vectors(cfg.scheme, cfg.num_samples, segments, cfg.seed);

    let mut rows = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    let mut weights = Vec::with_capacity(samples.len());
    for present in &samples {
        let on_count = present.iter().filter(|&&p| p).count();
        let probability = if on_count == segments {
            model.classify(x)?.prob_of(original_class)
        } else {
            let off_mask = BinaryMask::from_fn(x.height(), x.width(), |r, c| {
                !present[seg.label_at(r, c)]
            });
            let perturbed = apply_absence(x, &off_mask, &cfg.fill)?;
            model.classify(&perturbed)?.prob_of(original_class)
        };
        let mut row: Vec<f64> = present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        row.push(1.0);
        rows.push(row);
        targets.push(probability);
        weights.push(cfg.kernel.weight(on_count, segments));
    }

    let beta = fit_weighted_ridge(&rows, &targets, &weights, cfg.ridge_lambda)?;
    let scores = seg.labels().iter().map(|&l| beta[l]).collect();
    Ok(SaliencyMap::new(x.height(), x.width(), scores)?)
}
