//! Path-integral attributions: integrated gradients along the straight
//! line from a zero baseline, and its Monte Carlo generalization over a
//! set of baseline images.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExplainError, ExplainResult};
use crate::model::Classifier;
use crate::types::{Image, SaliencyMap};

/// How interpolation coefficients are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaSchedule {
    /// Midpoints of a uniform grid: (i + 0.5) / steps.
    Midpoint,
    /// Uniform(0,1), seeded.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathAttributionConfig {
    /// Integration steps (midpoint rule) or Monte Carlo samples.
    pub steps: usize,
    pub alpha: AlphaSchedule,
    pub seed: u64,
}

impl PathAttributionConfig {
    fn validate(&self) -> ExplainResult<()> {
        if self.steps == 0 {
            return Err(ExplainError::InvalidConfig(
                "path attribution needs at least one step".into(),
            ));
        }
        Ok(())
    }
}

fn require_gradients(model: &dyn Classifier) -> ExplainResult<()> {
    if !model.gradient_capable() {
        return Err(ExplainError::GradientRequired);
    }
    Ok(())
}

fn channel_summed(x: &Image, per_element: &[f64]) -> ExplainResult<SaliencyMap> {
    let (h, w) = (x.height(), x.width());
    let mut scores = vec![0.0f64; h * w];
    for ch in 0..x.channels() {
        for r in 0..h {
            for c in 0..w {
                scores[r * w + c] += per_element[x.index(ch, r, c)];
            }
        }
    }
    Ok(SaliencyMap::new(h, w, scores)?)
}

fn interpolate(b: &Image, x: &Image, alpha: f64) -> ExplainResult<Image> {
    let data = b
        .data()
        .iter()
        .zip(x.data())
        .map(|(&bv, &xv)| bv + alpha * (xv - bv))
        .collect();
    Ok(Image::new_checked(x.channels(), x.height(), x.width(), data)?)
}

/// Midpoint-rule integrated gradients from the zero baseline, attributing
/// to the model's decided class on `x` and summing channels into a
/// per-pixel map.
pub fn integrated_gradients(
    x: &Image,
    model: &dyn Classifier,
    cfg: &PathAttributionConfig,
) -> ExplainResult<SaliencyMap> {
    cfg.validate()?;
    require_gradients(model)?;
    let class = model.classify(x)?.label();
    let baseline = Image::constant(x.channels(), x.height(), x.width(), 0.0)?;

    let mut grad_sum = vec![0.0f64; x.data().len()];
    for i in 0..cfg.steps {
        let alpha = (i as f64 + 0.5) / cfg.steps as f64;
        let point = interpolate(&baseline, x, alpha)?;
        let grad = model.grad_input(&point, class)?;
        for (acc, g) in grad_sum.iter_mut().zip(&grad.data) {
            *acc += g;
        }
    }
    let attributions: Vec<f64> = x
        .data()
        .iter()
        .zip(&grad_sum)
        .map(|(&xv, &g)| xv * g / cfg.steps as f64)
        .collect();
    channel_summed(x, &attributions)
}

/// Monte Carlo expectation of (x - b) * grad at b + alpha (x - b) over
/// baselines drawn from `baselines` and alphas from the schedule.
pub fn expected_gradients(
    x: &Image,
    model: &dyn Classifier,
    baselines: &[Image],
    cfg: &PathAttributionConfig,
) -> ExplainResult<SaliencyMap> {
    cfg.validate()?;
    require_gradients(model)?;
    if baselines.is_empty() {
        return Err(ExplainError::InvalidConfig(
            "expected gradients needs at least one baseline".into(),
        ));
    }
    for b in baselines {
        if b.channels() != x.channels() || b.height() != x.height() || b.width() != x.width() {
            return Err(ExplainError::InvalidConfig(
                "baseline shape differs from the explained image".into(),
            ));
        }
    }
    let class = model.classify(x)?.label();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut attr = vec![0.0f64; x.data().len()];
    for i in 0..cfg.steps {
        let (b, alpha) = match cfg.alpha {
            AlphaSchedule::Midpoint => (
                &baselines[i % baselines.len()],
                (i as f64 + 0.5) / cfg.steps as f64,
            ),
            AlphaSchedule::Random => (
                &baselines[rng.random_range(0..baselines.len())],
                rng.random_range(0.0..1.0),
            ),
        };
        let point = interpolate(b, x, alpha)?;
        let grad = model.grad_input(&point, class)?;
        for (j, acc) in attr.iter_mut().enumerate() {
            *acc += (x.data()[j] - b.data()[j]) * grad.data[j];
        }
    }
    for acc in attr.iter_mut() {
        *acc /= cfg.steps as f64;
    }
    channel_summed(x, &attr)
}
