//! Shared data types: images, predictions, saliency maps, and per-image
//! evaluation records.
//!
//! All types validate their invariants at construction and are immutable
//! afterwards, so they can be shared freely across worker threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;

/// Validation errors for the shared data types.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum CoreError {
    #[error("dimensions must be positive, got {channels}x{height}x{width}")]
    NonPositiveDimensions {
        channels: usize,
        height: usize,
        width: usize,
    },
    #[error("data length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("value {value} at index {index} outside [0,1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probability vector is empty")]
    EmptyProbs,
    #[error("probability {value} at index {index} outside [0,1]")]
    ProbOutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within {tolerance}")]
    ProbSumMismatch { sum: f64, tolerance: f64 },
    #[error("mask dimensions {a_height}x{a_width} and {b_height}x{b_width} differ")]
    MaskDimensionMismatch {
        a_height: usize,
        a_width: usize,
        b_height: usize,
        b_width: usize,
    },
    #[error("mask area {area} out of range for {height}x{width}")]
    AreaOutOfRange {
        area: usize,
        height: usize,
        width: usize,
    },
    #[error("confidence {value} outside [0,1]")]
    ConfidenceOutOfRange { value: f64 },
}

pub type CoreResult<T> = Result<T, CoreError>;

/// A dense image: `channels` planes of `height`x`width` intensities in
/// `[0,1]`, stored row-major as (channel, row, column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Validated constructor; rejects length mismatches and the first
    /// non-finite or out-of-range element.
    pub fn new_checked(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> CoreResult<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::NonPositiveDimensions {
                channels,
                height,
                width,
            });
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(CoreError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        for (index, &value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(CoreError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(CoreError::OutOfRange { index, value });
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Image filled with a single intensity.
    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> CoreResult<Self> {
        Self::new_checked(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    /// Per-channel mean intensity over pixels where `keep` is true.
    /// Falls back to the whole-channel mean when `keep` selects nothing.
    /// Computed as an offset from the first kept value so a constant
    /// region averages to exactly that constant.
    pub(crate) fn channel_means_where<F: Fn(usize, usize) -> bool>(&self, keep: F) -> Vec<f64> {
        let mut means = Vec::with_capacity(self.channels);
        for ch in 0..self.channels {
            let mut offset_sum = 0.0;
            let mut count = 0usize;
            let mut first = f64::NAN;
            let mut accumulate = |value: f64| {
                if count == 0 {
                    first = value;
                }
                offset_sum += value - first;
                count += 1;
            };
            for r in 0..self.height {
                for c in 0..self.width {
                    if keep(r, c) {
                        accumulate(self.at(ch, r, c));
                    }
                }
            }
            if count == 0 {
                for r in 0..self.height {
                    for c in 0..self.width {
                        accumulate(self.at(ch, r, c));
                    }
                }
            }
            means.push((first + offset_sum / count as f64).clamp(0.0, 1.0));
        }
        means
    }
}

/// Classifier output: the decided class, its confidence, and the full
/// probability vector the decision was taken from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    label: usize,
    confidence: f64,
    probs: Vec<f64>,
}

/// Tolerance on the probability-vector sum.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

impl Prediction {
    /// Builds a prediction from a probability vector. The label is the
    /// argmax (ties broken by lowest index) and the confidence is the
    /// probability of that label.
    pub fn from_probs(probs: Vec<f64>) -> CoreResult<Self> {
        if probs.is_empty() {
            return Err(CoreError::EmptyProbs);
        }
        let mut sum = 0.0;
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(CoreError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(CoreError::ProbOutOfRange { index, value });
            }
            sum += value;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(CoreError::ProbSumMismatch {
                sum,
                tolerance: PROB_SUM_TOLERANCE,
            });
        }
        let mut label = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[label] {
                label = i;
            }
        }
        let confidence = probs[label];
        Ok(Self {
            label,
            confidence,
            probs,
        })
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability assigned to an arbitrary class.
    pub fn prob_of(&self, class: usize) -> f64 {
        self.probs[class]
    }
}

/// Continuous per-pixel importance scores produced by an explainer,
/// before thresholding into a critical-region mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> CoreResult<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::NonPositiveDimensions {
                channels: 1,
                height,
                width,
            });
        }
        if scores.len() != height * width {
            return Err(CoreError::LengthMismatch {
                expected: height * width,
                actual: scores.len(),
            });
        }
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.width + col]
    }
}

/// Per-image evaluation quadruple plus optional adversarial bookkeeping:
/// original decision/confidence, post-ablation decision/confidence, the
/// (ground-truth, explained) mask pair for coverage, and the attack
/// target/outcome labels used by the success filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub y: usize,
    pub z: f64,
    pub y_prime: usize,
    pub z_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_pair: Option<(BinaryMask, BinaryMask)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_target: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patched_label: Option<usize>,
}

impl EvalRecord {
    pub fn new(y: usize, z: f64, y_prime: usize, z_prime: f64) -> CoreResult<Self> {
        for value in [z, z_prime] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(CoreError::ConfidenceOutOfRange { value });
            }
        }
        Ok(Self {
            y,
            z,
            y_prime,
            z_prime,
            coverage_pair: None,
            attack_target: None,
            patched_label: None,
        })
    }

    /// Attaches the (adversarial, explained) mask pair used by coverage.
    pub fn with_coverage(mut self, a: BinaryMask, c: BinaryMask) -> CoreResult<Self> {
        if a.height() != c.height() || a.width() != c.width() {
            return Err(CoreError::MaskDimensionMismatch {
                a_height: a.height(),
                a_width: a.width(),
                b_height: c.height(),
                b_width: c.width(),
            });
        }
        self.coverage_pair = Some((a, c));
        Ok(self)
    }

    pub fn with_attack(mut self, target: usize, patched_label: usize) -> Self {
        self.attack_target = Some(target);
        self.patched_label = Some(patched_label);
        self
    }

    pub fn decision_flip(&self) -> bool {
        self.y_prime != self.y
    }
}
