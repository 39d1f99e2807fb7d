//! The classifier contract and its two implementations: an in-repo
//! differentiable toy convolutional network and a client for a remote
//! inference process speaking a line-delimited JSON protocol.

mod remote;
mod toy_cnn;

pub use remote::{serve_connection, spawn_server, RemoteClassifier, ServerHandle};
pub use toy_cnn::{Architecture, ToyCnn, TrainConfig};

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{CoreError, Image, Prediction};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("input shape {got:?} does not match model shape {expected:?}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("class index {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("model does not expose gradients")]
    GradientUnsupported,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("connection timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("server error: {0}")]
    ServerError(String),
    #[error("response id {got} does not echo request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error("handshake not completed or rejected: {0}")]
    Handshake(String),
    #[error("probability vector invalid: {0}")]
    InvalidProbs(#[source] CoreError),
    #[error(transparent)]
    Core(CoreError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl From<CoreError> for ModelError {
    fn from(e: CoreError) -> Self {
        ModelError::Core(e)
    }
}

pub type ModelResult<T> = Result<T, ModelError>;

/// Input tensor shape as (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn of_image(x: &Image) -> Self {
        Shape {
            channels: x.channels(),
            height: x.height(),
            width: x.width(),
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of a scalar model output with respect to every input
/// intensity, laid out like the image it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl InputGradient {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            channels: shape.channels,
            height: shape.height,
            width: shape.width,
            data: vec![0.0; shape.len()],
        }
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn at(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }
}

/// The classifier contract: a deterministic map from images to
/// predictions, optionally exposing input gradients of class logits.
pub trait Classifier: Send + Sync {
    fn classify(&self, x: &Image) -> ModelResult<Prediction>;
    fn input_shape(&self) -> Shape;
    fn num_classes(&self) -> usize;

    /// Whether `grad_input` is implemented.
    fn gradient_capable(&self) -> bool {
        false
    }

    /// Gradient of the pre-softmax logit of `class_index` with respect to
    /// the input.
    fn grad_input(&self, _x: &Image, _class_index: usize) -> ModelResult<InputGradient> {
        Err(ModelError::GradientUnsupported)
    }
}

pub(crate) fn check_shape(expected: Shape, x: &Image) -> ModelResult<()> {
    let got = Shape::of_image(x);
    if got != expected {
        return Err(ModelError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let logits = [1.5, -2.0, 0.25, 7.0];
        let p = softmax(&logits);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v >= 0.0));
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.0).collect();
        let q = softmax(&shifted);
        for (a, b) in p.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
