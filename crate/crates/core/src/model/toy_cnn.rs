//! A small differentiable convolutional network built from explicit loops:
//! conv (valid padding) -> ReLU -> 2x2 average pool -> dense -> softmax.
//!
//! All arithmetic is double precision; forward and backward passes are
//! straight loops over owned buffers, so inference is deterministic and
//! safe to run from many threads at once.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_shape, softmax, Classifier, InputGradient, ModelError, ModelResult, Shape};
use crate::types::{Image, Prediction};

/// Layer sizing for [`ToyCnn`]. Pooling is fixed at 2x2, stride 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub num_classes: usize,
}

impl Architecture {
    pub fn validate(&self) -> ModelResult<()> {
        if self.in_channels == 0
            || self.input_height == 0
            || self.input_width == 0
            || self.conv_filters == 0
            || self.kernel_size == 0
            || self.num_classes == 0
        {
            return Err(ModelError::InvalidArchitecture(
                "all dimensions must be positive".into(),
            ));
        }
        if self.kernel_size > self.input_height || self.kernel_size > self.input_width {
            return Err(ModelError::InvalidArchitecture(format!(
                "kernel {} exceeds input {}x{}",
                self.kernel_size, self.input_height, self.input_width
            )));
        }
        if self.pool_height() == 0 || self.pool_width() == 0 {
            return Err(ModelError::InvalidArchitecture(
                "conv output too small for 2x2 pooling".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Shape {
        Shape {
            channels: self.in_channels,
            height: self.input_height,
            width: self.input_width,
        }
    }

    pub fn conv_height(&self) -> usize {
        self.input_height - self.kernel_size + 1
    }

    pub fn conv_width(&self) -> usize {
        self.input_width - self.kernel_size + 1
    }

    pub fn pool_height(&self) -> usize {
        self.conv_height() / 2
    }

    pub fn pool_width(&self) -> usize {
        self.conv_width() / 2
    }

    pub fn flat_len(&self) -> usize {
        self.conv_filters * self.pool_height() * self.pool_width()
    }

    pub fn conv_weight_len(&self) -> usize {
        self.conv_filters * self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn dense_weight_len(&self) -> usize {
        self.num_classes * self.flat_len()
    }

    pub fn param_count(&self) -> usize {
        self.conv_weight_len() + self.conv_filters + self.dense_weight_len() + self.num_classes
    }
}

/// Hyperparameters for the plain mini-batch gradient-descent trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCnn {
    arch: Architecture,
    conv_weights: Vec<f64>, // [filter][in_channel][kr][kc]
    conv_bias: Vec<f64>,    // [filter]
    dense_weights: Vec<f64>, // [class][flat]
    dense_bias: Vec<f64>,   // [class]
}

struct ForwardTrace {
    conv_pre: Vec<f64>, // [filter][r][c], pre-ReLU
    pooled: Vec<f64>,   // [filter][pr][pc]
    logits: Vec<f64>,
    probs: Vec<f64>,
}

/// Parameter gradients in the same layout as the corresponding fields.
struct ParamGrads {
    conv_weights: Vec<f64>,
    conv_bias: Vec<f64>,
    dense_weights: Vec<f64>,
    dense_bias: Vec<f64>,
}

impl ParamGrads {
    fn zeros(arch: &Architecture) -> Self {
        Self {
            conv_weights: vec![0.0; arch.conv_weight_len()],
            conv_bias: vec![0.0; arch.conv_filters],
            dense_weights: vec![0.0; arch.dense_weight_len()],
            dense_bias: vec![0.0; arch.num_classes],
        }
    }
}

impl ToyCnn {
    /// Model with every parameter set to zero (uniform output).
    pub fn zeros(arch: Architecture) -> ModelResult<Self> {
        arch.validate()?;
        Ok(Self {
            conv_weights: vec![0.0; arch.conv_weight_len()],
            conv_bias: vec![0.0; arch.conv_filters],
            dense_weights: vec![0.0; arch.dense_weight_len()],
            dense_bias: vec![0.0; arch.num_classes],
            arch,
        })
    }

    /// Seeded initialization: weights uniform in [-s, s] with
    /// s = 1/sqrt(fan-in), biases zero.
    pub fn seeded(arch: Architecture, seed: u64) -> ModelResult<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_fan_in = arch.in_channels * arch.kernel_size * arch.kernel_size;
        let s_conv = 1.0 / (conv_fan_in as f64).sqrt();
        let conv_weights = (0..arch.conv_weight_len())
            .map(|_| rng.random_range(-s_conv..=s_conv))
            .collect();
        let s_dense = 1.0 / (arch.flat_len() as f64).sqrt();
        let dense_weights = (0..arch.dense_weight_len())
            .map(|_| rng.random_range(-s_dense..=s_dense))
            .collect();
        Ok(Self {
            conv_weights,
            conv_bias: vec![0.0; arch.conv_filters],
            dense_weights,
            dense_bias: vec![0.0; arch.num_classes],
            arch,
        })
    }

    /// Builds a model from explicit parameter vectors.
    pub fn from_parts(
        arch: Architecture,
        conv_weights: Vec<f64>,
        conv_bias: Vec<f64>,
        dense_weights: Vec<f64>,
        dense_bias: Vec<f64>,
    ) -> ModelResult<Self> {
        arch.validate()?;
        let lens = [
            (conv_weights.len(), arch.conv_weight_len()),
            (conv_bias.len(), arch.conv_filters),
            (dense_weights.len(), arch.dense_weight_len()),
            (dense_bias.len(), arch.num_classes),
        ];
        if lens.iter().any(|&(got, want)| got != want) {
            return Err(ModelError::InvalidArchitecture(
                "parameter vector lengths do not match architecture".into(),
            ));
        }
        let all_finite = conv_weights
            .iter()
            .chain(&conv_bias)
            .chain(&dense_weights)
            .chain(&dense_bias)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(ModelError::InvalidArchitecture(
                "parameters must be finite".into(),
            ));
        }
        Ok(Self {
            arch,
            conv_weights,
            conv_bias,
            dense_weights,
            dense_bias,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    #[inline]
    fn conv_w(&self, f: usize, ic: usize, kr: usize, kc: usize) -> f64 {
        let k = self.arch.kernel_size;
        self.conv_weights[((f * self.arch.in_channels + ic) * k + kr) * k + kc]
    }

    fn forward_trace(&self, x: &Image) -> ModelResult<ForwardTrace> {
        check_shape(self.arch.input_shape(), x)?;
        let a = &self.arch;
        let (ch, cw) = (a.conv_height(), a.conv_width());
        let (ph, pw) = (a.pool_height(), a.pool_width());

        let mut conv_pre = vec![0.0; a.conv_filters * ch * cw];
        for f in 0..a.conv_filters {
            for r in 0..ch {
                for c in 0..cw {
                    let mut acc = self.conv_bias[f];
                    for ic in 0..a.in_channels {
                        for kr in 0..a.kernel_size {
                            for kc in 0..a.kernel_size {
                                acc += self.conv_w(f, ic, kr, kc) * x.at(ic, r + kr, c + kc);
                            }
                        }
                    }
                    conv_pre[(f * ch + r) * cw + c] = acc;
                }
            }
        }

        // ReLU then 2x2 mean; trailing odd row/column of the conv map is
        // dropped by the floor division.
        let mut pooled = vec![0.0; a.flat_len()];
        for f in 0..a.conv_filters {
            for pr in 0..ph {
                for pc in 0..pw {
                    let mut acc = 0.0;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let v = conv_pre[(f * ch + 2 * pr + dr) * cw + 2 * pc + dc];
                            acc += v.max(0.0);
                        }
                    }
                    pooled[(f * ph + pr) * pw + pc] = acc / 4.0;
                }
            }
        }

        let flat_len = a.flat_len();
        let mut logits = vec![0.0; a.num_classes];
        for (cls, logit) in logits.iter_mut().enumerate() {
            let mut acc = self.dense_bias[cls];
            for (i, &p) in pooled.iter().enumerate() {
                acc += self.dense_weights[cls * flat_len + i] * p;
            }
            *logit = acc;
        }

        let probs = softmax(&logits);
        Ok(ForwardTrace {
            conv_pre,
            pooled,
            logits,
            probs,
        })
    }

    /// Full forward pass: logits plus the softmax prediction.
    pub fn forward(&self, x: &Image) -> ModelResult<(Vec<f64>, Prediction)> {
        let trace = self.forward_trace(x)?;
        let prediction = Prediction::from_probs(trace.probs)?;
        Ok((trace.logits, prediction))
    }

    /// Pre-softmax logit of one class.
    pub fn logit(&self, x: &Image, class_index: usize) -> ModelResult<f64> {
        self.check_class(class_index)?;
        Ok(self.forward_trace(x)?.logits[class_index])
    }

    fn check_class(&self, class_index: usize) -> ModelResult<()> {
        if class_index >= self.arch.num_classes {
            return Err(ModelError::ClassOutOfRange {
                class: class_index,
                num_classes: self.arch.num_classes,
            });
        }
        Ok(())
    }

    /// Smallest |pre-activation| in the conv layer for this input. Inputs
    /// with a healthy margin keep finite-difference probes away from the
    /// ReLU kink.
    pub fn preactivation_margin(&self, x: &Image) -> ModelResult<f64> {
        let trace = self.forward_trace(x)?;
        Ok(trace
            .conv_pre
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v.abs())))
    }

    /// Backprop from a gradient at the conv pre-activations down to the
    /// input image.
    fn backprop_pre_to_input(&self, d_pre: &[f64]) -> InputGradient {
        let a = &self.arch;
        let (ch, cw) = (a.conv_height(), a.conv_width());
        let mut grad = InputGradient::zeros(a.input_shape());
        for f in 0..a.conv_filters {
            for r in 0..ch {
                for c in 0..cw {
                    let g = d_pre[(f * ch + r) * cw + c];
                    if g == 0.0 {
                        continue;
                    }
                    for ic in 0..a.in_channels {
                        for kr in 0..a.kernel_size {
                            for kc in 0..a.kernel_size {
                                let idx = grad.index(ic, r + kr, c + kc);
                                grad.data[idx] += g * self.conv_w(f, ic, kr, kc);
                            }
                        }
                    }
                }
            }
        }
        grad
    }

    /// Gradient of pooled activations back to conv pre-activations,
    /// applying the pool fan-out (1/4) and the ReLU mask.
    fn backprop_pooled_to_pre(&self, d_pooled: &[f64], conv_pre: &[f64]) -> Vec<f64> {
        let a = &self.arch;
        let (ch, cw) = (a.conv_height(), a.conv_width());
        let (ph, pw) = (a.pool_height(), a.pool_width());
        let mut d_pre = vec![0.0; conv_pre.len()];
        for f in 0..a.conv_filters {
            for pr in 0..ph {
                for pc in 0..pw {
                    let g = d_pooled[(f * ph + pr) * pw + pc] / 4.0;
                    for dr in 0..2 {
                        for dc in 0..2 {
                            let idx = (f * ch + 2 * pr + dr) * cw + 2 * pc + dc;
                            if conv_pre[idx] > 0.0 {
                                d_pre[idx] += g;
                            }
                        }
                    }
                }
            }
        }
        d_pre
    }

    /// Analytic gradient of the pre-softmax logit of `class_index` with
    /// respect to every input intensity.
    pub fn input_gradient(&self, x: &Image, class_index: usize) -> ModelResult<InputGradient> {
        self.check_class(class_index)?;
        let trace = self.forward_trace(x)?;
        let flat_len = self.arch.flat_len();
        let d_pooled = &self.dense_weights[class_index * flat_len..(class_index + 1) * flat_len];
        let d_pre = self.backprop_pooled_to_pre(d_pooled, &trace.conv_pre);
        Ok(self.backprop_pre_to_input(&d_pre))
    }

    /// Cross-entropy parameter gradients for one labelled example.
    fn param_gradients(&self, x: &Image, label: usize, grads: &mut ParamGrads) -> ModelResult<f64> {
        let a = &self.arch;
        let trace = self.forward_trace(x)?;
        let flat_len = a.flat_len();

        // d loss / d logits = probs - onehot(label)
        let mut d_logits = trace.probs.clone();
        d_logits[label] -= 1.0;

        let mut d_pooled = vec![0.0; flat_len];
        for cls in 0..a.num_classes {
            let g = d_logits[cls];
            grads.dense_bias[cls] += g;
            for i in 0..flat_len {
                grads.dense_weights[cls * flat_len + i] += g * trace.pooled[i];
                d_pooled[i] += g * self.dense_weights[cls * flat_len + i];
            }
        }

        let d_pre = self.backprop_pooled_to_pre(&d_pooled, &trace.conv_pre);
        let (ch, cw) = (a.conv_height(), a.conv_width());
        let k = a.kernel_size;
        for f in 0..a.conv_filters {
            for r in 0..ch {
                for c in 0..cw {
                    let g = d_pre[(f * ch + r) * cw + c];
                    if g == 0.0 {
                        continue;
                    }
                    grads.conv_bias[f] += g;
                    for ic in 0..a.in_channels {
                        for kr in 0..k {
                            for kc in 0..k {
                                grads.conv_weights[((f * a.in_channels + ic) * k + kr) * k + kc] +=
                                    g * x.at(ic, r + kr, c + kc);
                            }
                        }
                    }
                }
            }
        }
        Ok(-trace.probs[label].max(1e-300).ln())
    }

    fn apply_step(&mut self, grads: &ParamGrads, step: f64) {
        for (w, g) in self.conv_weights.iter_mut().zip(&grads.conv_weights) {
            *w -= step * g;
        }
        for (w, g) in self.conv_bias.iter_mut().zip(&grads.conv_bias) {
            *w -= step * g;
        }
        for (w, g) in self.dense_weights.iter_mut().zip(&grads.dense_weights) {
            *w -= step * g;
        }
        for (w, g) in self.dense_bias.iter_mut().zip(&grads.dense_bias) {
            *w -= step * g;
        }
    }

    /// Plain mini-batch gradient descent with cross-entropy loss. Returns
    /// the mean loss per epoch alongside the trained model.
    pub fn train(
        arch: Architecture,
        samples: &[(&Image, usize)],
        cfg: &TrainConfig,
    ) -> ModelResult<(Self, Vec<f64>)> {
        if samples.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        for &(_, label) in samples {
            if label >= arch.num_classes {
                return Err(ModelError::ClassOutOfRange {
                    class: label,
                    num_classes: arch.num_classes,
                });
            }
        }
        let mut model = Self::seeded(arch, cfg.seed)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let batch_size = cfg.batch_size.max(1);
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            shuffle(&mut order, &mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(batch_size) {
                let mut grads = ParamGrads::zeros(&arch);
                for &i in batch {
                    let (x, label) = samples[i];
                    epoch_loss += model.param_gradients(x, label, &mut grads)?;
                }
                model.apply_step(&grads, cfg.learning_rate / batch.len() as f64);
            }
            epoch_losses.push(epoch_loss / samples.len() as f64);
        }
        Ok((model, epoch_losses))
    }

    /// Fraction of samples whose argmax prediction matches the label.
    pub fn accuracy(&self, samples: &[(&Image, usize)]) -> ModelResult<f64> {
        if samples.is_empty() {
            return Err(ModelError::EmptyTrainingSet);
        }
        let mut correct = 0usize;
        for &(x, label) in samples {
            if self.classify(x)?.label() == label {
                correct += 1;
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }

    fn params_flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.conv_weights
            .iter()
            .chain(&self.conv_bias)
            .chain(&self.dense_weights)
            .chain(&self.dense_bias)
            .copied()
    }

    /// Writes the architecture header (one JSON line) followed by all
    /// parameters as little-endian 64-bit floats.
    pub fn save(&self, path: &Path) -> ModelResult<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = WeightsHeader {
            arch: self.arch,
            param_count: self.arch.param_count(),
        };
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| ModelError::WeightsFormat(e.to_string()))?;
        out.write_all(b"\n")?;
        for v in self.params_flat() {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> ModelResult<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = input.read(&mut byte)?;
            if n == 0 {
                return Err(ModelError::WeightsFormat(
                    "missing newline after header".into(),
                ));
            }
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: WeightsHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| ModelError::WeightsFormat(format!("bad header: {e}")))?;
        header.arch.validate()?;
        if header.param_count != header.arch.param_count() {
            return Err(ModelError::WeightsFormat(format!(
                "header declares {} parameters, architecture needs {}",
                header.param_count,
                header.arch.param_count()
            )));
        }
        let mut raw = vec![0u8; header.param_count * 8];
        input.read_exact(&mut raw)?;
        let mut params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        let arch = header.arch;
        let dense_bias = params.split_off(params.len() - arch.num_classes);
        let dense_weights = params.split_off(params.len() - arch.dense_weight_len());
        let conv_bias = params.split_off(params.len() - arch.conv_filters);
        let conv_weights = params;
        Self::from_parts(arch, conv_weights, conv_bias, dense_weights, dense_bias)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    arch: Architecture,
    param_count: usize,
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

impl Classifier for ToyCnn {
    fn classify(&self, x: &Image) -> ModelResult<Prediction> {
        Ok(self.forward(x)?.1)
    }

    fn input_shape(&self) -> Shape {
        self.arch.input_shape()
    }

    fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    fn gradient_capable(&self) -> bool {
        true
    }

    fn grad_input(&self, x: &Image, class_index: usize) -> ModelResult<InputGradient> {
        self.input_gradient(x, class_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_arch() -> Architecture {
        Architecture {
            in_channels: 1,
            input_height: 8,
            input_width: 8,
            conv_filters: 3,
            kernel_size: 3,
            num_classes: 2,
        }
    }

    fn seeded_image(shape: Shape, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len()).map(|_| rng.random_range(0.0..=1.0)).collect();
        Image::new_checked(shape.channels, shape.height, shape.width, data).unwrap()
    }

    /// Straight-line re-implementation of the forward arithmetic, written
    /// independently of the model's own loops.
    fn oracle_forward(model: &ToyCnn, x: &Image) -> Vec<f64> {
        let a = *model.architecture();
        let k = a.kernel_size;
        let ch = a.input_height - k + 1;
        let cw = a.input_width - k + 1;
        let mut relu = vec![vec![vec![0.0; cw]; ch]; a.conv_filters];
        for f in 0..a.conv_filters {
            for r in 0..ch {
                for c in 0..cw {
                    let mut s = model.conv_bias[f];
                    for ic in 0..a.in_channels {
                        for kr in 0..k {
                            for kc in 0..k {
                                let w = model.conv_weights
                                    [((f * a.in_channels + ic) * k + kr) * k + kc];
                                s += w * x.at(ic, r + kr, c + kc);
                            }
                        }
                    }
                    relu[f][r][c] = if s > 0.0 { s } else { 0.0 };
                }
            }
        }
        let ph = ch / 2;
        let pw = cw / 2;
        let mut flat = Vec::new();
        for f in 0..a.conv_filters {
            for pr in 0..ph {
                for pc in 0..pw {
                    let s = relu[f][2 * pr][2 * pc]
                        + relu[f][2 * pr][2 * pc + 1]
                        + relu[f][2 * pr + 1][2 * pc]
                        + relu[f][2 * pr + 1][2 * pc + 1];
                    flat.push(s / 4.0);
                }
            }
        }
        let mut logits = Vec::new();
        for cls in 0..a.num_classes {
            let mut s = model.dense_bias[cls];
            for (i, &v) in flat.iter().enumerate() {
                s += model.dense_weights[cls * flat.len() + i] * v;
            }
            logits.push(s);
        }
        // plain softmax without the stabilizing shift; fine at test scale
        let total: f64 = logits.iter().map(|v| v.exp()).sum();
        logits.iter().map(|v| v.exp() / total).collect()
    }

    #[test]
    fn zero_model_outputs_uniform_probs() {
        let model = ToyCnn::zeros(test_arch()).unwrap();
        let x = seeded_image(model.input_shape(), 1);
        let (logits, pred) = model.forward(&x).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        assert_eq!(pred.probs(), &[0.5, 0.5]);
        assert_eq!(pred.label(), 0);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let model = ToyCnn::seeded(test_arch(), 42).unwrap();
        let x = seeded_image(model.input_shape(), 7);
        let (_, pred) = model.forward(&x).unwrap();
        let oracle = oracle_forward(&model, &x);
        for (a, b) in pred.probs().iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-10, "probs {a} vs oracle {b}");
        }
    }

    #[test]
    fn classify_is_bitwise_deterministic() {
        let model = ToyCnn::seeded(test_arch(), 3).unwrap();
        let x = seeded_image(model.input_shape(), 4);
        let p1 = model.classify(&x).unwrap();
        let p2 = model.classify(&x).unwrap();
        for (a, b) in p1.probs().iter().zip(p2.probs()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_conv_kernels_give_zero_input_gradient() {
        let arch = test_arch();
        let mut model = ToyCnn::seeded(arch, 5).unwrap();
        model.conv_weights.iter_mut().for_each(|w| *w = 0.0);
        let x = seeded_image(model.input_shape(), 6);
        let g = model.input_gradient(&x, 1).unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_rejects_class_out_of_range() {
        let model = ToyCnn::seeded(test_arch(), 5).unwrap();
        let x = seeded_image(model.input_shape(), 6);
        assert!(matches!(
            model.input_gradient(&x, 2),
            Err(ModelError::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let model = ToyCnn::seeded(test_arch(), 5).unwrap();
        let x = Image::constant(1, 7, 8, 0.5).unwrap();
        assert!(matches!(
            model.forward(&x),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    /// Central finite differences on the logit of `class`.
    fn fd_gradient(model: &ToyCnn, x: &Image, class: usize, h: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.data().len());
        for i in 0..x.data().len() {
            let mut plus = x.data().to_vec();
            let mut minus = x.data().to_vec();
            plus[i] += h;
            minus[i] -= h;
            // base intensities sit in [0.1, 0.9], so the probes stay valid
            let xp = Image::new_checked(x.channels(), x.height(), x.width(), plus).unwrap();
            let xm = Image::new_checked(x.channels(), x.height(), x.width(), minus).unwrap();
            let fp = model.logit(&xp, class).unwrap();
            let fm = model.logit(&xm, class).unwrap();
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let arch = test_arch();
        let h = 1e-4;
        let mut checked = 0;
        let mut seed = 0u64;
        while checked < 3 {
            seed += 1;
            let model = ToyCnn::seeded(arch, seed).unwrap();
            // interior intensities keep the +/- h probes inside [0,1]
            let x = {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
                let data = (0..arch.input_shape().len())
                    .map(|_| rng.random_range(0.1..=0.9))
                    .collect();
                Image::new_checked(1, 8, 8, data).unwrap()
            };
            // stay clear of the ReLU kink so the FD quotient is smooth
            if model.preactivation_margin(&x).unwrap() < 1e-3 {
                continue;
            }
            let class = (seed % 2) as usize;
            let analytic = model.input_gradient(&x, class).unwrap();
            let fd = fd_gradient(&model, &x, class, h);
            for (a, f) in analytic.data.iter().zip(fd.iter()) {
                let denom = a.abs().max(f.abs()).max(1e-8);
                assert!(
                    ((a - f) / denom).abs() <= 1e-4,
                    "seed {seed}: analytic {a} vs fd {f}"
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn saturated_relu_behaves_linearly() {
        // Large positive conv biases keep every pre-activation positive on
        // [0,1] inputs, so the network is affine and the input gradient is
        // the composed weight map, independent of x.
        let arch = test_arch();
        let mut model = ToyCnn::seeded(arch, 11).unwrap();
        model.conv_bias.iter_mut().for_each(|b| *b = 10.0);
        let x1 = seeded_image(model.input_shape(), 21);
        let x2 = seeded_image(model.input_shape(), 22);
        let g1 = model.input_gradient(&x1, 0).unwrap();
        let g2 = model.input_gradient(&x2, 0).unwrap();
        for (a, b) in g1.data.iter().zip(g2.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // hand-composed map: dense -> unpool (1/4) -> conv transpose
        let a = arch;
        let (ch, cw) = (a.conv_height(), a.conv_width());
        let (ph, pw) = (a.pool_height(), a.pool_width());
        let mut expected = vec![0.0; a.input_shape().len()];
        for f in 0..a.conv_filters {
            for r in 0..ch {
                for c in 0..cw {
                    if r >= 2 * ph || c >= 2 * pw {
                        continue;
                    }
                    let flat = (f * ph + r / 2) * pw + c / 2;
                    let g = model.dense_weights[flat] / 4.0;
                    for kr in 0..a.kernel_size {
                        for kc in 0..a.kernel_size {
                            let w = model.conv_weights[(f * a.kernel_size + kr) * a.kernel_size + kc];
                            expected[(r + kr) * a.input_width + (c + kc)] += g * w;
                        }
                    }
                }
            }
        }
        for (got, want) in g1.data.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn training_reduces_loss_on_a_separable_toy_problem() {
        let arch = Architecture {
            in_channels: 1,
            input_height: 6,
            input_width: 6,
            conv_filters: 2,
            kernel_size: 3,
            num_classes: 2,
        };
        // class 0: dark images, class 1: bright images
        let mut samples = Vec::new();
        for i in 0..20 {
            let v = 0.05 + 0.01 * (i % 5) as f64;
            samples.push((Image::constant(1, 6, 6, v).unwrap(), 0));
            samples.push((Image::constant(1, 6, 6, v + 0.8).unwrap(), 1));
        }
        let refs: Vec<(&Image, usize)> = samples.iter().map(|(x, l)| (x, *l)).collect();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 20,
            batch_size: 8,
            seed: 2,
        };
        let (model, losses) = ToyCnn::train(arch, &refs, &cfg).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
        assert_eq!(model.accuracy(&refs).unwrap(), 1.0);
    }

    #[test]
    fn weights_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let model = ToyCnn::seeded(test_arch(), 9).unwrap();
        model.save(&path).unwrap();
        let back = ToyCnn::load(&path).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn load_rejects_param_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let arch = test_arch();
        let bad_header = format!(
            "{}\n",
            serde_json::to_string(&WeightsHeader {
                arch,
                param_count: arch.param_count() + 1
            })
            .unwrap()
        );
        std::fs::write(&path, bad_header).unwrap();
        assert!(matches!(
            ToyCnn::load(&path),
            Err(ModelError::WeightsFormat(_))
        ));
    }
}
