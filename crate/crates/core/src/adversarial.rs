//! Adversarial-patch machinery: train a patch against a gradient-capable
//! classifier, overlay it at a sampled scale/rotation/translation, and
//! report the exact set of written pixels as the ground-truth impacted
//! region.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;
use crate::model::{Classifier, ModelError};
use crate::seed::derive_seed;
use crate::types::{CoreError, EvalRecord, Image};

#[derive(Error, Debug)]
pub enum PatchError {
    #[error("patch data must lie in [0,1] and have side^2 * channels entries")]
    InvalidPatchData,
    #[error("scale {scale} yields side {side}, outside [1, {max_side}]")]
    ScaleOutOfRange {
        scale: f64,
        side: usize,
        max_side: usize,
    },
    #[error("placement (top {top}, left {left}, side {side}) exceeds image {height}x{width}")]
    PlacementOutOfBounds {
        top: usize,
        left: usize,
        side: usize,
        height: usize,
        width: usize,
    },
    #[error("patch has {patch} channels, image has {image}")]
    ChannelMismatch { patch: usize, image: usize },
    #[error("model does not expose gradients")]
    GradientUnsupported,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("scale list is empty")]
    EmptyScales,
    #[error("target class {class} out of range for {num_classes} classes")]
    TargetOutOfRange { class: usize, num_classes: usize },
    #[error("record {index} is missing attack_target/patched_label")]
    MissingAttackFields { index: usize },
    #[error("patch file: {0}")]
    FileFormat(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type PatchResult<T> = Result<T, PatchError>;

/// Right-angle rotations only, so the written-pixel set stays exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    /// Maps an output pixel of the rotated square back to its source.
    #[inline]
    fn source(self, side: usize, r: usize, c: usize) -> (usize, usize) {
        match self {
            Rotation::R0 => (r, c),
            Rotation::R90 => (side - 1 - c, r),
            Rotation::R180 => (side - 1 - r, side - 1 - c),
            Rotation::R270 => (c, side - 1 - r),
        }
    }
}

/// A trained square patch plus training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    side: usize,
    channels: usize,
    data: Vec<f64>, // [channel][row][col]
    target_class: usize,
    meta: PatchMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub iterations: usize,
    pub final_mean_target_prob: f64,
}

impl Patch {
    pub fn from_parts(
        side: usize,
        channels: usize,
        data: Vec<f64>,
        target_class: usize,
        meta: PatchMeta,
    ) -> PatchResult<Self> {
        if side == 0
            || channels == 0
            || data.len() != side * side * channels
            || data.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(PatchError::InvalidPatchData);
        }
        Ok(Self {
            side,
            channels,
            data,
            target_class,
            meta,
        })
    }

    /// Untrained mid-gray patch.
    pub fn mid_gray(side: usize, channels: usize, target_class: usize) -> PatchResult<Self> {
        Self::from_parts(
            side,
            channels,
            vec![0.5; side * side * channels],
            target_class,
            PatchMeta {
                iterations: 0,
                final_mean_target_prob: 0.0,
            },
        )
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn target_class(&self) -> usize {
        self.target_class
    }

    pub fn meta(&self) -> PatchMeta {
        self.meta
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.side + r) * self.side + c]
    }

    /// JSON header line followed by the pixel data as little-endian
    /// 64-bit floats.
    pub fn save(&self, path: &Path) -> PatchResult<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let header = PatchHeader {
            side: self.side,
            channels: self.channels,
            target_class: self.target_class,
            meta: self.meta,
        };
        serde_json::to_writer(&mut out, &header)
            .map_err(|e| PatchError::FileFormat(e.to_string()))?;
        out.write_all(b"\n")?;
        for v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> PatchResult<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            if input.read(&mut byte)? == 0 {
                return Err(PatchError::FileFormat("missing newline after header".into()));
            }
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: PatchHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| PatchError::FileFormat(format!("bad header: {e}")))?;
        let mut raw = vec![0u8; header.side * header.side * header.channels * 8];
        input.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect();
        Self::from_parts(
            header.side,
            header.channels,
            data,
            header.target_class,
            header.meta,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct PatchHeader {
    side: usize,
    channels: usize,
    target_class: usize,
    meta: PatchMeta,
}

/// Where and how a patch is applied: the rendered side is
/// `round(scale * min(height, width))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub rotation: Rotation,
    pub top: usize,
    pub left: usize,
    /// Seed the placement was drawn with (provenance only).
    pub seed: u64,
}

/// Rendered patch side for a scale on an image plane.
pub fn scaled_side(scale: f64, height: usize, width: usize) -> usize {
    (scale * height.min(width) as f64).round() as usize
}

fn check_side(scale: f64, height: usize, width: usize) -> PatchResult<usize> {
    let side = scaled_side(scale, height, width);
    let max_side = height.min(width);
    if side == 0 || side > max_side {
        return Err(PatchError::ScaleOutOfRange {
            scale,
            side,
            max_side,
        });
    }
    Ok(side)
}

/// Draws a uniformly random valid placement: rotation over the four right
/// angles, translation over every in-bounds top-left position.
pub fn sample_placement(
    height: usize,
    width: usize,
    scale: f64,
    seed: u64,
) -> PatchResult<Placement> {
    let side = check_side(scale, height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = Rotation::ALL[rng.random_range(0..4)];
    let top = rng.random_range(0..=height - side);
    let left = rng.random_range(0..=width - side);
    Ok(Placement {
        scale,
        rotation,
        top,
        left,
        seed,
    })
}

/// Source patch pixel feeding output pixel (r, c) of the placed square:
/// inverse rotation first, then nearest-neighbor resampling.
#[inline]
fn source_pixel(patch_side: usize, out_side: usize, rotation: Rotation, r: usize, c: usize) -> (usize, usize) {
    let (rr, cc) = rotation.source(out_side, r, c);
    let pr = ((rr as f64 + 0.5) * patch_side as f64 / out_side as f64) as usize;
    let pc = ((cc as f64 + 0.5) * patch_side as f64 / out_side as f64) as usize;
    (pr.min(patch_side - 1), pc.min(patch_side - 1))
}

/// Writes the patch over the image and returns the patched image together
/// with the exact mask of written pixels (area = side^2).
pub fn overlay_patch(
    x: &Image,
    patch: &Patch,
    placement: &Placement,
) -> PatchResult<(Image, BinaryMask)> {
    if patch.channels != x.channels() {
        return Err(PatchError::ChannelMismatch {
            patch: patch.channels,
            image: x.channels(),
        });
    }
    let side = check_side(placement.scale, x.height(), x.width())?;
    if placement.top + side > x.height() || placement.left + side > x.width() {
        return Err(PatchError::PlacementOutOfBounds {
            top: placement.top,
            left: placement.left,
            side,
            height: x.height(),
            width: x.width(),
        });
    }
    let mut data = x.data().to_vec();
    for r in 0..side {
        for c in 0..side {
            let (pr, pc) = source_pixel(patch.side, side, placement.rotation, r, c);
            for ch in 0..x.channels() {
                data[x.index(ch, placement.top + r, placement.left + c)] = patch.at(ch, pr, pc);
            }
        }
    }
    let patched = Image::new_checked(x.channels(), x.height(), x.width(), data)?;
    let mask = BinaryMask::from_fn(x.height(), x.width(), |r, c| {
        r >= placement.top
            && r < placement.top + side
            && c >= placement.left
            && c < placement.left + side
    });
    Ok((patched, mask))
}

/// Gradient of the target-class logit with respect to every patch pixel
/// for one fixed placement: the input gradient over the written square,
/// accumulated into each written pixel's source patch pixel.
pub fn patch_gradient(
    model: &dyn Classifier,
    x: &Image,
    patch: &Patch,
    placement: &Placement,
) -> PatchResult<Vec<f64>> {
    if !model.gradient_capable() {
        return Err(PatchError::GradientUnsupported);
    }
    let (patched, _) = overlay_patch(x, patch, placement)?;
    let grad = model.grad_input(&patched, patch.target_class)?;
    let side = check_side(placement.scale, x.height(), x.width())?;
    let mut d_patch = vec![0.0f64; patch.data.len()];
    for r in 0..side {
        for c in 0..side {
            let (pr, pc) = source_pixel(patch.side, side, placement.rotation, r, c);
            for ch in 0..patch.channels {
                d_patch[(ch * patch.side + pr) * patch.side + pc] +=
                    grad.at(ch, placement.top + r, placement.left + c);
            }
        }
    }
    Ok(d_patch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchTrainConfig {
    pub target_class: usize,
    pub scales: Vec<f64>,
    pub iterations: usize,
    pub step_size: f64,
    pub patch_side: usize,
    pub seed: u64,
}

/// Projected gradient ascent on the target-class logit: each step samples
/// an image, a scale, and a placement, then pushes the patch pixels along
/// the accumulated gradient and clamps to [0,1].
pub fn train_patch(
    model: &dyn Classifier,
    train_set: &[Image],
    cfg: &PatchTrainConfig,
) -> PatchResult<Patch> {
    if !model.gradient_capable() {
        return Err(PatchError::GradientUnsupported);
    }
    if train_set.is_empty() {
        return Err(PatchError::EmptyTrainSet);
    }
    if cfg.scales.is_empty() {
        return Err(PatchError::EmptyScales);
    }
    if cfg.target_class >= model.num_classes() {
        return Err(PatchError::TargetOutOfRange {
            class: cfg.target_class,
            num_classes: model.num_classes(),
        });
    }
    let shape = model.input_shape();
    for &scale in &cfg.scales {
        check_side(scale, shape.height, shape.width)?;
    }

    let mut patch = Patch::mid_gray(cfg.patch_side, shape.channels, cfg.target_class)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.iterations {
        let x = &train_set[rng.random_range(0..train_set.len())];
        let scale = cfg.scales[rng.random_range(0..cfg.scales.len())];
        let placement = sample_placement(x.height(), x.width(), scale, rng.random::<u64>())?;
        let d_patch = patch_gradient(model, x, &patch, &placement)?;
        for (value, g) in patch.data.iter_mut().zip(&d_patch) {
            *value = (*value + cfg.step_size * g).clamp(0.0, 1.0);
        }
    }
    patch.meta = PatchMeta {
        iterations: cfg.iterations,
        final_mean_target_prob: mean_target_probability(
            model,
            train_set,
            &patch,
            &cfg.scales,
            derive_seed(cfg.seed, "patch-eval"),
        )?,
    };
    Ok(patch)
}

/// Mean probability the model assigns to the patch's target class over
/// every (image, scale) pair, with placements derived from `seed` so the
/// same call is comparable across patches.
pub fn mean_target_probability(
    model: &dyn Classifier,
    images: &[Image],
    patch: &Patch,
    scales: &[f64],
    seed: u64,
) -> PatchResult<f64> {
    if images.is_empty() {
        return Err(PatchError::EmptyTrainSet);
    }
    if scales.is_empty() {
        return Err(PatchError::EmptyScales);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, x) in images.iter().enumerate() {
        for (s, &scale) in scales.iter().enumerate() {
            let placement_seed = derive_seed(seed, &format!("{i}/{s}"));
            let placement = sample_placement(x.height(), x.width(), scale, placement_seed)?;
            let (patched, _) = overlay_patch(x, patch, &placement)?;
            total += model.classify(&patched)?.prob_of(patch.target_class);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Keeps exactly the records whose patched prediction equals the attack
/// target, in input order.
pub fn attack_success_filter(records: &[EvalRecord]) -> PatchResult<Vec<EvalRecord>> {
    let mut kept = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let (Some(target), Some(patched)) = (record.attack_target, record.patched_label) else {
            return Err(PatchError::MissingAttackFields { index });
        };
        if patched == target {
            kept.push(record.clone());
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputGradient, ModelResult, Shape};
    use crate::types::Prediction;
    use proptest::prelude::*;

    fn gray(side: usize) -> Image {
        Image::constant(1, side, side, 0.5).unwrap()
    }

    fn plain_placement(scale: f64) -> Placement {
        Placement {
            scale,
            rotation: Rotation::R0,
            top: 0,
            left: 0,
            seed: 0,
        }
    }

    #[test]
    fn half_scale_overlay_covers_the_expected_square() {
        let x = gray(32);
        let patch = Patch::mid_gray(16, 1, 0).unwrap();
        let (patched, mask) = overlay_patch(&x, &patch, &plain_placement(0.5)).unwrap();
        assert_eq!(mask.area(), 256);
        for r in 0..32 {
            for c in 0..32 {
                assert_eq!(mask.get(r, c), r < 16 && c < 16);
            }
        }
        assert_eq!(patched.height(), 32);
    }

    #[test]
    fn full_scale_mask_is_all_true() {
        let x = gray(8);
        let patch = Patch::mid_gray(4, 1, 0).unwrap();
        let (_, mask) = overlay_patch(&x, &patch, &plain_placement(1.0)).unwrap();
        assert_eq!(mask.area(), 64);
    }

    #[test]
    fn overlay_is_pure_and_deterministic() {
        let x = gray(16);
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let patch = Patch::from_parts(
            4,
            1,
            data,
            0,
            PatchMeta {
                iterations: 0,
                final_mean_target_prob: 0.0,
            },
        )
        .unwrap();
        let placement = sample_placement(16, 16, 0.4, 99).unwrap();
        let a = overlay_patch(&x, &patch, &placement).unwrap();
        let b = overlay_patch(&x, &patch, &placement).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn placement_out_of_bounds_is_rejected() {
        let x = gray(16);
        let patch = Patch::mid_gray(4, 1, 0).unwrap();
        let placement = Placement {
            scale: 0.5, // side 8
            rotation: Rotation::R0,
            top: 9,
            left: 0,
            seed: 0,
        };
        assert!(matches!(
            overlay_patch(&x, &patch, &placement),
            Err(PatchError::PlacementOutOfBounds { .. })
        ));
    }

    #[test]
    fn rotation_quarter_turn_matches_hand_fixture() {
        // patch [[a,b],[c,d]] rotated a quarter turn -> [[c,a],[d,b]]
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let patch = Patch::from_parts(
            2,
            1,
            vec![a, b, c, d],
            0,
            PatchMeta {
                iterations: 0,
                final_mean_target_prob: 0.0,
            },
        )
        .unwrap();
        let x = gray(2);
        let placement = Placement {
            scale: 1.0,
            rotation: Rotation::R90,
            top: 0,
            left: 0,
            seed: 0,
        };
        let (patched, _) = overlay_patch(&x, &patch, &placement).unwrap();
        assert_eq!(patched.data(), &[c, a, d, b]);
    }

    #[test]
    fn nearest_neighbor_upsampling_is_blockwise() {
        let patch = Patch::from_parts(
            2,
            1,
            vec![0.1, 0.2, 0.3, 0.4],
            0,
            PatchMeta {
                iterations: 0,
                final_mean_target_prob: 0.0,
            },
        )
        .unwrap();
        let x = gray(4);
        let (patched, _) = overlay_patch(&x, &patch, &plain_placement(1.0)).unwrap();
        let expected = [
            0.1, 0.1, 0.2, 0.2, //
            0.1, 0.1, 0.2, 0.2, //
            0.3, 0.3, 0.4, 0.4, //
            0.3, 0.3, 0.4, 0.4,
        ];
        assert_eq!(patched.data(), &expected);
    }

    #[test]
    fn single_valid_position_forces_origin() {
        for seed in 0..20 {
            let p = sample_placement(16, 16, 1.0, seed).unwrap();
            assert_eq!((p.top, p.left), (0, 0));
        }
    }

    #[test]
    fn sample_placement_is_deterministic() {
        let a = sample_placement(32, 32, 0.3, 77).unwrap();
        let b = sample_placement(32, 32, 0.3, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn placements_cover_every_valid_position() {
        // side 4 on an 8x8 plane: 25 valid top-left positions
        let mut seen = vec![false; 25];
        for seed in 0..2000u64 {
            let p = sample_placement(8, 8, 0.5, seed).unwrap();
            seen[p.top * 5 + p.left] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn oversized_scale_is_rejected() {
        assert!(matches!(
            sample_placement(16, 16, 1.2, 0),
            Err(PatchError::ScaleOutOfRange { .. })
        ));
        assert!(matches!(
            sample_placement(16, 16, 0.01, 0),
            Err(PatchError::ScaleOutOfRange { .. })
        ));
    }

    /// Gradient-capable stub: target logit is w . x with constant w.
    struct UniformLinear {
        shape: Shape,
        weight: f64,
    }

    impl Classifier for UniformLinear {
        fn classify(&self, x: &Image) -> ModelResult<Prediction> {
            let s: f64 = x.data().iter().sum::<f64>() * self.weight;
            Ok(Prediction::from_probs(crate::model::softmax(&[s, 0.0]))?)
        }

        fn input_shape(&self) -> Shape {
            self.shape
        }

        fn num_classes(&self) -> usize {
            2
        }

        fn gradient_capable(&self) -> bool {
            true
        }

        fn grad_input(&self, _x: &Image, class_index: usize) -> ModelResult<InputGradient> {
            let value = if class_index == 0 { self.weight } else { 0.0 };
            Ok(InputGradient {
                channels: self.shape.channels,
                height: self.shape.height,
                width: self.shape.width,
                data: vec![value; self.shape.channels * self.shape.height * self.shape.width],
            })
        }
    }

    #[test]
    fn zero_iterations_returns_mid_gray() {
        let model = UniformLinear {
            shape: Shape {
                channels: 1,
                height: 8,
                width: 8,
            },
            weight: 0.2,
        };
        let cfg = PatchTrainConfig {
            target_class: 0,
            scales: vec![0.5],
            iterations: 0,
            step_size: 1.0,
            patch_side: 4,
            seed: 0,
        };
        let patch = train_patch(&model, &[gray(8)], &cfg).unwrap();
        assert!(patch.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn linear_ascent_moves_every_pixel_by_its_weight_until_clamped() {
        let model = UniformLinear {
            shape: Shape {
                channels: 1,
                height: 8,
                width: 8,
            },
            weight: 0.2,
        };
        let base = PatchTrainConfig {
            target_class: 0,
            scales: vec![1.0], // bijective mapping, single valid position
            iterations: 1,
            step_size: 1.0,
            patch_side: 8,
            seed: 3,
        };
        let one = train_patch(&model, &[gray(8)], &base).unwrap();
        assert!(one.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let mut cfg = base.clone();
        cfg.iterations = 3; // 0.5 -> 0.7 -> 0.9 -> clamp(1.1) = 1.0
        let three = train_patch(&model, &[gray(8)], &cfg).unwrap();
        assert!(three.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn training_raises_mean_target_probability() {
        let model = UniformLinear {
            shape: Shape {
                channels: 1,
                height: 8,
                width: 8,
            },
            weight: 0.4,
        };
        let images = vec![gray(8), Image::constant(1, 8, 8, 0.3).unwrap()];
        let cfg = PatchTrainConfig {
            target_class: 0,
            scales: vec![0.4, 0.6],
            iterations: 25,
            step_size: 0.5,
            patch_side: 4,
            seed: 9,
        };
        let untrained = Patch::mid_gray(4, 1, 0).unwrap();
        let eval_seed = 1234;
        let before =
            mean_target_probability(&model, &images, &untrained, &cfg.scales, eval_seed).unwrap();
        let trained = train_patch(&model, &images, &cfg).unwrap();
        let after =
            mean_target_probability(&model, &images, &trained, &cfg.scales, eval_seed).unwrap();
        assert!(after > before, "{after} vs {before}");
        assert_eq!(trained.meta().iterations, 25);
    }

    #[test]
    fn gradient_free_model_cannot_train() {
        struct NoGrad;
        impl Classifier for NoGrad {
            fn classify(&self, _x: &Image) -> ModelResult<Prediction> {
                Ok(Prediction::from_probs(vec![1.0])?)
            }
            fn input_shape(&self) -> Shape {
                Shape {
                    channels: 1,
                    height: 8,
                    width: 8,
                }
            }
            fn num_classes(&self) -> usize {
                1
            }
        }
        let cfg = PatchTrainConfig {
            target_class: 0,
            scales: vec![0.5],
            iterations: 1,
            step_size: 1.0,
            patch_side: 4,
            seed: 0,
        };
        assert!(matches!(
            train_patch(&NoGrad, &[gray(8)], &cfg),
            Err(PatchError::GradientUnsupported)
        ));
    }

    #[test]
    fn success_filter_keeps_only_target_hits_in_order() {
        let rec = |target: usize, patched: usize| {
            EvalRecord::new(0, 0.9, 1, 0.2)
                .unwrap()
                .with_attack(target, patched)
        };
        let records = vec![rec(2, 2), rec(2, 1), rec(2, 2), rec(2, 0), rec(2, 1)];
        let kept = attack_success_filter(&records).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|r| r.patched_label == Some(2)));

        let all: Vec<_> = (0..3).map(|_| rec(1, 1)).collect();
        assert_eq!(attack_success_filter(&all).unwrap().len(), 3);
        let none: Vec<_> = (0..3).map(|_| rec(1, 0)).collect();
        assert!(attack_success_filter(&none).unwrap().is_empty());
    }

    #[test]
    fn success_filter_requires_attack_fields() {
        let bare = EvalRecord::new(0, 0.9, 1, 0.2).unwrap();
        assert!(matches!(
            attack_success_filter(&[bare]),
            Err(PatchError::MissingAttackFields { index: 0 })
        ));
    }

    #[test]
    fn patch_file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("patch.bin");
        let data: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
        let patch = Patch::from_parts(
            4,
            2,
            data,
            3,
            PatchMeta {
                iterations: 500,
                final_mean_target_prob: 0.875,
            },
        )
        .unwrap();
        patch.save(&path).unwrap();
        let back = Patch::load(&path).unwrap();
        assert_eq!(patch, back);
    }

    proptest! {
        #[test]
        fn overlay_changes_nothing_outside_the_mask(
            seed in 0u64..200,
            scale_pct in 25u32..=100,
        ) {
            let scale = scale_pct as f64 / 100.0;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..144).map(|_| rng.random_range(0.0..=1.0)).collect();
            let x = Image::new_checked(1, 12, 12, data).unwrap();
            let patch = Patch::mid_gray(3, 1, 0).unwrap();
            let placement = sample_placement(12, 12, scale, seed).unwrap();
            let (patched, mask) = overlay_patch(&x, &patch, &placement).unwrap();
            let side = scaled_side(scale, 12, 12);
            prop_assert_eq!(mask.area(), side * side);
            for r in 0..12 {
                for c in 0..12 {
                    if !mask.get(r, c) {
                        prop_assert_eq!(patched.at(0, r, c).to_bits(), x.at(0, r, c).to_bits());
                    }
                }
            }
        }
    }
}
