//! The absence operator: rebuild an image with a critical region removed
//! under a configurable fill policy.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;
use crate::types::{CoreError, Image};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AblationError {
    #[error("mask {mask_height}x{mask_width} does not match image {image_height}x{image_width}")]
    DimensionMismatch {
        mask_height: usize,
        mask_width: usize,
        image_height: usize,
        image_width: usize,
    },
    #[error("dataset channel mean {value} at channel {channel} outside [0,1]")]
    MeanOutOfRange { channel: usize, value: f64 },
    #[error("dataset means cover {got} channels, image has {expected}")]
    MeanChannelMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type AblationResult<T> = Result<T, AblationError>;

/// How removed pixels are re-filled. A masked pixel is replaced in all
/// channels; pixels outside the mask are copied bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FillPolicy {
    /// Literal removal: masked pixels become 0.
    Zero,
    /// Per-channel mean of the unmasked pixels of the image itself
    /// (whole-image mean when the mask covers everything).
    ImageChannelMean,
    /// Fixed per-channel means computed over a dataset.
    DatasetChannelMean { means: Vec<f64> },
    /// Seeded uniform noise in [0,1], independent per masked pixel.
    UniformNoise { seed: u64 },
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::ImageChannelMean
    }
}

impl FillPolicy {
    /// Checks the policy's own invariants (means present and in range).
    pub fn validate(&self) -> AblationResult<()> {
        if let FillPolicy::DatasetChannelMean { means } = self {
            for (channel, &value) in means.iter().enumerate() {
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(AblationError::MeanOutOfRange { channel, value });
                }
            }
        }
        Ok(())
    }
}

/// Produces the input-in-absence-of-the-region image: masked pixels are
/// replaced per policy, everything else is copied unchanged.
pub fn apply_absence(x: &Image, c: &BinaryMask, policy: &FillPolicy) -> AblationResult<Image> {
    if c.height() != x.height() || c.width() != x.width() {
        return Err(AblationError::DimensionMismatch {
            mask_height: c.height(),
            mask_width: c.width(),
            image_height: x.height(),
            image_width: x.width(),
        });
    }
    policy.validate()?;

    let mut data = x.data().to_vec();
    match policy {
        FillPolicy::Zero => {
            fill_constant_per_channel(&mut data, x, c, |_| 0.0);
        }
        FillPolicy::ImageChannelMean => {
            let means = x.channel_means_where(|r, col| !c.get(r, col));
            fill_constant_per_channel(&mut data, x, c, |ch| means[ch]);
        }
        FillPolicy::DatasetChannelMean { means } => {
            if means.len() != x.channels() {
                return Err(AblationError::MeanChannelMismatch {
                    expected: x.channels(),
                    got: means.len(),
                });
            }
            fill_constant_per_channel(&mut data, x, c, |ch| means[ch]);
        }
        FillPolicy::UniformNoise { seed } => {
            // Fixed order (channel, row, col) over masked pixels keeps the
            // fill a function of (seed, mask) only.
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for ch in 0..x.channels() {
                for r in 0..x.height() {
                    for col in 0..x.width() {
                        if c.get(r, col) {
                            data[x.index(ch, r, col)] = rng.random_range(0.0..=1.0);
                        }
                    }
                }
            }
        }
    }
    Ok(Image::new_checked(x.channels(), x.height(), x.width(), data)?)
}

fn fill_constant_per_channel<F: Fn(usize) -> f64>(
    data: &mut [f64],
    x: &Image,
    c: &BinaryMask,
    value: F,
) {
    for ch in 0..x.channels() {
        let v = value(ch);
        for r in 0..x.height() {
            for col in 0..x.width() {
                if c.get(r, col) {
                    data[x.index(ch, r, col)] = v;
                }
            }
        }
    }
}
