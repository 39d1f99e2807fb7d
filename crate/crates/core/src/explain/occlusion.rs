//! Occlusion saliency: slide a square window over the image, fill it,
//! re-classify, and credit every covered pixel with the drop in the
//! original-class probability.

use super::{ExplainError, ExplainResult};
use crate::ablation::{apply_absence, FillPolicy};
use crate::mask::BinaryMask;
use crate::model::Classifier;
use crate::types::{Image, SaliencyMap};

/// Saliency of a pixel is the mean probability drop over the windows that
/// cover it; pixels covered by no window score zero.
pub fn occlusion_explain(
    x: &Image,
    model: &dyn Classifier,
    window: usize,
    stride: usize,
    fill: &FillPolicy,
) -> ExplainResult<SaliencyMap> {
    let (h, w) = (x.height(), x.width());
    if window == 0 || window > h.min(w) {
        return Err(ExplainError::InvalidConfig(format!(
            "window {window} outside [1, min({h},{w})]"
        )));
    }
    if stride == 0 {
        return Err(ExplainError::InvalidConfig("stride must be >= 1".into()));
    }

    let original = model.classify(x)?;
    let baseline = original.confidence();
    let class = original.label();

    let mut drop_sum = vec![0.0f64; h * w];
    let mut cover_count = vec![0u32; h * w];
    let mut top = 0;
    while top + window <= h {
        let mut left = 0;
        while left + window <= w {
            let mask = BinaryMask::from_fn(h, w, |r, c| {
                r >= top && r < top + window && c >= left && c < left + window
            });
            let occluded = apply_absence(x, &mask, fill)?;
            let drop = baseline - model.classify(&occluded)?.prob_of(class);
            for r in top..top + window {
                for c in left..left + window {
                    drop_sum[r * w + c] += drop;
                    cover_count[r * w + c] += 1;
                }
            }
            left += stride;
        }
        top += stride;
    }

    let scores = drop_sum
        .iter()
        .zip(&cover_count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    Ok(SaliencyMap::new(h, w, scores)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelResult, Shape};
    use crate::types::Prediction;

    /// Class-1 probability reads a single pixel.
    struct PixelReader {
        shape: Shape,
        row: usize,
        col: usize,
    }

    impl Classifier for PixelReader {
        fn classify(&self, x: &Image) -> ModelResult<Prediction> {
            let p = 0.1 + 0.8 * x.at(0, self.row, self.col);
            Ok(Prediction::from_probs(vec![1.0 - p, p])?)
        }

        fn input_shape(&self) -> Shape {
            self.shape
        }

        fn num_classes(&self) -> usize {
            2
        }
    }

    struct ConstantModel;

    impl Classifier for ConstantModel {
        fn classify(&self, _x: &Image) -> ModelResult<Prediction> {
            Ok(Prediction::from_probs(vec![0.25, 0.75])?)
        }

        fn input_shape(&self) -> Shape {
            Shape {
                channels: 1,
                height: 4,
                width: 4,
            }
        }

        fn num_classes(&self) -> usize {
            2
        }
    }

    #[test]
    fn saliency_peaks_at_the_single_causal_pixel() {
        let model = PixelReader {
            shape: Shape {
                channels: 1,
                height: 5,
                width: 5,
            },
            row: 0,
            col: 0,
        };
        let x = Image::constant(1, 5, 5, 0.9).unwrap();
        let s = occlusion_explain(&x, &model, 2, 1, &FillPolicy::Zero).unwrap();
        let best = s
            .scores()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(best, 0, "saliency argmax should be pixel (0,0)");
        assert!(s.at(0, 0) > s.at(4, 4));
    }

    #[test]
    fn constant_model_yields_zero_saliency() {
        let x = Image::constant(1, 4, 4, 0.5).unwrap();
        let s = occlusion_explain(&x, &ConstantModel, 2, 2, &FillPolicy::Zero).unwrap();
        assert!(s.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_window_gives_uniform_full_ablation_drop() {
        let model = PixelReader {
            shape: Shape {
                channels: 1,
                height: 3,
                width: 3,
            },
            row: 1,
            col: 1,
        };
        let x = Image::constant(1, 3, 3, 1.0).unwrap();
        let s = occlusion_explain(&x, &model, 3, 1, &FillPolicy::Zero).unwrap();
        // 0.9 - 0.1 = 0.8 drop when the whole image is zeroed
        assert!(s.scores().iter().all(|&v| (v - 0.8).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_window_and_stride() {
        let x = Image::constant(1, 4, 4, 0.5).unwrap();
        assert!(occlusion_explain(&x, &ConstantModel, 0, 1, &FillPolicy::Zero).is_err());
        assert!(occlusion_explain(&x, &ConstantModel, 5, 1, &FillPolicy::Zero).is_err());
        assert!(occlusion_explain(&x, &ConstantModel, 2, 0, &FillPolicy::Zero).is_err());
    }
}
