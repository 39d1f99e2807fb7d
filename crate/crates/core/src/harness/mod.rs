//! The experiment driver: configuration, the two evaluation pipelines
//! (general ablation and adversarial-patch coverage), model training,
//! report emission, and the run manifest.

mod pipeline;
pub mod report;

pub use pipeline::{
    obtain_patch, run_experiment1, run_experiment1_with, run_experiment2, run_experiment2_with,
    run_explain, RunOutput,
};
pub use report::{emit_report, load_report_rows, EmittedPaths, RecordDetail, ReportRow};

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{AblationError, FillPolicy};
use crate::adversarial::PatchError;
use crate::datasets::{self, DataError, LabelledExample, SyntheticSpec};
use crate::explain::ExplainError;
use crate::metrics::MetricsError;
use crate::model::{
    Architecture, Classifier, ModelError, RemoteClassifier, ToyCnn, TrainConfig,
};
use crate::seed::derive_seed;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{aborted} of {total} images aborted, above the 10% failure threshold")]
    TooManyFailures { aborted: usize, total: usize },
    #[error("no evaluation images survived the correctly-classified filter")]
    EmptyEvaluationSet,
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("explainer: {0}")]
    Explain(#[from] ExplainError),
    #[error("ablation: {0}")]
    Ablation(#[from] AblationError),
    #[error("patch: {0}")]
    Patch(#[from] PatchError),
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error(transparent)]
    Core(#[from] crate::types::CoreError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

/// Where evaluation images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Planted-feature synthetic data; the holdout slice is evaluated,
    /// the rest trains the model.
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
        #[serde(default = "default_holdout")]
        holdout_fraction: f64,
    },
    /// Labelled image folder; every listed example is evaluated.
    Folder {
        root: PathBuf,
        labels: PathBuf,
        num_classes: usize,
    },
}

fn default_holdout() -> f64 {
    0.2
}

/// Which classifier backs the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Toy { weights: PathBuf },
    Remote { endpoint: String, timeout_ms: u64 },
}

/// Baselines for expected-gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineSpec {
    Zero,
    DatasetSamples { count: usize },
}

/// Pixel budget of the random-mask control explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RandomMaskArea {
    /// Same area the binarization step would keep: ceil(q * H * W).
    MatchBinarization,
    /// Same area as the adversarial patch mask (adversarial runs only).
    MatchPatch,
    Fixed { pixels: usize },
}

/// One entry of the explainer list. `oracle` and `random` bypass
/// binarization and emit their masks directly, so their region area is
/// exactly the ground truth / configured area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExplainerSpec {
    Occlusion {
        window: usize,
        stride: usize,
    },
    Lime {
        cells_per_side: usize,
        num_samples: usize,
        ridge_lambda: f64,
        kernel_width: f64,
    },
    KernelShap {
        cells_per_side: usize,
        num_samples: usize,
        ridge_lambda: f64,
    },
    IntegratedGradients {
        steps: usize,
    },
    ExpectedGradients {
        samples: usize,
        baselines: BaselineSpec,
    },
    /// Ground-truth region: the planted feature (general runs) or the
    /// patch mask (adversarial runs).
    Oracle,
    RandomMask {
        area: RandomMaskArea,
    },
}

impl ExplainerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ExplainerSpec::Occlusion { .. } => "occlusion",
            ExplainerSpec::Lime { .. } => "lime",
            ExplainerSpec::KernelShap { .. } => "kernel-shap",
            ExplainerSpec::IntegratedGradients { .. } => "integrated-gradients",
            ExplainerSpec::ExpectedGradients { .. } => "expected-gradients",
            ExplainerSpec::Oracle => "oracle",
            ExplainerSpec::RandomMask { .. } => "random",
        }
    }
}

/// Adversarial-patch settings for the second pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub target_class: usize,
    pub scales: Vec<f64>,
    pub iterations: usize,
    pub step_size: f64,
    pub patch_side: usize,
    /// Patch artifact location; trained on demand when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Hyperparameters consumed by `train-model`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            conv_filters: 6,
            kernel_size: 3,
        }
    }
}

/// Which perturbed confidence lands in z': the perturbed probability of
/// the original decision, or of the new argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceVariant {
    #[default]
    OriginalClass,
    NewArgmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub explainers: Vec<ExplainerSpec>,
    /// Binarization fraction: the critical region keeps ceil(q*H*W) pixels.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub fill: FillPolicy,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<PatchSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub confidence_variant: ConfidenceVariant,
    #[serde(default)]
    pub train: TrainSpec,
}

fn default_q() -> f64 {
    0.10
}

fn default_tau() -> f64 {
    0.5
}

fn default_workers() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.explainers.is_empty() {
            return Err(HarnessError::Config("explainer list is empty".into()));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(HarnessError::Config(format!("q {} outside (0,1]", self.q)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(HarnessError::Config(format!(
                "tau {} outside (0,1]",
                self.tau
            )));
        }
        if self.workers == 0 {
            return Err(HarnessError::Config("workers must be >= 1".into()));
        }
        self.fill
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let DatasetSpec::Synthetic {
            spec,
            holdout_fraction,
        } = &self.dataset
        {
            spec.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if !(0.0 < *holdout_fraction && *holdout_fraction < 1.0) {
                return Err(HarnessError::Config(format!(
                    "holdout fraction {holdout_fraction} outside (0,1)"
                )));
            }
        }
        if let Some(patch) = &self.patch {
            if patch.scales.is_empty() {
                return Err(HarnessError::Config("patch scale list is empty".into()));
            }
            if patch.scales.iter().any(|&s| !(0.0 < s && s < 1.0)) {
                return Err(HarnessError::Config(
                    "patch scales must lie strictly inside (0,1)".into(),
                ));
            }
            if patch.patch_side == 0 {
                return Err(HarnessError::Config("patch side must be >= 1".into()));
            }
        }
        for spec in &self.explainers {
            match spec {
                ExplainerSpec::Occlusion { window, stride } => {
                    if *window == 0 || *stride == 0 {
                        return Err(HarnessError::Config(
                            "occlusion window and stride must be >= 1".into(),
                        ));
                    }
                }
                ExplainerSpec::Lime { cells_per_side, kernel_width, .. } => {
                    if *cells_per_side == 0 || !(*kernel_width > 0.0) {
                        return Err(HarnessError::Config(
                            "lime needs cells_per_side >= 1 and a positive kernel width".into(),
                        ));
                    }
                }
                ExplainerSpec::KernelShap { cells_per_side, .. } => {
                    if *cells_per_side == 0 {
                        return Err(HarnessError::Config(
                            "kernel-shap needs cells_per_side >= 1".into(),
                        ));
                    }
                }
                ExplainerSpec::IntegratedGradients { steps } => {
                    if *steps == 0 {
                        return Err(HarnessError::Config(
                            "integrated-gradients needs steps >= 1".into(),
                        ));
                    }
                }
                ExplainerSpec::ExpectedGradients { samples, .. } => {
                    if *samples == 0 {
                        return Err(HarnessError::Config(
                            "expected-gradients needs samples >= 1".into(),
                        ));
                    }
                }
                ExplainerSpec::RandomMask {
                    area: RandomMaskArea::Fixed { pixels },
                } if *pixels == 0 => {
                    return Err(HarnessError::Config(
                        "random mask area must be >= 1".into(),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Stable hash of the canonical config JSON.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", derive_seed(0, &canonical))
    }
}

/// Loads the configured classifier.
pub fn load_model(spec: &ModelSpec) -> HarnessResult<Box<dyn Classifier>> {
    match spec {
        ModelSpec::Toy { weights } => Ok(Box::new(ToyCnn::load(weights)?)),
        ModelSpec::Remote {
            endpoint,
            timeout_ms,
        } => Ok(Box::new(RemoteClassifier::connect(
            endpoint,
            Duration::from_millis(*timeout_ms),
        )?)),
    }
}

/// The full dataset plus the index slices used for training and
/// evaluation.
pub struct DatasetSplit {
    pub examples: Vec<LabelledExample>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub num_classes: usize,
}

pub fn load_dataset(spec: &DatasetSpec) -> HarnessResult<DatasetSplit> {
    match spec {
        DatasetSpec::Synthetic {
            spec,
            holdout_fraction,
        } => {
            let examples = datasets::generate_planted(spec)?;
            let (train, eval) = datasets::split_holdout(&examples, *holdout_fraction)?;
            Ok(DatasetSplit {
                examples,
                train,
                eval,
                num_classes: spec.num_classes,
            })
        }
        DatasetSpec::Folder {
            root,
            labels,
            num_classes,
        } => {
            let examples = datasets::load_folder(root, labels, *num_classes)?;
            let all: Vec<usize> = (0..examples.len()).collect();
            Ok(DatasetSplit {
                train: all.clone(),
                eval: all,
                examples,
                num_classes: *num_classes,
            })
        }
    }
}

/// Trains the toy CNN on the dataset's training slice; returns the model
/// and its accuracy on the evaluation slice.
pub fn train_model(cfg: &ExperimentConfig) -> HarnessResult<(ToyCnn, f64)> {
    cfg.validate()?;
    let split = load_dataset(&cfg.dataset)?;
    if split.train.is_empty() {
        return Err(HarnessError::Config("training slice is empty".into()));
    }
    let first = &split.examples[split.train[0]].image;
    let arch = Architecture {
        in_channels: first.channels(),
        input_height: first.height(),
        input_width: first.width(),
        conv_filters: cfg.train.conv_filters,
        kernel_size: cfg.train.kernel_size,
        num_classes: split.num_classes,
    };
    let samples: Vec<(&crate::types::Image, usize)> = split
        .train
        .iter()
        .map(|&i| (&split.examples[i].image, split.examples[i].label))
        .collect();
    let train_cfg = TrainConfig {
        learning_rate: cfg.train.learning_rate,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        seed: derive_seed(cfg.seed, "train-model"),
    };
    let (model, losses) = ToyCnn::train(arch, &samples, &train_cfg)?;
    log::info!(
        "trained model: first-epoch loss {:.4}, last-epoch loss {:.4}",
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN)
    );
    let eval_samples: Vec<(&crate::types::Image, usize)> = split
        .eval
        .iter()
        .map(|&i| (&split.examples[i].image, split.examples[i].label))
        .collect();
    let accuracy = if eval_samples.is_empty() {
        f64::NAN
    } else {
        model.accuracy(&eval_samples)?
    };
    Ok((model, accuracy))
}

/// Wall-clock bookkeeping for one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub millis: u128,
}

/// Reproducibility record for a run: equal config + seed implies equal
/// manifests once timings are stripped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub stages: Vec<StageTiming>,
    /// Relative paths of the per-image artifacts, sorted.
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Copy with timing information removed, for equality checks.
    pub fn without_timings(&self) -> Self {
        let mut copy = self.clone();
        copy.stages = Vec::new();
        copy
    }
}

/// Writes the manifest as pretty JSON under `out_dir`.
pub fn write_manifest(manifest: &RunManifest, out_dir: &std::path::Path) -> HarnessResult<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(manifest)?)?;
    Ok(path)
}
