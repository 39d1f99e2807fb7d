//! The two evaluation pipelines. Per-image work is embarrassingly
//! parallel: images fan out over a bounded worker pool, per-image seeds
//! derive from the run seed and the image id (never from scheduling), and
//! records are merged back in dataset order, so reports are byte-identical
//! for any worker count.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::report::{RecordDetail, ReportRow};
use super::{
    BaselineSpec, ConfidenceVariant, DatasetSplit, ExperimentConfig, ExplainerSpec, HarnessError,
    HarnessResult, PatchSpec, RandomMaskArea, RunManifest, StageTiming,
};
use crate::ablation::apply_absence;
use crate::adversarial::{
    overlay_patch, sample_placement, train_patch, Patch, PatchTrainConfig,
};
use crate::datasets::LabelledExample;
use crate::explain::{
    binarize_topk, expected_gradients, grid_segmentation, integrated_gradients, occlusion_explain,
    surrogate_explain, AlphaSchedule, PathAttributionConfig, SampleScheme, SurrogateConfig,
    SurrogateKernel,
};
use crate::mask::BinaryMask;
use crate::metrics::{build_report, MetricsConfig};
use crate::model::Classifier;
use crate::seed::derive_seed;
use crate::types::{EvalRecord, Image, SaliencyMap};

/// Everything a pipeline run produces: the report rows, the manifest, and
/// the abort tally behind the failure threshold.
#[derive(Debug)]
pub struct RunOutput {
    pub rows: Vec<ReportRow>,
    pub manifest: RunManifest,
    pub aborted: usize,
    pub total: usize,
}

#[derive(Serialize)]
struct ArtifactFile<'a> {
    id: &'a str,
    explainer: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    saliency: Option<&'a SaliencyMap>,
    mask: &'a BinaryMask,
    y: usize,
    z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    y_prime: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_prime: Option<f64>,
}

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '.' || c == '_' { c } else { '_' })
        .collect()
}

fn build_pool(workers: usize) -> HarnessResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Expected-gradients baselines, resolved once per run and aligned with
/// the explainer list.
fn prepare_baselines(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
) -> HarnessResult<Vec<Option<Vec<Image>>>> {
    cfg.explainers
        .iter()
        .enumerate()
        .map(|(index, spec)| match spec {
            ExplainerSpec::ExpectedGradients {
                baselines: BaselineSpec::DatasetSamples { count },
                ..
            } => {
                if *count == 0 {
                    return Err(HarnessError::Config(
                        "expected-gradients needs at least one dataset baseline".into(),
                    ));
                }
                let mut order: Vec<usize> = split.train.clone();
                if order.is_empty() {
                    order = (0..split.examples.len()).collect();
                }
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("eg-baselines/{index}")));
                order.shuffle(&mut rng);
                let images = order
                    .iter()
                    .take(*count)
                    .map(|&i| split.examples[i].image.clone())
                    .collect();
                Ok(Some(images))
            }
            _ => Ok(None),
        })
        .collect()
}

/// Runs one explainer spec on one image and reduces it to the critical
/// mask. Saliency-producing methods go through top-q binarization; the
/// oracle and random controls emit masks of their own area directly.
#[allow(clippy::too_many_arguments)]
fn explainer_mask(
    spec: &ExplainerSpec,
    x: &Image,
    model: &dyn Classifier,
    seed: u64,
    cfg: &ExperimentConfig,
    oracle_region: Option<&BinaryMask>,
    patch_area: Option<usize>,
    eg_baselines: Option<&Vec<Image>>,
) -> HarnessResult<(Option<SaliencyMap>, BinaryMask)> {
    let (h, w) = (x.height(), x.width());
    match spec {
        ExplainerSpec::Occlusion { window, stride } => {
            let s = occlusion_explain(x, model, *window, *stride, &cfg.fill)?;
            let mask = binarize_topk(&s, cfg.q)?;
            Ok((Some(s), mask))
        }
        ExplainerSpec::Lime {
            cells_per_side,
            num_samples,
            ridge_lambda,
            kernel_width,
        } => {
            let seg = grid_segmentation(h, w, *cells_per_side)?;
            let surrogate_cfg = SurrogateConfig {
                num_samples: *num_samples,
                ridge_lambda: *ridge_lambda,
                kernel: SurrogateKernel::ExponentialLocality {
                    sigma: *kernel_width,
                },
                scheme: SampleScheme::Random,
                seed,
                fill: cfg.fill.clone(),
            };
            let s = surrogate_explain(x, model, &seg, &surrogate_cfg)?;
            let mask = binarize_topk(&s, cfg.q)?;
            Ok((Some(s), mask))
        }
        ExplainerSpec::KernelShap {
            cells_per_side,
            num_samples,
            ridge_lambda,
        } => {
            let seg = grid_segmentation(h, w, *cells_per_side)?;
            let surrogate_cfg = SurrogateConfig {
                num_samples: *num_samples,
                ridge_lambda: *ridge_lambda,
                kernel: SurrogateKernel::ShapleyKernel,
                scheme: SampleScheme::Random,
                seed,
                fill: cfg.fill.clone(),
            };
            let s = surrogate_explain(x, model, &seg, &surrogate_cfg)?;
            let mask = binarize_topk(&s, cfg.q)?;
            Ok((Some(s), mask))
        }
        ExplainerSpec::IntegratedGradients { steps } => {
            let path_cfg = PathAttributionConfig {
                steps: *steps,
                alpha: AlphaSchedule::Midpoint,
                seed: 0,
            };
            let s = integrated_gradients(x, model, &path_cfg)?;
            let mask = binarize_topk(&s, cfg.q)?;
            Ok((Some(s), mask))
        }
        ExplainerSpec::ExpectedGradients { samples, baselines } => {
            let zero_baseline;
            let refs: &[Image] = match baselines {
                BaselineSpec::Zero => {
                    zero_baseline = vec![Image::constant(x.channels(), h, w, 0.0)
                        .map_err(crate::explain::ExplainError::from)?];
                    &zero_baseline
                }
                BaselineSpec::DatasetSamples { .. } => eg_baselines
                    .map(|v| v.as_slice())
                    .ok_or_else(|| HarnessError::Config("missing prepared baselines".into()))?,
            };
            let path_cfg = PathAttributionConfig {
                steps: *samples,
                alpha: AlphaSchedule::Random,
                seed,
            };
            let s = expected_gradients(x, model, refs, &path_cfg)?;
            let mask = binarize_topk(&s, cfg.q)?;
            Ok((Some(s), mask))
        }
        ExplainerSpec::Oracle => {
            let region = oracle_region.ok_or_else(|| {
                HarnessError::Config(
                    "oracle explainer needs a ground-truth region for every image".into(),
                )
            })?;
            let scores = (0..h * w)
                .map(|i| if region.get(i / w, i % w) { 1.0 } else { 0.0 })
                .collect();
            let s = SaliencyMap::new(h, w, scores).map_err(crate::explain::ExplainError::from)?;
            Ok((Some(s), region.clone()))
        }
        ExplainerSpec::RandomMask { area } => {
            let pixels = match area {
                RandomMaskArea::MatchBinarization => {
                    ((cfg.q * (h * w) as f64).ceil() as usize).min(h * w)
                }
                RandomMaskArea::MatchPatch => patch_area.ok_or_else(|| {
                    HarnessError::Config(
                        "random mask area `match-patch` is only defined in adversarial runs".into(),
                    )
                })?,
                RandomMaskArea::Fixed { pixels } => *pixels,
            };
            let mask = BinaryMask::random(h, w, pixels, seed)
                .map_err(crate::explain::ExplainError::from)?;
            let scores = (0..h * w)
                .map(|i| if mask.get(i / w, i % w) { 1.0 } else { 0.0 })
                .collect();
            let s = SaliencyMap::new(h, w, scores).map_err(crate::explain::ExplainError::from)?;
            Ok((Some(s), mask))
        }
    }
}

fn perturbed_confidence(
    variant: ConfidenceVariant,
    original_class: usize,
    perturbed: &crate::types::Prediction,
) -> f64 {
    match variant {
        ConfidenceVariant::OriginalClass => perturbed.prob_of(original_class),
        ConfidenceVariant::NewArgmax => perturbed.confidence(),
    }
}

enum Exp1Outcome {
    /// Misclassified; excluded by the correctly-classified filter.
    Filtered,
    Evaluated(Vec<(EvalRecord, RecordDetail)>, Vec<String>),
}

fn process_exp1_image(
    example: &LabelledExample,
    model: &dyn Classifier,
    cfg: &ExperimentConfig,
    baselines: &[Option<Vec<Image>>],
    out_dir: &Path,
) -> HarnessResult<Exp1Outcome> {
    let prediction = model.classify(&example.image)?;
    if prediction.label() != example.label {
        return Ok(Exp1Outcome::Filtered);
    }
    let y = prediction.label();
    let z = prediction.confidence();
    let safe_id = sanitize_id(&example.id);
    let image_dir = out_dir.join("artifacts").join(&safe_id);
    fs::create_dir_all(&image_dir)?;

    let mut outputs = Vec::with_capacity(cfg.explainers.len());
    let mut artifact_paths = Vec::with_capacity(cfg.explainers.len());
    for (index, spec) in cfg.explainers.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &format!("explain/{}/{}", spec.name(), example.id));
        let (saliency, mask) = explainer_mask(
            spec,
            &example.image,
            model,
            seed,
            cfg,
            example.ground_truth_region.as_ref(),
            None,
            baselines[index].as_ref(),
        )?;
        let ablated = apply_absence(&example.image, &mask, &cfg.fill)?;
        let perturbed = model.classify(&ablated)?;
        let y_prime = perturbed.label();
        let z_prime = perturbed_confidence(cfg.confidence_variant, y, &perturbed);
        let record = EvalRecord::new(y, z, y_prime, z_prime)?;
        let detail = RecordDetail {
            id: example.id.clone(),
            y,
            z,
            y_prime,
            z_prime,
            attack_target: None,
            patched_label: None,
            iou: None,
        };
        let artifact = ArtifactFile {
            id: &example.id,
            explainer: spec.name(),
            scale: None,
            saliency: saliency.as_ref(),
            mask: &mask,
            y,
            z,
            y_prime: Some(y_prime),
            z_prime: Some(z_prime),
        };
        let rel = format!("artifacts/{}/{}.json", safe_id, spec.name());
        fs::write(out_dir.join(&rel), serde_json::to_string(&artifact)?)?;
        artifact_paths.push(rel);
        outputs.push((record, detail));
    }
    Ok(Exp1Outcome::Evaluated(outputs, artifact_paths))
}

/// General-scenario pipeline: classify, keep correctly classified images,
/// explain, binarize, ablate, re-classify, aggregate per explainer.
pub fn run_experiment1(cfg: &ExperimentConfig) -> HarnessResult<RunOutput> {
    cfg.validate()?;
    let model = super::load_model(&cfg.model)?;
    let split = super::load_dataset(&cfg.dataset)?;
    run_experiment1_with(model.as_ref(), &split, cfg)
}

/// Same pipeline with the model and dataset supplied by the caller.
pub fn run_experiment1_with(
    model: &dyn Classifier,
    split: &DatasetSplit,
    cfg: &ExperimentConfig,
) -> HarnessResult<RunOutput> {
    cfg.validate()?;
    let eval: Vec<&LabelledExample> = split.eval.iter().map(|&i| &split.examples[i]).collect();
    if eval.is_empty() {
        return Err(HarnessError::EmptyEvaluationSet);
    }
    let baselines = prepare_baselines(cfg, split)?;
    fs::create_dir_all(cfg.out_dir.join("artifacts"))?;
    let pool = build_pool(cfg.workers)?;
    let started = Instant::now();
    let outcomes: Vec<Result<Exp1Outcome, String>> = pool.install(|| {
        eval.par_iter()
            .map(|example| {
                process_exp1_image(example, model, cfg, &baselines, &cfg.out_dir)
                    .map_err(|e| format!("{}: {e}", example.id))
            })
            .collect()
    });

    let total = eval.len();
    let mut aborted = 0usize;
    let mut per_explainer: Vec<Vec<(EvalRecord, RecordDetail)>> =
        vec![Vec::new(); cfg.explainers.len()];
    let mut artifacts = Vec::new();
    for outcome in outcomes {
        match outcome {
            Err(message) => {
                log::warn!("image aborted: {message}");
                aborted += 1;
            }
            Ok(Exp1Outcome::Filtered) => {}
            Ok(Exp1Outcome::Evaluated(outputs, paths)) => {
                for (index, pair) in outputs.into_iter().enumerate() {
                    per_explainer[index].push(pair);
                }
                artifacts.extend(paths);
            }
        }
    }
    if aborted * 10 > total {
        return Err(HarnessError::TooManyFailures { aborted, total });
    }

    let metrics_cfg = MetricsConfig { tau: cfg.tau };
    let mut rows = Vec::with_capacity(cfg.explainers.len());
    for (spec, pairs) in cfg.explainers.iter().zip(per_explainer) {
        let (records, details): (Vec<EvalRecord>, Vec<RecordDetail>) = pairs.into_iter().unzip();
        let report = if records.is_empty() {
            None
        } else {
            Some(build_report(&records, &metrics_cfg)?)
        };
        rows.push(ReportRow {
            explainer: spec.name().to_string(),
            scale: None,
            report,
            records: details,
        });
    }

    let mut manifest = RunManifest::new(cfg);
    artifacts.sort_unstable();
    manifest.artifacts = artifacts;
    manifest.stages.push(StageTiming {
        name: "experiment1".into(),
        millis: started.elapsed().as_millis(),
    });
    Ok(RunOutput {
        rows,
        manifest,
        aborted,
        total,
    })
}

/// Loads the configured patch artifact, training (and saving) it first
/// when the file is absent.
pub fn obtain_patch(
    cfg: &ExperimentConfig,
    model: &dyn Classifier,
    split: &DatasetSplit,
) -> HarnessResult<Patch> {
    let spec = patch_spec(cfg)?;
    if let Some(path) = &spec.path {
        if path.is_file() {
            let patch = Patch::load(path)?;
            if patch.target_class() != spec.target_class {
                return Err(HarnessError::Config(format!(
                    "patch file targets class {}, config says {}",
                    patch.target_class(),
                    spec.target_class
                )));
            }
            return Ok(patch);
        }
    }
    let train_images: Vec<Image> = split
        .train
        .iter()
        .map(|&i| split.examples[i].image.clone())
        .collect();
    let patch = train_patch(
        model,
        &train_images,
        &PatchTrainConfig {
            target_class: spec.target_class,
            scales: spec.scales.clone(),
            iterations: spec.iterations,
            step_size: spec.step_size,
            patch_side: spec.patch_side,
            seed: derive_seed(cfg.seed, "train-patch"),
        },
    )?;
    log::info!(
        "trained patch: mean target probability {:.4}",
        patch.meta().final_mean_target_prob
    );
    if let Some(path) = &spec.path {
        patch.save(path)?;
    }
    Ok(patch)
}

fn patch_spec(cfg: &ExperimentConfig) -> HarnessResult<&PatchSpec> {
    cfg.patch
        .as_ref()
        .ok_or_else(|| HarnessError::Config("adversarial run needs a `patch` section".into()))
}

enum ScaleOutcome {
    /// Patched prediction missed the target class; dropped by the
    /// success filter.
    Unsuccessful,
    Evaluated(Vec<(EvalRecord, RecordDetail)>, Vec<String>),
}

#[allow(clippy::too_many_arguments)]
fn process_exp2_image_scale(
    example: &LabelledExample,
    scale: f64,
    model: &dyn Classifier,
    patch: &Patch,
    cfg: &ExperimentConfig,
    baselines: &[Option<Vec<Image>>],
    out_dir: &Path,
) -> HarnessResult<ScaleOutcome> {
    let target = patch.target_class();
    let placement_seed = derive_seed(cfg.seed, &format!("placement/{scale}/{}", example.id));
    let placement = sample_placement(
        example.image.height(),
        example.image.width(),
        scale,
        placement_seed,
    )?;
    let (patched, impacted) = overlay_patch(&example.image, patch, &placement)?;
    let patched_pred = model.classify(&patched)?;
    let patched_label = patched_pred.label();
    if patched_label != target {
        return Ok(ScaleOutcome::Unsuccessful);
    }
    // the directed erroneous decision is the one under attack
    let y = patched_label;
    let z = patched_pred.confidence();
    let safe_id = sanitize_id(&example.id);
    let image_dir = out_dir.join("artifacts").join(&safe_id);
    fs::create_dir_all(&image_dir)?;

    let mut outputs = Vec::with_capacity(cfg.explainers.len());
    let mut artifact_paths = Vec::with_capacity(cfg.explainers.len());
    for (index, spec) in cfg.explainers.iter().enumerate() {
        let seed = derive_seed(
            cfg.seed,
            &format!("explain/{}/{scale}/{}", spec.name(), example.id),
        );
        let (saliency, critical) = explainer_mask(
            spec,
            &patched,
            model,
            seed,
            cfg,
            Some(&impacted),
            Some(impacted.area()),
            baselines[index].as_ref(),
        )?;
        let ablated = apply_absence(&patched, &critical, &cfg.fill)?;
        let perturbed = model.classify(&ablated)?;
        let y_prime = perturbed.label();
        let z_prime = perturbed_confidence(cfg.confidence_variant, y, &perturbed);
        let iou = impacted.iou(&critical)?.unwrap_or(0.0);
        let record = EvalRecord::new(y, z, y_prime, z_prime)?
            .with_coverage(impacted.clone(), critical.clone())?
            .with_attack(target, patched_label);
        let detail = RecordDetail {
            id: example.id.clone(),
            y,
            z,
            y_prime,
            z_prime,
            attack_target: Some(target),
            patched_label: Some(patched_label),
            iou: Some(iou),
        };
        let artifact = ArtifactFile {
            id: &example.id,
            explainer: spec.name(),
            scale: Some(scale),
            saliency: saliency.as_ref(),
            mask: &critical,
            y,
            z,
            y_prime: Some(y_prime),
            z_prime: Some(z_prime),
        };
        let rel = format!("artifacts/{}/{}@{}.json", safe_id, spec.name(), scale);
        fs::write(out_dir.join(&rel), serde_json::to_string(&artifact)?)?;
        artifact_paths.push(rel);
        outputs.push((record, detail));
    }
    Ok(ScaleOutcome::Evaluated(outputs, artifact_paths))
}

/// Adversarial pipeline: overlay the patch at every scale, keep images
/// whose patched prediction hits the attack target, then score each
/// explainer's mask against the patch region and by ablating it from the
/// patched image.
pub fn run_experiment2(cfg: &ExperimentConfig) -> HarnessResult<RunOutput> {
    cfg.validate()?;
    let model = super::load_model(&cfg.model)?;
    let split = super::load_dataset(&cfg.dataset)?;
    let patch = obtain_patch(cfg, model.as_ref(), &split)?;
    run_experiment2_with(model.as_ref(), &split, &patch, cfg)
}

/// Same pipeline with model, dataset, and patch supplied by the caller.
pub fn run_experiment2_with(
    model: &dyn Classifier,
    split: &DatasetSplit,
    patch: &Patch,
    cfg: &ExperimentConfig,
) -> HarnessResult<RunOutput> {
    cfg.validate()?;
    let spec = patch_spec(cfg)?;
    let scales = spec.scales.clone();
    let eval: Vec<&LabelledExample> = split.eval.iter().map(|&i| &split.examples[i]).collect();
    if eval.is_empty() {
        return Err(HarnessError::EmptyEvaluationSet);
    }
    let baselines = prepare_baselines(cfg, split)?;
    fs::create_dir_all(cfg.out_dir.join("artifacts"))?;
    let pool = build_pool(cfg.workers)?;
    let started = Instant::now();

    // one work item per image; every scale is handled inside so a worker
    // touches each image once
    let outcomes: Vec<Vec<Result<ScaleOutcome, String>>> = pool.install(|| {
        eval.par_iter()
            .map(|example| {
                scales
                    .iter()
                    .map(|&scale| {
                        process_exp2_image_scale(
                            example, scale, model, patch, cfg, &baselines, &cfg.out_dir,
                        )
                        .map_err(|e| format!("{} at scale {scale}: {e}", example.id))
                    })
                    .collect()
            })
            .collect()
    });

    let total = eval.len() * scales.len();
    let mut aborted = 0usize;
    // records indexed by (scale, explainer)
    let mut cells: Vec<Vec<Vec<(EvalRecord, RecordDetail)>>> =
        vec![vec![Vec::new(); cfg.explainers.len()]; scales.len()];
    let mut artifacts = Vec::new();
    for per_image in outcomes {
        for (scale_index, outcome) in per_image.into_iter().enumerate() {
            match outcome {
                Err(message) => {
                    log::warn!("image/scale aborted: {message}");
                    aborted += 1;
                }
                Ok(ScaleOutcome::Unsuccessful) => {}
                Ok(ScaleOutcome::Evaluated(outputs, paths)) => {
                    for (explainer_index, pair) in outputs.into_iter().enumerate() {
                        cells[scale_index][explainer_index].push(pair);
                    }
                    artifacts.extend(paths);
                }
            }
        }
    }
    if aborted * 10 > total {
        return Err(HarnessError::TooManyFailures { aborted, total });
    }

    let metrics_cfg = MetricsConfig { tau: cfg.tau };
    let mut rows = Vec::new();
    for (explainer_index, spec) in cfg.explainers.iter().enumerate() {
        for (scale_index, &scale) in scales.iter().enumerate() {
            let pairs = std::mem::take(&mut cells[scale_index][explainer_index]);
            let (records, details): (Vec<EvalRecord>, Vec<RecordDetail>) =
                pairs.into_iter().unzip();
            let report = if records.is_empty() {
                log::warn!(
                    "no successful attacks for {} at scale {scale}; cell undefined",
                    spec.name()
                );
                None
            } else {
                Some(build_report(&records, &metrics_cfg)?)
            };
            rows.push(ReportRow {
                explainer: spec.name().to_string(),
                scale: Some(scale),
                report,
                records: details,
            });
        }
    }

    let mut manifest = RunManifest::new(cfg);
    artifacts.sort_unstable();
    manifest.artifacts = artifacts;
    manifest.stages.push(StageTiming {
        name: "experiment2".into(),
        millis: started.elapsed().as_millis(),
    });
    Ok(RunOutput {
        rows,
        manifest,
        aborted,
        total,
    })
}

/// Explain-only pass: write saliency/mask artifacts for every evaluation
/// image without ablation or metrics.
pub fn run_explain(cfg: &ExperimentConfig) -> HarnessResult<RunManifest> {
    cfg.validate()?;
    let model = super::load_model(&cfg.model)?;
    let split = super::load_dataset(&cfg.dataset)?;
    let eval: Vec<&LabelledExample> = split.eval.iter().map(|&i| &split.examples[i]).collect();
    if eval.is_empty() {
        return Err(HarnessError::EmptyEvaluationSet);
    }
    let baselines = prepare_baselines(cfg, &split)?;
    fs::create_dir_all(cfg.out_dir.join("artifacts"))?;
    let pool = build_pool(cfg.workers)?;
    let started = Instant::now();
    let model = model.as_ref();
    let outcomes: Vec<Result<Vec<String>, String>> = pool.install(|| {
        eval.par_iter()
            .map(|example| {
                explain_only_image(example, model, cfg, &baselines)
                    .map_err(|e| format!("{}: {e}", example.id))
            })
            .collect()
    });
    let total = eval.len();
    let mut aborted = 0;
    let mut artifacts = Vec::new();
    for outcome in outcomes {
        match outcome {
            Err(message) => {
                log::warn!("image aborted: {message}");
                aborted += 1;
            }
            Ok(paths) => artifacts.extend(paths),
        }
    }
    if aborted * 10 > total {
        return Err(HarnessError::TooManyFailures { aborted, total });
    }
    let mut manifest = RunManifest::new(cfg);
    artifacts.sort_unstable();
    manifest.artifacts = artifacts;
    manifest.stages.push(StageTiming {
        name: "explain".into(),
        millis: started.elapsed().as_millis(),
    });
    Ok(manifest)
}

fn explain_only_image(
    example: &LabelledExample,
    model: &dyn Classifier,
    cfg: &ExperimentConfig,
    baselines: &[Option<Vec<Image>>],
) -> HarnessResult<Vec<String>> {
    let prediction = model.classify(&example.image)?;
    let safe_id = sanitize_id(&example.id);
    let image_dir = cfg.out_dir.join("artifacts").join(&safe_id);
    fs::create_dir_all(&image_dir)?;
    let mut paths = Vec::new();
    for (index, spec) in cfg.explainers.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &format!("explain/{}/{}", spec.name(), example.id));
        let (saliency, mask) = explainer_mask(
            spec,
            &example.image,
            model,
            seed,
            cfg,
            example.ground_truth_region.as_ref(),
            None,
            baselines[index].as_ref(),
        )?;
        let artifact = ArtifactFile {
            id: &example.id,
            explainer: spec.name(),
            scale: None,
            saliency: saliency.as_ref(),
            mask: &mask,
            y: prediction.label(),
            z: prediction.confidence(),
            y_prime: None,
            z_prime: None,
        };
        let rel = format!("artifacts/{}/{}.json", safe_id, spec.name());
        fs::write(cfg.out_dir.join(&rel), serde_json::to_string(&artifact)?)?;
        paths.push(rel);
    }
    Ok(paths)
}
