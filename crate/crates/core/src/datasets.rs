//! Dataset ingestion and generation: labelled image folders (PPM/PGM
//! natively, PNG via the image crate) and a synthetic planted-feature
//! dataset whose causal region is known exactly, which is what makes
//! desk-scale validation of the impact metrics possible.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::BinaryMask;
use crate::types::{CoreError, Image};

#[derive(Error, Debug)]
pub enum DataError {
    #[error("labels file {path}: {message}")]
    LabelsFile { path: PathBuf, message: String },
    #[error("missing image file {path}")]
    MissingImage { path: PathBuf },
    #[error("cannot decode {path}: {message}")]
    Undecodable { path: PathBuf, message: String },
    #[error("label {label} for {file} out of range for {num_classes} classes")]
    LabelOutOfRange {
        file: String,
        label: usize,
        num_classes: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type DataResult<T> = Result<T, DataError>;

/// One input image with its class label, a stable id, and (for synthetic
/// data) the ground-truth causal region.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledExample {
    pub image: Image,
    pub label: usize,
    pub id: String,
    pub ground_truth_region: Option<BinaryMask>,
}

/// Parameters of the planted-feature dataset: noisy backgrounds around
/// 0.5 with one class-coded constant square stamped at a random location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub image_side: usize,
    pub samples_per_class: usize,
    pub feature_side: usize,
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> DataResult<()> {
        if self.num_classes == 0 || self.samples_per_class == 0 {
            return Err(DataError::InvalidSpec(
                "need at least one class and one sample".into(),
            ));
        }
        if self.feature_side == 0 || self.feature_side >= self.image_side {
            return Err(DataError::InvalidSpec(format!(
                "feature side {} must be in [1, image side {})",
                self.feature_side, self.image_side
            )));
        }
        if !(0.0..=0.5).contains(&self.noise_amplitude) {
            return Err(DataError::InvalidSpec(format!(
                "noise amplitude {} outside [0, 0.5]",
                self.noise_amplitude
            )));
        }
        Ok(())
    }
}

/// Stamp intensity for a class: classes alternate between a dark band
/// [0, 0.3] and a bright band [0.7, 1], keeping every stamp at least 0.2
/// away from the 0.5 background mean so that mean-filling the region
/// actually erases the class evidence.
fn class_intensity(class: usize, num_classes: usize) -> f64 {
    let low_count = num_classes.div_ceil(2);
    let high_count = num_classes / 2;
    if class % 2 == 0 {
        let i = class / 2;
        if low_count <= 1 {
            0.0
        } else {
            0.3 * i as f64 / (low_count - 1) as f64
        }
    } else {
        let i = class / 2;
        if high_count <= 1 {
            1.0
        } else {
            1.0 - 0.3 * i as f64 / (high_count - 1) as f64
        }
    }
}

/// Generates the planted-feature dataset: deterministic per seed, ordered
/// by class then sample index.
pub fn generate_planted(spec: &SyntheticSpec) -> DataResult<Vec<LabelledExample>> {
    spec.validate()?;
    let side = spec.image_side;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut examples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for class in 0..spec.num_classes {
        let intensity = class_intensity(class, spec.num_classes);
        for sample in 0..spec.samples_per_class {
            let mut data: Vec<f64> = (0..side * side)
                .map(|_| {
                    if spec.noise_amplitude == 0.0 {
                        0.5
                    } else {
                        rng.random_range(0.5 - spec.noise_amplitude..=0.5 + spec.noise_amplitude)
                    }
                })
                .collect();
            let top = rng.random_range(0..=side - spec.feature_side);
            let left = rng.random_range(0..=side - spec.feature_side);
            for r in top..top + spec.feature_side {
                for c in left..left + spec.feature_side {
                    data[r * side + c] = intensity;
                }
            }
            let region = BinaryMask::from_fn(side, side, |r, c| {
                r >= top
                    && r < top + spec.feature_side
                    && c >= left
                    && c < left + spec.feature_side
            });
            examples.push(LabelledExample {
                image: Image::new_checked(1, side, side, data)?,
                label: class,
                id: format!("synthetic-{class:02}-{sample:04}"),
                ground_truth_region: Some(region),
            });
        }
    }
    Ok(examples)
}

/// Deterministic stratified split: within each class, the last
/// `ceil(fraction * count)` examples (in dataset order) go to the holdout.
pub fn split_holdout(
    examples: &[LabelledExample],
    fraction: f64,
) -> DataResult<(Vec<usize>, Vec<usize>)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(DataError::InvalidSpec(format!(
            "holdout fraction {fraction} outside (0,1)"
        )));
    }
    let num_classes = examples.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, example) in examples.iter().enumerate() {
        per_class[example.label].push(i);
    }
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for indices in per_class {
        let take = ((indices.len() as f64) * fraction).ceil() as usize;
        let cut = indices.len().saturating_sub(take);
        train.extend_from_slice(&indices[..cut]);
        holdout.extend_from_slice(&indices[cut..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok((train, holdout))
}

/// Loads `filename,label` rows (CSV with header) and decodes each image
/// from `root`, preserving the labels-file order; ids are the filenames.
pub fn load_folder(
    root: &Path,
    labels_file: &Path,
    num_classes: usize,
) -> DataResult<Vec<LabelledExample>> {
    let mut reader = csv::Reader::from_path(labels_file).map_err(|e| DataError::LabelsFile {
        path: labels_file.to_path_buf(),
        message: e.to_string(),
    })?;
    let headers = reader.headers().map_err(|e| DataError::LabelsFile {
        path: labels_file.to_path_buf(),
        message: e.to_string(),
    })?;
    if headers.len() < 2 || &headers[0] != "filename" || &headers[1] != "label" {
        return Err(DataError::LabelsFile {
            path: labels_file.to_path_buf(),
            message: format!("expected header `filename,label`, got {headers:?}"),
        });
    }
    let mut examples = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| DataError::LabelsFile {
            path: labels_file.to_path_buf(),
            message: e.to_string(),
        })?;
        let filename = row.get(0).unwrap_or_default().to_string();
        let label: usize = row
            .get(1)
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| DataError::LabelsFile {
                path: labels_file.to_path_buf(),
                message: format!("bad label for {filename}: {e}"),
            })?;
        if label >= num_classes {
            return Err(DataError::LabelOutOfRange {
                file: filename,
                label,
                num_classes,
            });
        }
        let path = root.join(&filename);
        if !path.is_file() {
            return Err(DataError::MissingImage { path });
        }
        let image = decode_image(&path)?;
        examples.push(LabelledExample {
            image,
            label,
            id: filename,
            ground_truth_region: None,
        });
    }
    Ok(examples)
}

fn decode_image(path: &Path) -> DataResult<Image> {
    let extension = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    match extension.as_str() {
        "ppm" | "pgm" | "pnm" => decode_pnm(path),
        "png" => decode_png(path),
        other => Err(DataError::Undecodable {
            path: path.to_path_buf(),
            message: format!("unsupported image format `{other}`"),
        }),
    }
}

fn decode_png(path: &Path) -> DataResult<Image> {
    let undecodable = |message: String| DataError::Undecodable {
        path: path.to_path_buf(),
        message,
    };
    let decoded = image::open(path).map_err(|e| undecodable(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(buffer) => {
            let data = buffer.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            Ok(Image::new_checked(1, h, w, data)?)
        }
        other => {
            let buffer = other.into_rgb8();
            let mut data = vec![0.0f64; 3 * h * w];
            for (c, r, pixel) in buffer.enumerate_pixels() {
                for ch in 0..3 {
                    data[(ch * h + r as usize) * w + c as usize] = pixel.0[ch] as f64 / 255.0;
                }
            }
            Ok(Image::new_checked(3, h, w, data)?)
        }
    }
}

/// Binary PPM (P6) and PGM (P5) with maxval up to 65535.
fn decode_pnm(path: &Path) -> DataResult<Image> {
    let undecodable = |message: &str| DataError::Undecodable {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let bytes = fs::read(path)?;
    let mut pos = 0usize;

    fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
        // skip whitespace and `#` comments
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }

    let magic = next_token(&bytes, &mut pos).ok_or_else(|| undecodable("empty file"))?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        other => return Err(undecodable(&format!("unsupported magic `{other}`"))),
    };
    let mut dims = [0usize; 3];
    for slot in dims.iter_mut() {
        let token = next_token(&bytes, &mut pos).ok_or_else(|| undecodable("truncated header"))?;
        *slot = token
            .parse()
            .map_err(|_| undecodable(&format!("bad header token `{token}`")))?;
    }
    let [width, height, maxval] = dims;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(undecodable("bad dimensions or maxval"));
    }
    pos += 1; // single whitespace byte after maxval
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let needed = width * height * channels * bytes_per_sample;
    if bytes.len() < pos + needed {
        return Err(undecodable("truncated pixel data"));
    }
    let raster = &bytes[pos..pos + needed];
    // interleaved samples -> planar (channel, row, column)
    let mut data = vec![0.0f64; channels * height * width];
    for r in 0..height {
        for c in 0..width {
            for ch in 0..channels {
                let sample_index = (r * width + c) * channels + ch;
                let value = if bytes_per_sample == 1 {
                    raster[sample_index] as u32
                } else {
                    // two-byte samples are big-endian
                    u16::from_be_bytes([
                        raster[2 * sample_index],
                        raster[2 * sample_index + 1],
                    ]) as u32
                };
                data[(ch * height + r) * width + c] = value as f64 / maxval as f64;
            }
        }
    }
    Ok(Image::new_checked(channels, height, width, data)?)
}
