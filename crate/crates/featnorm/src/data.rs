//! Synthetic ID/OoD dataset generation, OoD variant construction, and the raw
//! small-image binary loader (3073-byte records: one label byte followed by
//! 3072 pixel bytes).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngState;

/// A labeled feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub name: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.y.iter().copied().max().map_or(0, |m| m + 1)
    }
}

/// Geometry of the synthetic Gaussian-blob benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub input_dim: usize,
    pub mean_radius: f64,
    pub noise_sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("synthetic spec counts must be >= 1".into()));
        }
        let radius_ok = self.mean_radius > 0.0; // false for NaN as well
        if !radius_ok || self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(
                "mean_radius must be > 0 and noise_sigma >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// How to build an out-of-distribution companion set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OodVariant {
    /// Fresh blob classes drawn with the same geometry as the ID spec.
    HeldOutClasses { num_classes: usize },
    /// I.i.d. Gaussian matched to the reference set's per-feature mean/std.
    GaussianNoise,
    /// Each reference sample's feature values independently permuted.
    PermutedId,
}

impl OodVariant {
    pub fn name(&self) -> &'static str {
        match self {
            OodVariant::HeldOutClasses { .. } => "held_out_classes",
            OodVariant::GaussianNoise => "gaussian_noise",
            OodVariant::PermutedId => "permuted_id",
        }
    }
}

/// Draws class means uniformly on the radius sphere and samples isotropic
/// Gaussian blobs around them. Also returns the drawn means.
pub fn gen_blobs_with_means(spec: &SyntheticSpec, rng: &mut RngState) -> Result<(Dataset, Matrix)> {
    spec.validate()?;
    let d = spec.input_dim;
    let means = Matrix::from_fn(spec.num_classes, d, |_, _| 0.0);
    let mut means = means;
    for c in 0..spec.num_classes {
        let dir = rng.unit_vector(d);
        for (j, v) in dir.iter().enumerate() {
            means.set(c, j, v * spec.mean_radius);
        }
    }
    let n = spec.num_classes * spec.samples_per_class;
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut row = 0;
    for c in 0..spec.num_classes {
        for _ in 0..spec.samples_per_class {
            for j in 0..d {
                x.set(row, j, means.get(c, j) + spec.noise_sigma * rng.normal());
            }
            y.push(c);
            row += 1;
        }
    }
    Ok((
        Dataset {
            x,
            y,
            name: "synthetic_blobs".into(),
        },
        means,
    ))
}

pub fn gen_blobs(spec: &SyntheticSpec, rng: &mut RngState) -> Result<Dataset> {
    gen_blobs_with_means(spec, rng).map(|(d, _)| d)
}

/// Builds an OoD set. `reference` supplies per-feature statistics for
/// `GaussianNoise` and the samples for `PermutedId`; `spec` supplies the blob
/// geometry for `HeldOutClasses`.
pub fn make_ood(
    reference: &Dataset,
    spec: &SyntheticSpec,
    variant: &OodVariant,
    rng: &mut RngState,
) -> Result<Dataset> {
    match variant {
        OodVariant::HeldOutClasses { num_classes } => {
            if *num_classes == 0 {
                return Err(Error::InvalidConfig("held_out_classes needs >= 1 class".into()));
            }
            let held_spec = SyntheticSpec {
                num_classes: *num_classes,
                ..spec.clone()
            };
            let (mut ds, _) = gen_blobs_with_means(&held_spec, rng)?;
            ds.name = "held_out_classes".into();
            Ok(ds)
        }
        OodVariant::GaussianNoise => {
            if reference.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let n = reference.len();
            let d = reference.x.cols();
            let mut mean = vec![0.0; d];
            let mut var = vec![0.0; d];
            for r in 0..n {
                for (j, v) in reference.x.row(r).iter().enumerate() {
                    mean[j] += v;
                }
            }
            for m in mean.iter_mut() {
                *m /= n as f64;
            }
            for r in 0..n {
                for (j, v) in reference.x.row(r).iter().enumerate() {
                    let dlt = v - mean[j];
                    var[j] += dlt * dlt;
                }
            }
            let std: Vec<f64> = var.iter().map(|v| (v / n as f64).sqrt()).collect();
            let x = Matrix::from_fn(n, d, |_, j| mean[j] + std[j] * rng.normal());
            Ok(Dataset {
                x,
                y: vec![0; n],
                name: "gaussian_noise".into(),
            })
        }
        OodVariant::PermutedId => {
            if reference.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let d = reference.x.cols();
            let mut x = reference.x.clone();
            for r in 0..x.rows() {
                let mut idx: Vec<usize> = (0..d).collect();
                rng.shuffle(&mut idx);
                let src: Vec<f64> = reference.x.row(r).to_vec();
                for (j, &p) in idx.iter().enumerate() {
                    x.set(r, j, src[p]);
                }
            }
            Ok(Dataset {
                x,
                y: reference.y.clone(),
                name: "permuted_id".into(),
            })
        }
    }
}

/// Seeded stratified split. With `0 < train_fraction < 1`, every class with
/// at least two samples keeps at least one sample on each side.
pub fn split(dataset: &Dataset, train_fraction: f64, rng: &mut RngState) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must be in [0,1], got {train_fraction}"
        )));
    }
    let classes = dataset.num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in dataset.y.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for idxs in by_class.iter_mut() {
        rng.shuffle(idxs);
        let n = idxs.len();
        let mut take = (train_fraction * n as f64).round() as usize;
        if train_fraction > 0.0 && train_fraction < 1.0 && n >= 2 {
            take = take.clamp(1, n - 1);
        } else {
            take = take.min(n);
        }
        train_idx.extend_from_slice(&idxs[..take]);
        test_idx.extend_from_slice(&idxs[take..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |name: &str, idxs: &[usize]| {
        let d = dataset.x.cols();
        let mut x = Matrix::zeros(idxs.len(), d);
        let mut y = Vec::with_capacity(idxs.len());
        for (r, &i) in idxs.iter().enumerate() {
            for (j, v) in dataset.x.row(i).iter().enumerate() {
                x.set(r, j, *v);
            }
            y.push(dataset.y[i]);
        }
        Dataset {
            x,
            y,
            name: format!("{}_{}", dataset.name, name),
        }
    };
    Ok((pick("train", &train_idx), pick("test", &test_idx)))
}

const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;
const CHANNELS: usize = 3;
const CHANNEL_PIXELS: usize = PIXELS / CHANNELS;

/// Per-channel standardization statistics from a raw image binary.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

/// Loads a raw binary of 3073-byte records, scales pixels to [0,1], and
/// standardizes with per-channel statistics computed from this file.
pub fn load_image_binary(path: &Path) -> Result<Dataset> {
    let (mut ds, stats) = load_image_binary_raw(path)?;
    standardize(&mut ds, &stats);
    Ok(ds)
}

/// Loads and standardizes with caller-provided statistics (e.g. computed from
/// a training file and reused for test/OoD files).
pub fn load_image_binary_with_stats(path: &Path, stats: &ChannelStats) -> Result<Dataset> {
    let (mut ds, _) = load_image_binary_raw(path)?;
    standardize(&mut ds, stats);
    Ok(ds)
}

/// Loads pixel values scaled to [0,1] without standardizing, plus the
/// per-channel statistics of this file.
pub fn load_image_binary_raw(path: &Path) -> Result<(Dataset, ChannelStats)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            reason: format!("size {} is not a positive multiple of {}", bytes.len(), RECORD_BYTES),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut x = Matrix::zeros(n, PIXELS);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let rec = &bytes[r * RECORD_BYTES..(r + 1) * RECORD_BYTES];
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                reason: format!("record {} has label byte {}", r, label),
            });
        }
        y.push(label);
        for (j, &px) in rec[1..].iter().enumerate() {
            x.set(r, j, px as f64 / 255.0);
        }
    }
    let mut mean = [0.0; CHANNELS];
    let mut std = [0.0; CHANNELS];
    let per_channel_count = (n * CHANNEL_PIXELS) as f64;
    for r in 0..n {
        for ch in 0..CHANNELS {
            for j in 0..CHANNEL_PIXELS {
                mean[ch] += x.get(r, ch * CHANNEL_PIXELS + j);
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= per_channel_count;
    }
    for r in 0..n {
        for ch in 0..CHANNELS {
            for j in 0..CHANNEL_PIXELS {
                let d = x.get(r, ch * CHANNEL_PIXELS + j) - mean[ch];
                std[ch] += d * d;
            }
        }
    }
    for s in std.iter_mut() {
        *s = (*s / per_channel_count).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    Ok((
        Dataset {
            x,
            y,
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image_binary".into()),
        },
        ChannelStats { mean, std },
    ))
}

fn standardize(ds: &mut Dataset, stats: &ChannelStats) {
    for r in 0..ds.x.rows() {
        for ch in 0..CHANNELS {
            for j in 0..CHANNEL_PIXELS {
                let col = ch * CHANNEL_PIXELS + j;
                let v = (ds.x.get(r, col) - stats.mean[ch]) / stats.std[ch];
                ds.x.set(r, col, v);
            }
        }
    }
}

/// Writes a dataset as CSV with header `f0..f{d-1},label`.
pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let d = dataset.x.cols();
    for j in 0..d {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for r in 0..dataset.len() {
        for v in dataset.x.row(r) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", dataset.y[r]));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Loads a dataset from the `f0..f{d-1},label` CSV schema.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let d = headers.len().saturating_sub(1);
    if d == 0 || headers.get(d) != Some("label") {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            reason: "expected header f0..f{d-1},label".into(),
        });
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(d);
        for j in 0..d {
            let v: f64 = record
                .get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed {
                    path: path.display().to_string(),
                    reason: format!("bad feature value in column {j}"),
                })?;
            row.push(v);
        }
        let label: usize = record
            .get(d)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Malformed {
                path: path.display().to_string(),
                reason: "bad label value".into(),
            })?;
        rows.push(row);
        y.push(label);
    }
    let x = Matrix::from_rows(&rows)?;
    Ok(Dataset {
        x,
        y,
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "csv_dataset".into()),
    })
}
