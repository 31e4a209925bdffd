//! Training-dynamics analyses over stored checkpoints: per-group feature
//! change, norm-CV trajectories, norm-vs-accuracy bins, cross-dataset norm
//! distributions, and the norm-vs-softmax export.

use serde::{Deserialize, Serialize};

use crate::collapse::norm_dispersion_of;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{forward, ForwardTrace, ModelConfig, ModelParams};
use crate::train::Checkpoint;

/// Half-open norm bins `[e0,e1), ..., [e_last, inf)`. Values below `e0` fall
/// into the first group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormGroupSpec {
    pub edges: Vec<f64>,
    pub labels: Vec<String>,
}

impl NormGroupSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 group edges".into()));
        }
        for w in edges.windows(2) {
            // NaN edges also fail this comparison and are rejected.
            let ascending = w[1] > w[0];
            if !ascending {
                return Err(Error::InvalidConfig(
                    "group edges must be strictly ascending".into(),
                ));
            }
        }
        // Comma-free so the labels embed directly in CSV fields.
        let labels = (0..edges.len())
            .map(|i| {
                if i + 1 < edges.len() {
                    format!("[{}..{})", edges[i], edges[i + 1])
                } else {
                    format!("[{}..inf)", edges[i])
                }
            })
            .collect();
        Ok(Self { edges, labels })
    }

    /// Edges at the `groups`-quantiles of `norms`, so every group is
    /// populated. Useful when absolute norm scales are not known in advance.
    pub fn from_quantiles(norms: &[f64], groups: usize) -> Result<Self> {
        if norms.is_empty() || groups < 2 {
            return Err(Error::InvalidConfig(
                "quantile groups need data and >= 2 groups".into(),
            ));
        }
        let mut sorted = norms.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut edges = vec![sorted[0]];
        for g in 1..groups {
            let idx = g * sorted.len() / groups;
            let q = sorted[idx.min(sorted.len() - 1)];
            if q > *edges.last().unwrap() {
                edges.push(q);
            }
        }
        if edges.len() < 2 {
            return Err(Error::Degenerate(
                "norms are too concentrated for quantile groups".into(),
            ));
        }
        Self::new(edges)
    }

    pub fn num_groups(&self) -> usize {
        self.edges.len()
    }

    pub fn group_of(&self, norm: f64) -> usize {
        self.edges.iter().rposition(|&e| e <= norm).unwrap_or(0)
    }
}

/// Assigns each sample to the group containing its norm.
pub fn assign_norm_groups(final_norms: &[f64], spec: &NormGroupSpec) -> Vec<usize> {
    final_norms.iter().map(|&n| spec.group_of(n)).collect()
}

/// Per-group total feature change and its per-epoch increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChangeReport {
    pub group_labels: Vec<String>,
    pub group_sizes: Vec<usize>,
    /// `increments[pair][group]`: mean squared elementwise feature difference
    /// between consecutive checkpoints, averaged over the group's samples and
    /// the feature dimensions.
    pub increments: Vec<Vec<f64>>,
    /// Epoch of the later checkpoint in each consecutive pair.
    pub pair_epochs: Vec<usize>,
    /// Per-group sums of the increments.
    pub totals: Vec<f64>,
}

/// Replays `images` through consecutive checkpoints and accumulates Eq.-style
/// squared feature differences per norm group. Groups are fixed by the
/// caller, typically from the final checkpoint's recorded norms.
pub fn feature_change(
    checkpoints: &[Checkpoint],
    model_cfg: &ModelConfig,
    images: &Matrix,
    groups: &[usize],
    spec: &NormGroupSpec,
) -> Result<FeatureChangeReport> {
    if checkpoints.len() < 2 {
        return Err(Error::InvalidConfig(
            "feature_change needs at least two checkpoints".into(),
        ));
    }
    for w in checkpoints.windows(2) {
        if w[1].epoch != w[0].epoch + 1 {
            return Err(Error::NonConsecutiveCheckpoints {
                prev: w[0].epoch,
                next: w[1].epoch,
            });
        }
    }
    if groups.len() != images.rows() {
        return Err(Error::DimMismatch {
            op: "feature_change",
            detail: format!("{} group labels vs {} images", groups.len(), images.rows()),
        });
    }
    let g = spec.num_groups();
    let mut group_sizes = vec![0usize; g];
    for &grp in groups {
        if grp >= g {
            return Err(Error::InvalidConfig(format!(
                "group index {grp} out of range for {g} groups"
            )));
        }
        group_sizes[grp] += 1;
    }

    let d = model_cfg.feature_dim;
    let mut prev_z = forward(&checkpoints[0].params, model_cfg, images)?.z;
    let mut increments = Vec::with_capacity(checkpoints.len() - 1);
    let mut pair_epochs = Vec::with_capacity(checkpoints.len() - 1);
    for ckpt in &checkpoints[1..] {
        let z = forward(&ckpt.params, model_cfg, images)?.z;
        let mut acc = vec![0.0; g];
        for r in 0..images.rows() {
            let grp = groups[r];
            let a = z.row(r);
            let b = prev_z.row(r);
            let mut ss = 0.0;
            for (x, y) in a.iter().zip(b) {
                let diff = x - y;
                ss += diff * diff;
            }
            acc[grp] += ss;
        }
        for (grp, v) in acc.iter_mut().enumerate() {
            if group_sizes[grp] > 0 {
                *v /= (group_sizes[grp] * d) as f64;
            }
        }
        increments.push(acc);
        pair_epochs.push(ckpt.epoch);
        prev_z = z;
    }

    let totals = (0..g)
        .map(|grp| increments.iter().map(|inc| inc[grp]).sum())
        .collect();
    Ok(FeatureChangeReport {
        group_labels: spec.labels.clone(),
        group_sizes,
        increments,
        pair_epochs,
        totals,
    })
}

/// Recorded-norm dispersion at every checkpoint: `(epoch, mean, std, cv)`.
pub fn cv_trajectory(
    checkpoints: &[Checkpoint],
    model_cfg: &ModelConfig,
    dataset: &Dataset,
) -> Result<Vec<(usize, f64, f64, f64)>> {
    checkpoints
        .iter()
        .map(|ckpt| {
            let trace = forward(&ckpt.params, model_cfg, &dataset.x)?;
            let (mean, std, cv) = norm_dispersion_of(&trace.recorded_norms);
            Ok((ckpt.epoch, mean, std, cv))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Equal-count (quantile) bins; the remainder spreads over leading bins.
    EqualCount,
    /// Equal-width bins over the observed norm range.
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormAccuracyBin {
    pub norm_lo: f64,
    pub norm_hi: f64,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccuracyReport {
    pub bins: Vec<NormAccuracyBin>,
    pub bin_count: usize,
    pub mode: BinMode,
}

/// Sorts samples by recorded norm and reports per-bin top-1 accuracy.
pub fn norm_accuracy_bins(
    trace: &ForwardTrace,
    labels: &[usize],
    bin_count: usize,
    mode: BinMode,
) -> Result<BinAccuracyReport> {
    let n = trace.batch_size();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            op: "norm_accuracy_bins",
            detail: format!("{} trace rows vs {} labels", n, labels.len()),
        });
    }
    if bin_count == 0 || bin_count > n {
        return Err(Error::TooManyBins {
            bin_count,
            samples: n,
        });
    }
    let preds = trace.predictions();
    let correct: Vec<bool> = preds.iter().zip(labels).map(|(p, y)| p == y).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        trace.recorded_norms[a]
            .partial_cmp(&trace.recorded_norms[b])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut bins = Vec::with_capacity(bin_count);
    match mode {
        BinMode::EqualCount => {
            let base = n / bin_count;
            let remainder = n % bin_count;
            let mut start = 0;
            for b in 0..bin_count {
                let size = base + usize::from(b < remainder);
                let slice = &order[start..start + size];
                let hits = slice.iter().filter(|&&i| correct[i]).count();
                bins.push(NormAccuracyBin {
                    norm_lo: trace.recorded_norms[slice[0]],
                    norm_hi: trace.recorded_norms[*slice.last().unwrap()],
                    count: size,
                    accuracy: hits as f64 / size as f64,
                });
                start += size;
            }
        }
        BinMode::EqualWidth => {
            let lo = trace.recorded_norms[order[0]];
            let hi = trace.recorded_norms[order[n - 1]];
            let width = ((hi - lo) / bin_count as f64).max(f64::MIN_POSITIVE);
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); bin_count];
            for &i in &order {
                let mut b = ((trace.recorded_norms[i] - lo) / width) as usize;
                if b >= bin_count {
                    b = bin_count - 1;
                }
                members[b].push(i);
            }
            for (b, idxs) in members.iter().enumerate() {
                let hits = idxs.iter().filter(|&&i| correct[i]).count();
                bins.push(NormAccuracyBin {
                    norm_lo: lo + b as f64 * width,
                    norm_hi: lo + (b + 1) as f64 * width,
                    count: idxs.len(),
                    accuracy: if idxs.is_empty() {
                        0.0
                    } else {
                        hits as f64 / idxs.len() as f64
                    },
                });
            }
        }
    }
    Ok(BinAccuracyReport {
        bins,
        bin_count,
        mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormDistribution {
    pub dataset: String,
    pub norms: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormDistributionReport {
    pub distributions: Vec<NormDistribution>,
}

/// Recorded norms of each named dataset under fixed parameters.
pub fn norm_distributions(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    datasets: &[&Dataset],
) -> Result<NormDistributionReport> {
    let mut distributions = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let trace = forward(params, model_cfg, &ds.x)?;
        let (mean, std, cv) = norm_dispersion_of(&trace.recorded_norms);
        distributions.push(NormDistribution {
            dataset: ds.name.clone(),
            norms: trace.recorded_norms,
            mean,
            std,
            cv,
        });
    }
    Ok(NormDistributionReport { distributions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSoftmaxRow {
    pub norm: f64,
    pub max_softmax: f64,
    pub is_id: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormVsSoftmaxReport {
    pub rows: Vec<NormSoftmaxRow>,
    /// Pearson correlation of (norm, max_softmax) over all rows; `None` when
    /// either variable is constant.
    pub pearson: Option<f64>,
}

/// Pairs per-sample recorded norms with max-softmax scores for export.
pub fn norm_vs_softmax_export(
    norms: &[f64],
    max_softmax: &[f64],
    is_id: &[bool],
) -> Result<NormVsSoftmaxReport> {
    if norms.len() != max_softmax.len() || norms.len() != is_id.len() {
        return Err(Error::DimMismatch {
            op: "norm_vs_softmax_export",
            detail: format!(
                "{} norms, {} softmax scores, {} flags",
                norms.len(),
                max_softmax.len(),
                is_id.len()
            ),
        });
    }
    let rows = norms
        .iter()
        .zip(max_softmax)
        .zip(is_id)
        .map(|((&norm, &sm), &id)| NormSoftmaxRow {
            norm,
            max_softmax: sm,
            is_id: id,
        })
        .collect();
    Ok(NormVsSoftmaxReport {
        rows,
        pearson: pearson(norms, max_softmax),
    })
}

/// Pearson correlation; `None` for fewer than two points or constant input.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// ranking is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
