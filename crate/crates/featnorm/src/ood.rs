//! Scoring rules over model outputs and threshold-free separability metrics.
//!
//! Every rule is oriented so that a higher score means "more in-distribution":
//! ID is the positive class throughout. AUROC is computed by average ranks and
//! equals O(n^2) pair counting exactly (both reduce to the same integer
//! ratio). The FPR tie rule: OoD scores equal to the threshold count as false
//! positives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ForwardTrace, ModelConfig, ModelParams};

/// How to turn a forward trace into one score per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ScoringRule {
    /// Pre-normalization feature norm (the detached recorded norm).
    FeatureNorm,
    /// Per-row maximum of the softmax.
    MaxSoftmax,
    /// Per-row maximum logit.
    MaxLogit,
    /// Per-row L2 norm of the logits.
    LogitNorm,
    /// Recompute logits from `z / scale` (bypassing normalization), then take
    /// the max softmax. Only defined for models trained with normalization.
    ScaledSoftmax { scale: f64 },
}

impl ScoringRule {
    pub fn name(&self) -> &'static str {
        match self {
            ScoringRule::FeatureNorm => "feature_norm",
            ScoringRule::MaxSoftmax => "max_softmax",
            ScoringRule::MaxLogit => "max_logit",
            ScoringRule::LogitNorm => "logit_norm",
            ScoringRule::ScaledSoftmax { .. } => "scaled_softmax",
        }
    }
}

fn row_max(m: &Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Scores each trace row under `rule`. `params` and `config` are needed for
/// `ScaledSoftmax`, which re-runs the decision layer on downscaled features.
pub fn score(
    trace: &ForwardTrace,
    rule: &ScoringRule,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>> {
    match rule {
        ScoringRule::FeatureNorm => Ok(trace.recorded_norms.clone()),
        ScoringRule::MaxSoftmax => Ok(row_max(&trace.softmax)),
        ScoringRule::MaxLogit => Ok(row_max(&trace.logits)),
        ScoringRule::LogitNorm => Ok(trace.logits.row_l2_norms()),
        ScoringRule::ScaledSoftmax { scale } => {
            if !config.normalize {
                return Err(Error::ScaledSoftmaxWithoutNormalize);
            }
            let scale_ok = *scale > 0.0; // NaN fails
            if !scale_ok {
                return Err(Error::InvalidConfig(format!(
                    "scaled_softmax scale must be > 0, got {scale}"
                )));
            }
            let scaled = trace.z.scale(1.0 / scale);
            let mut logits = scaled.matmul(&params.decision.w)?;
            if config.use_bias {
                for r in 0..logits.rows() {
                    for (v, b) in logits.row_mut(r).iter_mut().zip(&params.decision.b) {
                        *v += b;
                    }
                }
            }
            // Max softmax without materializing the full softmax matrix.
            Ok((0..logits.rows())
                .map(|r| {
                    let row = logits.row(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    1.0 / denom
                })
                .collect())
        }
    }
}

/// ID and OoD score vectors; higher score means more in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(id_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if id_scores.is_empty() || ood_scores.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if id_scores
            .iter()
            .chain(&ood_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("ScoreSet".into()));
        }
        Ok(Self {
            id_scores,
            ood_scores,
        })
    }
}

/// Separability summary for one (dataset, rule) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub fpr95: f64,
    pub n_id: usize,
    pub n_ood: usize,
    pub rule: String,
}

/// AUROC as the Mann-Whitney statistic: the fraction of (ID, OoD) pairs where
/// the ID sample scores higher, ties counted one half. Computed by average
/// ranks in O(n log n); doubled ranks keep the arithmetic exactly integral.
pub fn auroc(s: &ScoreSet) -> f64 {
    let n_id = s.id_scores.len();
    let n_ood = s.ood_scores.len();
    let mut all: Vec<(f64, bool)> = s
        .id_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.ood_scores.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Sum of doubled average ranks of the ID samples. For a tie group in
    // positions i..j (0-based, exclusive j), each member's 1-based rank
    // averages to (i + j + 1) / 2, so its doubled rank is i + j + 1.
    let mut doubled_rank_sum: u64 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i + 1;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let doubled = (i + j + 1) as u64;
        for item in &all[i..j] {
            if item.1 {
                doubled_rank_sum += doubled;
            }
        }
        i = j;
    }
    // 2U = 2R - n_id (n_id + 1); AUROC = 2U / (2 n_id n_ood).
    let doubled_u = doubled_rank_sum - (n_id as u64) * (n_id as u64 + 1);
    doubled_u as f64 / (2.0 * n_id as f64 * n_ood as f64)
}

/// Brute-force pair counting; exported for oracle checks.
pub fn auroc_pair_count(s: &ScoreSet) -> f64 {
    let mut doubled_wins: u64 = 0;
    for &id in &s.id_scores {
        for &ood in &s.ood_scores {
            if id > ood {
                doubled_wins += 2;
            } else if id == ood {
                doubled_wins += 1;
            }
        }
    }
    doubled_wins as f64 / (2.0 * s.id_scores.len() as f64 * s.ood_scores.len() as f64)
}

/// False-positive rate at the threshold achieving at least `tpr_target`
/// true-positive rate on ID. The threshold is the largest score value t with
/// `frac(ID >= t) >= tpr_target`; OoD scores equal to t count as false
/// positives.
pub fn fpr_at_tpr(s: &ScoreSet, tpr_target: f64) -> f64 {
    assert!(
        tpr_target > 0.0 && tpr_target <= 1.0,
        "tpr_target must be in (0, 1]"
    );
    let n_id = s.id_scores.len();
    let mut sorted_desc = s.id_scores.clone();
    sorted_desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
    // Smallest m with m / n_id >= target; the m-th largest ID score is the
    // highest admissible threshold.
    let mut threshold = sorted_desc[n_id - 1];
    for (m, &v) in sorted_desc.iter().enumerate() {
        if (m + 1) as f64 / n_id as f64 >= tpr_target {
            threshold = v;
            break;
        }
    }
    let fp = s.ood_scores.iter().filter(|&&v| v >= threshold).count();
    fp as f64 / s.ood_scores.len() as f64
}

/// Convenience: FPR at the paper-standard 95% TPR operating point.
pub fn fpr95(s: &ScoreSet) -> f64 {
    fpr_at_tpr(s, 0.95)
}

pub fn eval_report(s: &ScoreSet, rule: &ScoringRule) -> EvalReport {
    EvalReport {
        auroc: auroc(s),
        fpr95: fpr95(s),
        n_id: s.id_scores.len(),
        n_ood: s.ood_scores.len(),
        rule: rule.name().to_string(),
    }
}

/// Result of a grid search over the scaled-softmax scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSearchResult {
    pub best_scale: f64,
    /// `(scale, auroc)` for every grid point, in grid order.
    pub curve: Vec<(f64, f64)>,
}

/// Picks the grid scale maximizing scaled-softmax AUROC on a held-out
/// validation split. Ties resolve to the earliest grid point.
pub fn scale_search(
    params: &ModelParams,
    config: &ModelConfig,
    id_validation: &ForwardTrace,
    ood_validation: &ForwardTrace,
    grid: &[f64],
) -> Result<ScaleSearchResult> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if !config.normalize {
        return Err(Error::ScaledSoftmaxWithoutNormalize);
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &s in grid {
        let rule = ScoringRule::ScaledSoftmax { scale: s };
        let id = score(id_validation, &rule, params, config)?;
        let ood = score(ood_validation, &rule, params, config)?;
        let a = auroc(&ScoreSet::new(id, ood)?);
        curve.push((s, a));
        if a > best.1 {
            best = (s, a);
        }
    }
    Ok(ScaleSearchResult {
        best_scale: best.0,
        curve,
    })
}

/// Default scale grid: `n` log-spaced values spanning
/// `[0.01, 1] x max_recorded_norm`.
pub fn default_scale_grid(max_recorded_norm: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    let hi = max_recorded_norm.max(1e-6);
    let lo = 0.01 * hi;
    if n == 1 {
        return vec![hi];
    }
    let ratio = (hi / lo).ln();
    (0..n)
        .map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp())
        .collect()
}
