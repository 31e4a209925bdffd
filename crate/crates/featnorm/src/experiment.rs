//! End-to-end experiment plumbing: resolved configuration, deterministic
//! dataset derivation, run directories, CSV/JSON reports, and the manifest
//! that makes a run bit-for-bit replayable.
//!
//! No artifact contains a timestamp. Rerunning the same resolved config (or
//! the manifest that snapshots it) reproduces every file byte-for-byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    assign_norm_groups, cv_trajectory, feature_change, norm_accuracy_bins, norm_distributions,
    norm_vs_softmax_export, BinMode, NormGroupSpec,
};
use crate::checkpoint::{fnv1a64, load_checkpoint, save_checkpoint};
use crate::data::{
    gen_blobs, load_dataset_csv, load_image_binary, make_ood, split, Dataset, OodVariant,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::model::{forward, ForwardTrace, ModelConfig, ModelParams};
use crate::ood::{
    default_scale_grid, eval_report, scale_search, score, ScoreSet, ScoringRule,
};
use crate::rng::RngState;
use crate::train::{train, Checkpoint, TrainConfig, TrainLog};

pub const TRAINLOG_FILE: &str = "trainlog.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SCALE_CURVE_FILE: &str = "scale_curve.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const COMPARE_FILE: &str = "compare.json";

/// Scoring rules as configured (the scaled-softmax scale is tuned at eval
/// time, not fixed in the config).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    FeatureNorm,
    MaxSoftmax,
    MaxLogit,
    LogitNorm,
    ScaledSoftmax,
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::FeatureNorm => "feature_norm",
            RuleKind::MaxSoftmax => "max_softmax",
            RuleKind::MaxLogit => "max_logit",
            RuleKind::LogitNorm => "logit_norm",
            RuleKind::ScaledSoftmax => "scaled_softmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticSpec>,
    /// Raw image binary (`.bin`) or CSV (`f0..f{d-1},label`) path.
    pub path: Option<PathBuf>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Seed for splitting/OoD generation when loading from a file; synthetic
    /// data uses its own spec seed.
    pub seed: Option<u64>,
}

fn default_train_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default = "default_true")]
    pub cv_trajectory: bool,
    #[serde(default = "default_true")]
    pub feature_change: bool,
    /// Ascending norm-group edges; the last group is unbounded.
    #[serde(default = "default_group_edges")]
    pub group_edges: Vec<f64>,
    /// Build feature-change groups from the test split instead of training.
    #[serde(default)]
    pub feature_change_on_test: bool,
    #[serde(default = "default_true")]
    pub bins: bool,
    #[serde(default = "default_bin_count")]
    pub bin_count: usize,
    #[serde(default = "default_bin_mode")]
    pub bin_mode: BinMode,
    #[serde(default = "default_true")]
    pub norm_distributions: bool,
    #[serde(default = "default_true")]
    pub norm_vs_softmax: bool,
}

fn default_true() -> bool {
    true
}

fn default_group_edges() -> Vec<f64> {
    vec![0.0, 10.0, 20.0, 30.0]
}

fn default_bin_count() -> usize {
    125
}

fn default_bin_mode() -> BinMode {
    BinMode::EqualCount
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cv_trajectory: true,
            feature_change: true,
            group_edges: default_group_edges(),
            feature_change_on_test: false,
            bins: true,
            bin_count: default_bin_count(),
            bin_mode: default_bin_mode(),
            norm_distributions: true,
            norm_vs_softmax: true,
        }
    }
}

/// Fully resolved experiment description; the manifest snapshots this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub ood: Vec<OodVariant>,
    #[serde(default)]
    pub rules: Vec<RuleKind>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    /// Default synthetic experiment: 8 ID blob classes in 20 dimensions with
    /// 4 held-out OoD classes, the full rule set, and every analysis enabled.
    ///
    /// The geometry and optimizer settings are sized so that training keeps
    /// real pressure on the loss for the whole run: that is what produces the
    /// norm-growth and norm-variability dynamics this crate measures. Hotter
    /// learning rates or heavy momentum make feature norms spike early and
    /// drift back down instead of growing steadily.
    pub fn default_synthetic(normalize: bool, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            model: ModelConfig {
                input_dim: 20,
                hidden_dims: vec![64],
                feature_dim: 10,
                num_classes: 8,
                leaky_slope: 0.01,
                normalize,
                epsilon: 1e-12,
                use_bias: true,
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            data: DataConfig {
                synthetic: Some(SyntheticSpec {
                    num_classes: 8,
                    input_dim: 20,
                    mean_radius: 5.0,
                    noise_sigma: 1.5,
                    samples_per_class: 2000,
                    seed: seed.wrapping_add(1000),
                }),
                path: None,
                train_fraction: 0.8,
                seed: None,
            },
            ood: vec![
                OodVariant::HeldOutClasses { num_classes: 4 },
                OodVariant::GaussianNoise,
                OodVariant::PermutedId,
            ],
            rules: vec![
                RuleKind::FeatureNorm,
                RuleKind::MaxSoftmax,
                RuleKind::MaxLogit,
                RuleKind::LogitNorm,
            ],
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match (&self.data.synthetic, &self.data.path) {
            (Some(spec), None) => {
                spec.validate()?;
                if spec.input_dim != self.model.input_dim {
                    return Err(Error::InvalidConfig(format!(
                        "data input_dim {} != model input_dim {}",
                        spec.input_dim, self.model.input_dim
                    )));
                }
                if spec.num_classes != self.model.num_classes {
                    return Err(Error::InvalidConfig(format!(
                        "data num_classes {} != model num_classes {}",
                        spec.num_classes, self.model.num_classes
                    )));
                }
            }
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "data must set exactly one of `synthetic` or `path`".into(),
                ))
            }
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "train_fraction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Loads a config from TOML, or from a run manifest (`.json`) to replay it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        Ok(manifest.config)
    } else {
        toml::from_str(&text).map_err(|e| Error::ConfigParse(e.to_string()))
    }
}

/// The resolved ID train/test splits plus one dataset per OoD variant.
pub struct EvalData {
    pub train: Dataset,
    pub test: Dataset,
    pub oods: Vec<Dataset>,
}

/// Deterministically derives all datasets from the config. The returned
/// generator continues the derivation stream (used for validation draws).
pub fn build_data(cfg: &ExperimentConfig) -> Result<(EvalData, RngState)> {
    cfg.validate()?;
    let (full, mut rng, spec) = if let Some(spec) = &cfg.data.synthetic {
        let mut rng = RngState::new(spec.seed);
        let ds = gen_blobs(spec, &mut rng)?;
        (ds, rng, Some(spec.clone()))
    } else {
        let path = cfg.data.path.as_ref().expect("validated");
        let ds = if path.extension().is_some_and(|e| e == "csv") {
            load_dataset_csv(path)?
        } else {
            load_image_binary(path)?
        };
        (ds, RngState::new(cfg.data.seed.unwrap_or(0)), None)
    };
    let (train_ds, test_ds) = split(&full, cfg.data.train_fraction, &mut rng)?;
    if test_ds.is_empty() && cfg.data.train_fraction < 1.0 {
        return Err(Error::EmptyDataset);
    }

    let mut oods = Vec::with_capacity(cfg.ood.len());
    for variant in &cfg.ood {
        let ds = match variant {
            OodVariant::HeldOutClasses { .. } => {
                let spec = spec.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(
                        "held_out_classes requires synthetic data".into(),
                    )
                })?;
                make_ood(&train_ds, spec, variant, &mut rng)?
            }
            OodVariant::GaussianNoise => {
                // Statistics from the training split only.
                let dummy = SyntheticSpec {
                    num_classes: 1,
                    input_dim: train_ds.x.cols(),
                    mean_radius: 1.0,
                    noise_sigma: 0.0,
                    samples_per_class: 1,
                    seed: 0,
                };
                make_ood(&train_ds, spec.as_ref().unwrap_or(&dummy), variant, &mut rng)?
            }
            OodVariant::PermutedId => {
                let dummy = SyntheticSpec {
                    num_classes: 1,
                    input_dim: test_ds.x.cols(),
                    mean_radius: 1.0,
                    noise_sigma: 0.0,
                    samples_per_class: 1,
                    seed: 0,
                };
                make_ood(&test_ds, spec.as_ref().unwrap_or(&dummy), variant, &mut rng)?
            }
        };
        oods.push(ds);
    }
    Ok((
        EvalData {
            train: train_ds,
            test: test_ds,
            oods,
        },
        rng,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub checksum: String,
}

/// Snapshot sufficient to re-run the experiment bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<ArtifactEntry>,
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for entry in entries {
        if entry.is_dir() {
            collect_files(&entry, out)?;
        } else {
            out.push(entry);
        }
    }
    Ok(())
}

/// Rewrites `manifest.json`, indexing every artifact currently in the run
/// directory (sorted by path, FNV-1a 64 checksums).
pub fn write_manifest(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    let mut artifacts = Vec::new();
    for file in files {
        let rel = file
            .strip_prefix(out_dir)
            .unwrap_or(&file)
            .to_string_lossy()
            .replace('\\', "/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let bytes = fs::read(&file).map_err(|e| Error::io(file.display().to_string(), e))?;
        artifacts.push(ArtifactEntry {
            path: rel,
            checksum: format!("{:016x}", fnv1a64(&bytes)),
        });
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::ConfigParse(e.to_string()))?;
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub struct TrainRun {
    pub final_params: ModelParams,
    pub checkpoints: Vec<Checkpoint>,
    pub log: TrainLog,
    pub checkpoint_files: Vec<PathBuf>,
}

/// Trains, writes checkpoint files (epoch 0, the cadence epochs, and a
/// `checkpoint_final.ckpt` alias), `trainlog.csv`, and the manifest.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainRun> {
    cfg.validate()?;
    let (data, _) = build_data(cfg)?;
    let output = train(&cfg.model, &cfg.train, &data.train)?;

    let ckpt_dir = cfg.out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(ckpt_dir.display().to_string(), e))?;
    let mut files = Vec::new();
    for ckpt in &output.checkpoints {
        // The final epoch is persisted via the alias below; it also gets an
        // epoch-numbered file when it falls on the cadence.
        let on_cadence = ckpt.epoch == 0 || ckpt.epoch % cfg.train.checkpoint_every == 0;
        if on_cadence {
            let path = ckpt_dir.join(format!("checkpoint_{:05}.ckpt", ckpt.epoch));
            save_checkpoint(ckpt, &path)?;
            files.push(path);
        }
    }
    let final_ckpt = output.checkpoints.last().expect("train always checkpoints");
    let final_path = ckpt_dir.join("checkpoint_final.ckpt");
    save_checkpoint(final_ckpt, &final_path)?;
    files.push(final_path);

    let mut csv = String::from("epoch,lr,loss,acc,norm_mean,norm_std,norm_cv\n");
    for r in &output.log.records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.lr, r.loss, r.acc, r.norm_mean, r.norm_std, r.norm_cv
        ));
    }
    write_text(&cfg.out_dir.join(TRAINLOG_FILE), &csv)?;
    write_manifest(cfg, &cfg.out_dir)?;

    Ok(TrainRun {
        final_params: output.params,
        checkpoints: output.checkpoints,
        log: output.log,
        checkpoint_files: files,
    })
}

fn resolve_checkpoint(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> PathBuf {
    checkpoint_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_DIR))
        .join("checkpoint_final.ckpt")
}

/// Tunes the scaled-softmax scale for one OoD variant on a validation split
/// carved from the training data plus a fresh OoD draw.
fn tune_scale(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cfg: &ExperimentConfig,
    data: &EvalData,
    variant: &OodVariant,
    rng: &mut RngState,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let (_, val_id) = split(&data.train, 0.8, rng)?;
    let spec = cfg.data.synthetic.clone().unwrap_or(SyntheticSpec {
        num_classes: 1,
        input_dim: data.train.x.cols(),
        mean_radius: 1.0,
        noise_sigma: 0.0,
        samples_per_class: 1,
        seed: 0,
    });
    let val_ood = match variant {
        OodVariant::PermutedId => make_ood(&val_id, &spec, variant, rng)?,
        _ => make_ood(&data.train, &spec, variant, rng)?,
    };
    let id_trace = forward(params, model_cfg, &val_id.x)?;
    let ood_trace = forward(params, model_cfg, &val_ood.x)?;
    let max_norm = id_trace
        .recorded_norms
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    let grid = default_scale_grid(max_norm, 20);
    let result = scale_search(params, model_cfg, &id_trace, &ood_trace, &grid)?;
    Ok((result.best_scale, result.curve))
}

/// Evaluates every configured (OoD variant x scoring rule) pair and writes
/// `eval.csv` (plus `scale_curve.csv` when scaled softmax is configured).
pub fn run_eval(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<Vec<String>> {
    cfg.validate()?;
    if cfg.ood.is_empty() || cfg.rules.is_empty() {
        return Err(Error::InvalidConfig(
            "eval needs at least one OoD variant and one scoring rule".into(),
        ));
    }
    let ckpt_path = resolve_checkpoint(cfg, checkpoint_dir);
    let ckpt = load_checkpoint(&ckpt_path)?;
    ckpt.params.validate(&cfg.model)?;
    let (data, mut rng) = build_data(cfg)?;

    let id_trace = forward(&ckpt.params, &cfg.model, &data.test.x)?;
    let mut rows = Vec::new();
    let mut curve_rows = Vec::new();
    for ood in &data.oods {
        let ood_trace = forward(&ckpt.params, &cfg.model, &ood.x)?;
        for rule_kind in &cfg.rules {
            let rule = match rule_kind {
                RuleKind::FeatureNorm => ScoringRule::FeatureNorm,
                RuleKind::MaxSoftmax => ScoringRule::MaxSoftmax,
                RuleKind::MaxLogit => ScoringRule::MaxLogit,
                RuleKind::LogitNorm => ScoringRule::LogitNorm,
                RuleKind::ScaledSoftmax => {
                    let variant = cfg
                        .ood
                        .iter()
                        .find(|v| v.name() == ood.name)
                        .expect("ood datasets mirror config variants");
                    let (best, curve) =
                        tune_scale(&ckpt.params, &cfg.model, cfg, &data, variant, &mut rng)?;
                    for (s, a) in curve {
                        curve_rows.push(format!("{},{},{}", ood.name, s, a));
                    }
                    ScoringRule::ScaledSoftmax { scale: best }
                }
            };
            let id_scores = score(&id_trace, &rule, &ckpt.params, &cfg.model)?;
            let ood_scores = score(&ood_trace, &rule, &ckpt.params, &cfg.model)?;
            let report = eval_report(&ScoreSet::new(id_scores, ood_scores)?, &rule);
            rows.push(format!(
                "{},{},{},{},{},{}",
                ood.name, report.rule, report.auroc, report.fpr95, report.n_id, report.n_ood
            ));
        }
    }

    let mut csv = String::from("dataset,rule,auroc,fpr95,n_id,n_ood\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    write_text(&cfg.out_dir.join(EVAL_FILE), &csv)?;
    if !curve_rows.is_empty() {
        let mut curve_csv = String::from("dataset,scale,auroc\n");
        for row in &curve_rows {
            curve_csv.push_str(row);
            curve_csv.push('\n');
        }
        write_text(&cfg.out_dir.join(SCALE_CURVE_FILE), &curve_csv)?;
    }
    write_manifest(cfg, &cfg.out_dir)?;
    Ok(rows)
}

/// Loads every epoch-numbered checkpoint in the directory, sorted and
/// deduplicated by epoch.
pub fn load_checkpoint_series(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut ckpts: BTreeMap<usize, Checkpoint> = BTreeMap::new();
    for file in files {
        if file.extension().is_some_and(|e| e == "ckpt") {
            let ckpt = load_checkpoint(&file)?;
            ckpts.insert(ckpt.epoch, ckpt);
        }
    }
    if ckpts.is_empty() {
        return Err(Error::Malformed {
            path: dir.display().to_string(),
            reason: "no .ckpt files found".into(),
        });
    }
    Ok(ckpts.into_values().collect())
}

fn max_softmax_scores(
    params: &ModelParams,
    cfg: &ExperimentConfig,
    data: &EvalData,
    trace: &ForwardTrace,
    rng: &mut RngState,
    preferred_variant: &OodVariant,
) -> Result<Vec<f64>> {
    if cfg.model.normalize {
        let (best, _) = tune_scale(params, &cfg.model, cfg, data, preferred_variant, rng)?;
        score(
            trace,
            &ScoringRule::ScaledSoftmax { scale: best },
            params,
            &cfg.model,
        )
    } else {
        score(trace, &ScoringRule::MaxSoftmax, params, &cfg.model)
    }
}

/// Runs every enabled analysis over the stored checkpoints and writes one CSV
/// per analysis.
pub fn run_analyze(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let dir = checkpoint_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_DIR));
    let checkpoints = load_checkpoint_series(&dir)?;
    let (data, mut rng) = build_data(cfg)?;
    let final_ckpt = checkpoints.last().expect("series is nonempty");
    let a = &cfg.analysis;

    if a.cv_trajectory {
        let traj = cv_trajectory(&checkpoints, &cfg.model, &data.train)?;
        let mut csv = String::from("epoch,mean,std,cv\n");
        for (epoch, mean, std, cv) in traj {
            csv.push_str(&format!("{epoch},{mean},{std},{cv}\n"));
        }
        write_text(&cfg.out_dir.join("cv_trajectory.csv"), &csv)?;
    }

    if a.feature_change {
        let set = if a.feature_change_on_test {
            &data.test
        } else {
            &data.train
        };
        let spec = NormGroupSpec::new(a.group_edges.clone())?;
        let final_trace = forward(&final_ckpt.params, &cfg.model, &set.x)?;
        let groups = assign_norm_groups(&final_trace.recorded_norms, &spec);
        let report = feature_change(&checkpoints, &cfg.model, &set.x, &groups, &spec)?;
        let mut csv = String::from("group,epoch,increment\n");
        for (pair_idx, epoch) in report.pair_epochs.iter().enumerate() {
            for (g, label) in report.group_labels.iter().enumerate() {
                csv.push_str(&format!(
                    "{label},{epoch},{}\n",
                    report.increments[pair_idx][g]
                ));
            }
        }
        for (g, label) in report.group_labels.iter().enumerate() {
            csv.push_str(&format!("{label},total,{}\n", report.totals[g]));
        }
        write_text(&cfg.out_dir.join("feature_change.csv"), &csv)?;
    }

    if a.bins {
        let trace = forward(&final_ckpt.params, &cfg.model, &data.test.x)?;
        let report = norm_accuracy_bins(&trace, &data.test.y, a.bin_count, a.bin_mode)?;
        let mut csv = String::from("bin,norm_lo,norm_hi,count,accuracy\n");
        for (i, bin) in report.bins.iter().enumerate() {
            csv.push_str(&format!(
                "{i},{},{},{},{}\n",
                bin.norm_lo, bin.norm_hi, bin.count, bin.accuracy
            ));
        }
        write_text(&cfg.out_dir.join("bins.csv"), &csv)?;
    }

    if a.norm_distributions {
        let mut sets: Vec<&Dataset> = vec![&data.test];
        sets.extend(data.oods.iter());
        let report = norm_distributions(&final_ckpt.params, &cfg.model, &sets)?;
        let mut csv = String::from("dataset,sample_index,norm\n");
        for dist in &report.distributions {
            for (i, norm) in dist.norms.iter().enumerate() {
                csv.push_str(&format!("{},{i},{norm}\n", dist.dataset));
            }
        }
        write_text(&cfg.out_dir.join("norm_dist.csv"), &csv)?;
    }

    if a.norm_vs_softmax {
        if data.oods.is_empty() {
            return Err(Error::InvalidConfig(
                "norm_vs_softmax needs at least one OoD variant".into(),
            ));
        }
        // Prefer the held-out-class variant when configured.
        let idx = cfg
            .ood
            .iter()
            .position(|v| matches!(v, OodVariant::HeldOutClasses { .. }))
            .unwrap_or(0);
        let variant = &cfg.ood[idx];
        let ood = &data.oods[idx];
        let id_trace = forward(&final_ckpt.params, &cfg.model, &data.test.x)?;
        let ood_trace = forward(&final_ckpt.params, &cfg.model, &ood.x)?;
        let id_sm =
            max_softmax_scores(&final_ckpt.params, cfg, &data, &id_trace, &mut rng, variant)?;
        let ood_sm =
            max_softmax_scores(&final_ckpt.params, cfg, &data, &ood_trace, &mut rng, variant)?;
        let mut norms = id_trace.recorded_norms.clone();
        norms.extend_from_slice(&ood_trace.recorded_norms);
        let mut softmax = id_sm;
        softmax.extend_from_slice(&ood_sm);
        let mut is_id = vec![true; id_trace.batch_size()];
        is_id.extend(vec![false; ood_trace.batch_size()]);
        let report = norm_vs_softmax_export(&norms, &softmax, &is_id)?;
        let mut csv = String::from("norm,max_softmax,is_id\n");
        for row in &report.rows {
            csv.push_str(&format!("{},{},{}\n", row.norm, row.max_softmax, row.is_id));
        }
        write_text(&cfg.out_dir.join("norm_vs_softmax.csv"), &csv)?;
    }

    write_manifest(cfg, &cfg.out_dir)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub dataset: String,
    pub rule: String,
    pub auroc_a: Option<f64>,
    pub auroc_b: Option<f64>,
    pub auroc_delta: Option<f64>,
    pub fpr95_a: Option<f64>,
    pub fpr95_b: Option<f64>,
    pub fpr95_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub run_a: String,
    pub run_b: String,
    /// Final-epoch training accuracy from each run's trainlog.
    pub accuracy_a: Option<f64>,
    pub accuracy_b: Option<f64>,
    pub accuracy_delta: Option<f64>,
    pub rows: Vec<CompareRow>,
}

fn read_eval_csv(dir: &Path) -> Result<BTreeMap<(String, String), (f64, f64)>> {
    let path = dir.join(EVAL_FILE);
    let mut reader = csv::Reader::from_path(&path)?;
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Malformed {
                    path: path.display().to_string(),
                    reason: format!("bad numeric field {i}"),
                })
        };
        let dataset = record.get(0).unwrap_or_default().to_string();
        let rule = record.get(1).unwrap_or_default().to_string();
        out.insert((dataset, rule), (parse(2)?, parse(3)?));
    }
    Ok(out)
}

fn final_accuracy(dir: &Path) -> Option<f64> {
    let path = dir.join(TRAINLOG_FILE);
    let mut reader = csv::Reader::from_path(&path).ok()?;
    let mut last = None;
    for record in reader.records().flatten() {
        if let Some(acc) = record.get(3).and_then(|s| s.parse::<f64>().ok()) {
            last = Some(acc);
        }
    }
    last
}

/// Joins two runs' `eval.csv` into paired deltas (`a - b`) per (dataset,
/// rule), plus the final-accuracy delta. Missing pairs are explicit nulls.
pub fn run_compare(run_a: &Path, run_b: &Path, out_path: &Path) -> Result<CompareReport> {
    let a = read_eval_csv(run_a)?;
    let b = read_eval_csv(run_b)?;
    let mut keys: Vec<(String, String)> = a.keys().chain(b.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    let rows = keys
        .into_iter()
        .map(|key| {
            let va = a.get(&key);
            let vb = b.get(&key);
            CompareRow {
                dataset: key.0,
                rule: key.1,
                auroc_a: va.map(|v| v.0),
                auroc_b: vb.map(|v| v.0),
                auroc_delta: va.zip(vb).map(|(x, y)| x.0 - y.0),
                fpr95_a: va.map(|v| v.1),
                fpr95_b: vb.map(|v| v.1),
                fpr95_delta: va.zip(vb).map(|(x, y)| x.1 - y.1),
            }
        })
        .collect();
    let accuracy_a = final_accuracy(run_a);
    let accuracy_b = final_accuracy(run_b);
    let report = CompareReport {
        run_a: run_a.display().to_string(),
        run_b: run_b.display().to_string(),
        accuracy_a,
        accuracy_b,
        accuracy_delta: accuracy_a.zip(accuracy_b).map(|(x, y)| x - y),
        rows,
    };
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| Error::ConfigParse(e.to_string()))?;
    write_text(out_path, &(text + "\n"))?;
    Ok(report)
}
