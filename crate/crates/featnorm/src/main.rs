//! Thin CLI over the library: `train`, `eval`, `analyze`, `compare`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use featnorm::experiment::{
    load_config, run_analyze, run_compare, run_eval, run_train, ExperimentConfig, COMPARE_FILE,
};

#[derive(Parser)]
#[command(name = "featnorm", version, about = "L2 feature-norm OoD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML) or a run manifest (JSON) to replay.
    #[arg(long)]
    config: PathBuf,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the checkpoint directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Override the normalization switch.
    #[arg(long)]
    normalize: Option<bool>,
    /// Override the norm-accuracy bin count.
    #[arg(long)]
    bins: Option<usize>,
    /// Override the norm-group edges (comma separated, ascending).
    #[arg(long, value_delimiter = ',')]
    groups: Option<Vec<f64>>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, featnorm::Error> {
        let mut cfg = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(normalize) = self.normalize {
            cfg.model.normalize = normalize;
        }
        if let Some(bins) = self.bins {
            cfg.analysis.bin_count = bins;
        }
        if let Some(groups) = &self.groups {
            cfg.analysis.group_edges = groups.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing checkpoints, trainlog.csv, and the manifest.
    Train(ConfigArgs),
    /// Evaluate OoD separability for every (variant, rule) pair.
    Eval(ConfigArgs),
    /// Replay checkpoints through the enabled training-dynamics analyses.
    Analyze(ConfigArgs),
    /// Join two runs' eval results into paired deltas.
    Compare {
        /// Run directory treated as side A (conventionally the L2 run).
        run_a: PathBuf,
        /// Run directory treated as side B.
        run_b: PathBuf,
        /// Output path for compare.json (default: <run_a>/compare.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<(), featnorm::Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let run = run_train(&cfg)?;
            let last = run.log.records.last();
            println!(
                "trained {} epochs into {} ({} checkpoint files, final acc {})",
                cfg.train.epochs,
                cfg.out_dir.display(),
                run.checkpoint_files.len(),
                last.map_or_else(|| "n/a".into(), |r| format!("{:.4}", r.acc)),
            );
        }
        Command::Eval(args) => {
            let ckpt_dir = args.checkpoint_dir.clone();
            let cfg = args.resolve()?;
            let rows = run_eval(&cfg, ckpt_dir.as_deref())?;
            println!("dataset,rule,auroc,fpr95,n_id,n_ood");
            for row in rows {
                println!("{row}");
            }
        }
        Command::Analyze(args) => {
            let ckpt_dir = args.checkpoint_dir.clone();
            let cfg = args.resolve()?;
            run_analyze(&cfg, ckpt_dir.as_deref())?;
            println!("analyses written to {}", cfg.out_dir.display());
        }
        Command::Compare { run_a, run_b, out } => {
            let out_path = out.unwrap_or_else(|| run_a.join(COMPARE_FILE));
            let report = run_compare(&run_a, &run_b, &out_path)?;
            println!(
                "compared {} vs {} ({} rows) -> {}",
                report.run_a,
                report.run_b,
                report.rows.len(),
                out_path.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
