//! The complete file-level pipeline, as driven by the CLI: train two runs
//! (L2 and plain), evaluate, analyze, and compare them, leaving a pair of
//! fully populated run directories.
//!
//! ```bash
//! cargo run --release --example full_experiment
//! ```

use std::fs;

use featnorm::experiment::{
    run_analyze, run_compare, run_eval, run_train, ExperimentConfig, RuleKind,
};

fn main() {
    let base = std::env::temp_dir().join("featnorm_full_experiment");
    let _ = fs::remove_dir_all(&base);

    let mut dirs = Vec::new();
    for normalize in [true, false] {
        let name = if normalize { "l2" } else { "plain" };
        let mut cfg =
            ExperimentConfig::default_synthetic(normalize, 1, base.join(name));
        // Trimmed for a quick demonstration run.
        cfg.train.epochs = 40;
        cfg.train.base_lr = 0.05;
        cfg.train.lr_step_epochs = vec![28, 34];
        cfg.data.synthetic.as_mut().unwrap().samples_per_class = 500;
        cfg.analysis.bin_count = 25;
        if normalize {
            cfg.rules.push(RuleKind::ScaledSoftmax);
        }

        println!("[{name}] training into {} ...", cfg.out_dir.display());
        let run = run_train(&cfg).unwrap();
        println!(
            "[{name}] {} checkpoints, final train acc {:.4}",
            run.checkpoint_files.len(),
            run.log.records.last().unwrap().acc
        );
        let rows = run_eval(&cfg, None).unwrap();
        for row in &rows {
            println!("[{name}] eval: {row}");
        }
        run_analyze(&cfg, None).unwrap();
        dirs.push(cfg.out_dir.clone());
    }

    let compare_path = base.join("compare.json");
    let report = run_compare(&dirs[0], &dirs[1], &compare_path).unwrap();
    println!("\nL2 minus plain, per (variant, rule):");
    for row in &report.rows {
        if let Some(delta) = row.auroc_delta {
            println!("  {:>18} {:>14} {:+.4}", row.dataset, row.rule, delta);
        } else {
            println!("  {:>18} {:>14} (missing on one side)", row.dataset, row.rule);
        }
    }
    println!("\nartifacts under {}", base.display());
}
