//! Recorded-norm trajectories: with normalization on (and no weight decay)
//! the mean pre-normalization norm grows through training and its spread
//! widens; without it, the spread contracts toward equinormality.
//!
//! ```bash
//! cargo run --release --example norm_growth
//! ```

use featnorm::analysis::spearman;
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::train::{train, TrainLog};

fn summarize(label: &str, log: &TrainLog) {
    let epochs: Vec<f64> = log.records.iter().map(|r| r.epoch as f64).collect();
    let means: Vec<f64> = log.records.iter().map(|r| r.norm_mean).collect();
    let rho = spearman(&epochs, &means).unwrap_or(0.0);
    println!("\n{label}: spearman(epoch, mean norm) = {rho:.4}");
    println!("{:>6} {:>10} {:>10} {:>10}", "epoch", "mean", "std", "cv");
    for r in log.records.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == 1) {
        println!(
            "{:>6} {:>10.3} {:>10.3} {:>10.4}",
            r.epoch, r.norm_mean, r.norm_std, r.norm_cv
        );
    }
}

fn main() {
    for normalize in [true, false] {
        let cfg = ExperimentConfig::default_synthetic(normalize, 1, "/unused");
        let (data, _) = build_data(&cfg).unwrap();
        let out = train(&cfg.model, &cfg.train, &data.train).unwrap();
        summarize(if normalize { "L2" } else { "plain" }, &out.log);
    }
}
