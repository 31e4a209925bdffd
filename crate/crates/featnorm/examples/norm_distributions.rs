//! Recorded-norm distributions across datasets: ID test data, held-out
//! classes, moment-matched Gaussian noise, and per-sample permuted ID data.
//! L2-trained models separate these by norm; plain models produce norms that
//! are nearly invariant to the input.
//!
//! ```bash
//! cargo run --release --example norm_distributions
//! ```

use featnorm::analysis::norm_distributions;
use featnorm::data::Dataset;
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::train::train;

fn histogram(norms: &[f64], lo: f64, hi: f64, buckets: usize) -> String {
    let mut counts = vec![0usize; buckets];
    for &n in norms {
        let mut b = ((n - lo) / (hi - lo) * buckets as f64) as usize;
        if b >= buckets {
            b = buckets - 1;
        }
        counts[b] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(1).max(1);
    counts
        .iter()
        .map(|&c| {
            let level = c * 8 / max;
            [" ", ".", ":", "-", "=", "+", "*", "#", "@"][level]
        })
        .collect()
}

fn main() {
    for normalize in [true, false] {
        let cfg = ExperimentConfig::default_synthetic(normalize, 1, "/unused");
        let (data, _) = build_data(&cfg).unwrap();
        let out = train(&cfg.model, &cfg.train, &data.train).unwrap();

        let mut sets: Vec<&Dataset> = vec![&data.test];
        sets.extend(data.oods.iter());
        let report = norm_distributions(&out.params, &cfg.model, &sets).unwrap();

        let hi = report
            .distributions
            .iter()
            .flat_map(|d| d.norms.iter().copied())
            .fold(0.0f64, f64::max);
        println!(
            "\n{} model (norm axis 0..{hi:.1}):",
            if normalize { "L2" } else { "plain" }
        );
        for dist in &report.distributions {
            println!(
                "{:>22} |{}| mean {:.2} cv {:.3}",
                dist.dataset,
                histogram(&dist.norms, 0.0, hi, 48),
                dist.mean,
                dist.cv
            );
        }
    }
}
