//! Norm-vs-accuracy bins: sort test samples by recorded feature norm into
//! equal-count bins and report per-bin top-1 accuracy. With normalization the
//! relationship is close to monotone.
//!
//! ```bash
//! cargo run --release --example norm_accuracy_bins
//! ```

use featnorm::analysis::{norm_accuracy_bins, spearman, BinMode};
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::forward;
use featnorm::train::train;

fn main() {
    for normalize in [true, false] {
        let cfg = ExperimentConfig::default_synthetic(normalize, 1, "/unused");
        let (data, _) = build_data(&cfg).unwrap();
        let out = train(&cfg.model, &cfg.train, &data.train).unwrap();
        let trace = forward(&out.params, &cfg.model, &data.test.x).unwrap();
        let report = norm_accuracy_bins(&trace, &data.test.y, 25, BinMode::EqualCount).unwrap();

        let centers: Vec<f64> = report
            .bins
            .iter()
            .map(|b| 0.5 * (b.norm_lo + b.norm_hi))
            .collect();
        let accs: Vec<f64> = report.bins.iter().map(|b| b.accuracy).collect();
        println!(
            "\n{} model: spearman(bin norm, accuracy) = {:.4}",
            if normalize { "L2" } else { "plain" },
            spearman(&centers, &accs).unwrap_or(0.0)
        );
        println!("{:>4} {:>18} {:>6} {:>9}", "bin", "norm range", "count", "accuracy");
        for (i, bin) in report.bins.iter().enumerate().step_by(4) {
            println!(
                "{:>4} [{:>7.2}, {:>7.2}] {:>6} {:>9.4}",
                i, bin.norm_lo, bin.norm_hi, bin.count, bin.accuracy
            );
        }
    }
}
