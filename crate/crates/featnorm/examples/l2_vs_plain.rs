//! The headline comparison: identical training with and without L2 feature
//! normalization, evaluated on every OoD variant by feature norm.
//!
//! ```bash
//! cargo run --release --example l2_vs_plain
//! ```

use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::forward;
use featnorm::ood::{auroc, fpr95, ScoreSet};
use featnorm::train::train;

fn run(normalize: bool, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let cfg = ExperimentConfig::default_synthetic(normalize, seed, "/unused");
    let (data, _) = build_data(&cfg).unwrap();
    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();
    let id_trace = forward(&out.params, &cfg.model, &data.test.x).unwrap();
    let acc = out.log.records.last().unwrap().acc;
    data.oods
        .iter()
        .map(|ood| {
            let trace = forward(&out.params, &cfg.model, &ood.x).unwrap();
            let s = ScoreSet::new(
                id_trace.recorded_norms.clone(),
                trace.recorded_norms.clone(),
            )
            .unwrap();
            (ood.name.clone(), auroc(&s), fpr95(&s), acc)
        })
        .collect()
}

fn main() {
    let seed = 1;
    println!("training both variants (100 epochs each, seed {seed})...\n");
    let l2 = run(true, seed);
    let plain = run(false, seed);

    println!("feature-norm scoring, AUROC / FPR95:");
    println!("{:>18} {:>16} {:>16} {:>8}", "variant", "L2", "plain", "delta");
    for (a, b) in l2.iter().zip(&plain) {
        println!(
            "{:>18} {:>7.4} / {:>5.3} {:>7.4} / {:>5.3} {:>+8.4}",
            a.0, a.1, a.2, b.1, b.2, a.1 - b.1
        );
    }
    println!(
        "\ntrain accuracy: L2 {:.4}, plain {:.4}",
        l2[0].3, plain[0].3
    );
}
