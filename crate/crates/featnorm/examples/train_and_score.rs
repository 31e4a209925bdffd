//! Train a classifier with L2 feature normalization on synthetic blobs and
//! score held-out OoD data by pre-normalization feature norms.
//!
//! ```bash
//! cargo run --release --example train_and_score
//! ```

use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::forward;
use featnorm::ood::{auroc, fpr95, ScoreSet};
use featnorm::train::train;

fn main() {
    let mut cfg = ExperimentConfig::default_synthetic(true, 7, "/unused");
    // Smaller and hotter than the default config so the demo finishes fast.
    cfg.train.epochs = 40;
    cfg.train.base_lr = 0.04;
    cfg.train.lr_step_epochs = vec![28, 34];
    cfg.data.synthetic.as_mut().unwrap().samples_per_class = 600;

    let (data, _) = build_data(&cfg).unwrap();
    println!(
        "training on {} samples ({} classes), testing on {}",
        data.train.len(),
        cfg.model.num_classes,
        data.test.len()
    );

    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();
    for record in out.log.records.iter().filter(|r| r.epoch % 10 == 0) {
        println!(
            "epoch {:3}: loss {:.4} acc {:.4} mean norm {:.2} (cv {:.3})",
            record.epoch, record.loss, record.acc, record.norm_mean, record.norm_cv
        );
    }

    // Feature norms are recorded before normalization; higher means more ID.
    let id_trace = forward(&out.params, &cfg.model, &data.test.x).unwrap();
    println!("\nOoD separability by feature norm:");
    for ood in &data.oods {
        let ood_trace = forward(&out.params, &cfg.model, &ood.x).unwrap();
        let scores = ScoreSet::new(
            id_trace.recorded_norms.clone(),
            ood_trace.recorded_norms.clone(),
        )
        .unwrap();
        println!(
            "  {:>17}: AUROC {:.4}  FPR95 {:.4}",
            ood.name,
            auroc(&scores),
            fpr95(&scores)
        );
    }
}
