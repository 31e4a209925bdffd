//! Neural-collapse measurements across training: NC1 (variability collapse),
//! equinormality and equiangularity of class means, and the cross-entropy
//! lower bound the collapse theory predicts.
//!
//! ```bash
//! cargo run --release --example collapse_metrics
//! ```

use featnorm::collapse::{ce_lower_bound, collapse_report, BoundInputs};
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::{forward, softmax_cross_entropy};
use featnorm::train::train;

fn main() {
    let mut cfg = ExperimentConfig::default_synthetic(false, 3, "/unused");
    cfg.train.epochs = 60;
    cfg.train.base_lr = 0.04;
    cfg.train.lr_step_epochs = vec![42, 51];
    cfg.data.synthetic.as_mut().unwrap().samples_per_class = 800;

    let (data, _) = build_data(&cfg).unwrap();
    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();

    println!("collapse metrics on training features (no normalization):");
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "epoch", "nc1", "en_means", "ea_means", "norm_cv"
    );
    for ckpt in out.checkpoints.iter().filter(|c| c.epoch % 10 == 0) {
        let trace = forward(&ckpt.params, &cfg.model, &data.train.x).unwrap();
        let report = collapse_report(&trace.z, &data.train.y).unwrap();
        println!(
            "{:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            ckpt.epoch, report.nc1, report.en_means, report.ea_means, report.norm_cv
        );
    }

    // The bound ties the reachable loss to the feature-norm cap and the
    // decision weights; the measured loss must sit above it.
    let trace = forward(&out.params, &cfg.model, &data.train.x).unwrap();
    let (loss, _) = softmax_cross_entropy(&trace.logits, &data.train.y).unwrap();
    let rho_z = trace
        .decision_input()
        .row_l2_norms()
        .into_iter()
        .fold(0.0f64, f64::max);
    let bound = ce_lower_bound(&BoundInputs {
        rho_z,
        k: cfg.model.num_classes,
        frob_w: out.params.decision.w.frobenius_norm(),
    });
    println!("\nce lower bound {bound:.6} <= measured loss {loss:.6}");
}
