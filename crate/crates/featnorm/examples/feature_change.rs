//! Checkpoint-replay analysis: group training samples by their converged
//! feature norms, then measure how much each group's features moved between
//! consecutive epochs. Under normalization, large-norm samples are the ones
//! whose features changed most.
//!
//! ```bash
//! cargo run --release --example feature_change
//! ```

use featnorm::analysis::{assign_norm_groups, feature_change, NormGroupSpec};
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::forward;
use featnorm::train::train;

fn main() {
    let mut cfg = ExperimentConfig::default_synthetic(true, 2, "/unused");
    cfg.train.epochs = 50;
    cfg.train.base_lr = 0.04;
    cfg.train.lr_step_epochs = vec![35, 43];
    cfg.data.synthetic.as_mut().unwrap().samples_per_class = 800;

    let (data, _) = build_data(&cfg).unwrap();
    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();

    // Groups come from the final checkpoint's recorded norms; quartile edges
    // keep every group populated regardless of the absolute norm scale.
    let final_trace = forward(&out.params, &cfg.model, &data.train.x).unwrap();
    let spec = NormGroupSpec::from_quantiles(&final_trace.recorded_norms, 4).unwrap();
    let groups = assign_norm_groups(&final_trace.recorded_norms, &spec);
    let report = feature_change(&out.checkpoints, &cfg.model, &data.train.x, &groups, &spec)
        .unwrap();

    println!("norm group sizes: {:?}", report.group_sizes);
    println!("\nper-epoch squared feature change (every 10th pair):");
    print!("{:>6}", "epoch");
    for label in &report.group_labels {
        print!(" {label:>16}");
    }
    println!();
    for (i, epoch) in report.pair_epochs.iter().enumerate() {
        if epoch % 10 != 0 {
            continue;
        }
        print!("{epoch:>6}");
        for g in 0..report.group_labels.len() {
            print!(" {:>16.4}", report.increments[i][g]);
        }
        println!();
    }
    println!("\ntotals (sum over all epoch pairs):");
    for (label, total) in report.group_labels.iter().zip(&report.totals) {
        println!("  {label:>16}: {total:.4}");
    }
}
