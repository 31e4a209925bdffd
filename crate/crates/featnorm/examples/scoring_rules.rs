//! Every scoring rule side by side on one trained L2 model, including the
//! scaled-softmax variant with its scale tuned on a validation split.
//!
//! ```bash
//! cargo run --release --example scoring_rules
//! ```

use featnorm::data::{make_ood, split};
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::model::forward;
use featnorm::ood::{
    default_scale_grid, eval_report, scale_search, score, ScoreSet, ScoringRule,
};
use featnorm::train::train;

fn main() {
    let cfg = ExperimentConfig::default_synthetic(true, 1, "/unused");
    let (data, mut rng) = build_data(&cfg).unwrap();
    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();
    let id_trace = forward(&out.params, &cfg.model, &data.test.x).unwrap();

    // Tune the scaled-softmax scale on held-out validation data: an ID slice
    // carved from the training split plus a fresh OoD draw.
    let (_, val_id) = split(&data.train, 0.8, &mut rng).unwrap();
    let spec = cfg.data.synthetic.clone().unwrap();
    let val_ood = make_ood(&data.train, &spec, &cfg.ood[0], &mut rng).unwrap();
    let val_id_trace = forward(&out.params, &cfg.model, &val_id.x).unwrap();
    let val_ood_trace = forward(&out.params, &cfg.model, &val_ood.x).unwrap();
    let max_norm = val_id_trace
        .recorded_norms
        .iter()
        .copied()
        .fold(0.0f64, f64::max);
    let search = scale_search(
        &out.params,
        &cfg.model,
        &val_id_trace,
        &val_ood_trace,
        &default_scale_grid(max_norm, 20),
    )
    .unwrap();
    println!("scaled-softmax grid search (validation AUROC):");
    for (s, a) in search.curve.iter().step_by(4) {
        println!("  scale {s:>8.3} -> {a:.4}");
    }
    println!("  best scale: {:.3}\n", search.best_scale);

    let rules = [
        ScoringRule::FeatureNorm,
        ScoringRule::MaxSoftmax,
        ScoringRule::MaxLogit,
        ScoringRule::LogitNorm,
        ScoringRule::ScaledSoftmax {
            scale: search.best_scale,
        },
    ];
    println!(
        "{:>18} {:>14} {:>8} {:>8}",
        "variant", "rule", "auroc", "fpr95"
    );
    for ds in &data.oods {
        let trace = forward(&out.params, &cfg.model, &ds.x).unwrap();
        for (i, rule) in rules.iter().enumerate() {
            let id = score(&id_trace, rule, &out.params, &cfg.model).unwrap();
            let oo = score(&trace, rule, &out.params, &cfg.model).unwrap();
            let rep = eval_report(&ScoreSet::new(id, oo).unwrap(), rule);
            let label = if i == 0 { ds.name.as_str() } else { "" };
            println!(
                "{:>18} {:>14} {:>8.4} {:>8.4}",
                label, rep.rule, rep.auroc, rep.fpr95
            );
        }
    }
}
