//! Checkpoint persistence and deterministic replay: save a run's epoch
//! snapshots, reload them, and verify the recomputed norm statistics match
//! the live training log bit-for-bit-ish (1e-9), plus a byte-level
//! save/load/save round trip.
//!
//! ```bash
//! cargo run --release --example checkpoint_replay
//! ```

use featnorm::analysis::cv_trajectory;
use featnorm::checkpoint::{checkpoint_to_bytes, load_checkpoint, save_checkpoint};
use featnorm::experiment::{build_data, ExperimentConfig};
use featnorm::train::train;

fn main() {
    let mut cfg = ExperimentConfig::default_synthetic(true, 9, "/unused");
    cfg.train.epochs = 12;
    cfg.train.lr_step_epochs = vec![9];
    cfg.data.synthetic.as_mut().unwrap().samples_per_class = 300;

    let (data, _) = build_data(&cfg).unwrap();
    let out = train(&cfg.model, &cfg.train, &data.train).unwrap();

    let dir = std::env::temp_dir().join("featnorm_checkpoint_replay");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    for ckpt in &out.checkpoints {
        let path = dir.join(format!("checkpoint_{:05}.ckpt", ckpt.epoch));
        save_checkpoint(ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(&loaded, ckpt);
        assert_eq!(checkpoint_to_bytes(&loaded), checkpoint_to_bytes(ckpt));
    }
    println!(
        "saved and round-tripped {} checkpoints under {}",
        out.checkpoints.len(),
        dir.display()
    );

    // Replay: statistics recomputed from stored snapshots match the log.
    let traj = cv_trajectory(&out.checkpoints, &cfg.model, &data.train).unwrap();
    println!("\n{:>6} {:>12} {:>12} {:>10}", "epoch", "live cv", "replayed cv", "delta");
    for (epoch, _, _, cv) in traj.into_iter().skip(1) {
        let live = out.log.records[epoch - 1].norm_cv;
        println!("{:>6} {:>12.8} {:>12.8} {:>10.2e}", epoch, live, cv, (live - cv).abs());
        assert!((live - cv).abs() < 1e-9);
    }
    println!("\nreplay matches the live training log.");
}
