//! SGD training loop with a step learning-rate schedule, per-epoch
//! checkpointing, and per-epoch statistics.
//!
//! The loop is single-threaded and fully determined by `(seed, configs,
//! dataset)`: one seeded permutation per epoch, batches in order, the last
//! short batch kept, and end-of-epoch statistics computed from a full pass
//! over the training set with that epoch's final parameters (so replaying a
//! stored checkpoint reproduces the logged numbers).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    backward, forward, init_params, softmax_cross_entropy, Gradients, Layer, ModelConfig,
    ModelParams,
};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_step_epochs: Vec<usize>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Gentle SGD without momentum: under feature normalization the loss
        // gradient is orthogonal to the features, so plain SGD can only push
        // pre-normalization norms outward, while a momentum buffer carries
        // stale directions that drag them back in. The low base rate keeps
        // that growth phase alive across the whole run.
        Self {
            epochs: 100,
            batch_size: 128,
            base_lr: 0.0125,
            lr_step_epochs: vec![70, 85],
            lr_gamma: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and checkpoint_every must be >= 1".into(),
            ));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr_gamma must be in (0,1], got {}",
                self.lr_gamma
            )));
        }
        if self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "momentum and weight_decay must be >= 0".into(),
            ));
        }
        for w in self.lr_step_epochs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidConfig(
                    "lr_step_epochs must be strictly increasing".into(),
                ));
            }
        }
        if let Some(&last) = self.lr_step_epochs.last() {
            if last >= self.epochs {
                return Err(Error::InvalidConfig(
                    "lr_step_epochs must be < epochs".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Learning rate used during epoch `epoch` (0-based):
/// `base_lr * gamma^(number of step epochs <= epoch)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = cfg.lr_step_epochs.iter().filter(|&&s| s <= epoch).count();
    cfg.base_lr * cfg.lr_gamma.powi(steps as i32)
}

/// Momentum buffers mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub encoder: Vec<Layer>,
    pub decision: Layer,
}

impl Velocity {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zero = |l: &Layer| Layer {
            w: Matrix::zeros(l.w.rows(), l.w.cols()),
            b: vec![0.0; l.b.len()],
        };
        Self {
            encoder: params.encoder.iter().map(zero).collect(),
            decision: zero(&params.decision),
        }
    }
}

fn step_layer(param: &Layer, grad: &Layer, vel: &Layer, lr: f64, momentum: f64, wd: f64) -> Result<(Layer, Layer)> {
    if param.w.rows() != grad.w.rows()
        || param.w.cols() != grad.w.cols()
        || param.b.len() != grad.b.len()
    {
        return Err(Error::DimMismatch {
            op: "sgd_step",
            detail: "gradient shape does not mirror parameters".into(),
        });
    }
    let mut new_vw = Matrix::zeros(param.w.rows(), param.w.cols());
    let mut new_w = param.w.clone();
    for r in 0..param.w.rows() {
        for c in 0..param.w.cols() {
            let v = momentum * vel.w.get(r, c) + grad.w.get(r, c) + wd * param.w.get(r, c);
            new_vw.set(r, c, v);
            new_w.set(r, c, param.w.get(r, c) - lr * v);
        }
    }
    let mut new_vb = vec![0.0; param.b.len()];
    let mut new_b = param.b.clone();
    for i in 0..param.b.len() {
        let v = momentum * vel.b[i] + grad.b[i] + wd * param.b[i];
        new_vb[i] = v;
        new_b[i] = param.b[i] - lr * v;
    }
    Ok((Layer { w: new_w, b: new_b }, Layer { w: new_vw, b: new_vb }))
}

/// One SGD step: `v <- momentum v + grad + weight_decay param`,
/// `param <- param - lr v`.
pub fn sgd_step(
    params: &ModelParams,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: &Velocity,
) -> Result<(ModelParams, Velocity)> {
    if params.encoder.len() != grads.encoder.len() || params.encoder.len() != velocity.encoder.len()
    {
        return Err(Error::DimMismatch {
            op: "sgd_step",
            detail: "layer counts differ".into(),
        });
    }
    let mut encoder = Vec::with_capacity(params.encoder.len());
    let mut vel_encoder = Vec::with_capacity(params.encoder.len());
    for ((p, g), v) in params
        .encoder
        .iter()
        .zip(&grads.encoder)
        .zip(&velocity.encoder)
    {
        let (np, nv) = step_layer(p, g, v, lr, momentum, weight_decay)?;
        encoder.push(np);
        vel_encoder.push(nv);
    }
    let (decision, vel_decision) = step_layer(
        &params.decision,
        &grads.decision,
        &velocity.decision,
        lr,
        momentum,
        weight_decay,
    )?;
    Ok((
        ModelParams { encoder, decision },
        Velocity {
            encoder: vel_encoder,
            decision: vel_decision,
        },
    ))
}

/// Epoch-stamped snapshot of parameters and generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Number of completed epochs; 0 is the initialization snapshot.
    pub epoch: usize,
    pub params: ModelParams,
    pub rng_state: RngState,
    pub train_loss: f64,
    pub train_acc: f64,
}

/// One row per completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub acc: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub norm_cv: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

/// Full-set loss, accuracy, and recorded-norm dispersion for fixed params.
pub fn evaluate_on(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    dataset: &Dataset,
) -> Result<(f64, f64, (f64, f64, f64))> {
    let trace = forward(params, model_cfg, &dataset.x)?;
    let (loss, _) = softmax_cross_entropy(&trace.logits, &dataset.y)?;
    let preds = trace.predictions();
    let correct = preds
        .iter()
        .zip(&dataset.y)
        .filter(|(p, y)| p == y)
        .count();
    let acc = correct as f64 / dataset.len() as f64;
    let disp = crate::collapse::norm_dispersion_of(&trace.recorded_norms);
    Ok((loss, acc, disp))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub checkpoints: Vec<Checkpoint>,
    pub log: TrainLog,
}

/// Trains on `dataset` and returns final parameters, the checkpoint list
/// (epoch 0, every `checkpoint_every`-th epoch, and the final epoch), and the
/// per-epoch log.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    dataset: &Dataset,
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for &label in &dataset.y {
        if label >= model_cfg.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: model_cfg.num_classes,
            });
        }
    }

    let mut rng = RngState::new(train_cfg.seed);
    let mut params = init_params(model_cfg, &mut rng)?;
    let mut velocity = Velocity::zeros_like(&params);
    let n = dataset.len();

    let mut checkpoints = Vec::new();
    let mut log = TrainLog::default();

    let (loss0, acc0, _) = evaluate_on(&params, model_cfg, dataset)?;
    checkpoints.push(Checkpoint {
        epoch: 0,
        params: params.clone(),
        rng_state: rng.clone(),
        train_loss: loss0,
        train_acc: acc0,
    });

    let mut indices: Vec<usize> = (0..n).collect();
    let mut batch_x = Matrix::zeros(0, 0);
    for epoch_idx in 0..train_cfg.epochs {
        let lr = lr_at_epoch(train_cfg, epoch_idx);
        rng.shuffle(&mut indices);
        for chunk in indices.chunks(train_cfg.batch_size) {
            batch_x = Matrix::from_fn(chunk.len(), dataset.x.cols(), |r, c| {
                dataset.x.get(chunk[r], c)
            });
            let batch_y: Vec<usize> = chunk.iter().map(|&i| dataset.y[i]).collect();
            let trace = forward(&params, model_cfg, &batch_x)?;
            let (loss, _) = softmax_cross_entropy(&trace.logits, &batch_y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch_idx + 1,
                });
            }
            let grads = backward(&params, model_cfg, &trace, &batch_y)?;
            let (p, v) = sgd_step(
                &params,
                &grads,
                lr,
                train_cfg.momentum,
                train_cfg.weight_decay,
                &velocity,
            )?;
            params = p;
            velocity = v;
        }

        let epoch = epoch_idx + 1;
        let (loss, acc, (norm_mean, norm_std, norm_cv)) =
            evaluate_on(&params, model_cfg, dataset)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        log.records.push(EpochRecord {
            epoch,
            lr,
            loss,
            acc,
            norm_mean,
            norm_std,
            norm_cv,
        });
        if epoch % train_cfg.checkpoint_every == 0 || epoch == train_cfg.epochs {
            checkpoints.push(Checkpoint {
                epoch,
                params: params.clone(),
                rng_state: rng.clone(),
                train_loss: loss,
                train_acc: acc,
            });
        }
    }
    drop(batch_x);

    Ok(TrainOutput {
        params,
        checkpoints,
        log,
    })
}
