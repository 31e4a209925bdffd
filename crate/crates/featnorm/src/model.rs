//! The classifier: a leaky-ReLU MLP encoder, an optional L2 normalization
//! layer over features, and a linear decision layer.
//!
//! The forward pass records each sample's pre-normalization feature norm as a
//! pure observation: `recorded_norms` lives outside the differentiation path
//! and nothing in [`backward`] reads it. When normalization is on, the
//! backward pass applies the exact projection Jacobian
//! `dL/dz_i = (I - zhat_i zhat_i^T) / ||z_i|| * dL/dzhat_i` for rows with
//! `||z_i|| > epsilon`, which makes the feature gradient orthogonal to the
//! feature itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngState;

/// Architecture and normalization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    pub normalize: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_true")]
    pub use_bias: bool,
}

fn default_leaky_slope() -> f64 {
    0.01
}

fn default_epsilon() -> f64 {
    1e-12
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.feature_dim == 0
            || self.num_classes == 0
            || self.hidden_dims.iter().any(|&d| d == 0)
        {
            return Err(Error::InvalidConfig("all dimensions must be >= 1".into()));
        }
        let slope_ok = self.leaky_slope > 0.0 && self.leaky_slope < 1.0; // NaN fails
        if !slope_ok {
            return Err(Error::InvalidConfig(format!(
                "leaky_slope must be in (0,1), got {}",
                self.leaky_slope
            )));
        }
        let epsilon_ok = self.epsilon > 0.0; // NaN fails
        if !epsilon_ok {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Input/output widths of every affine map in order: hidden layers, the
    /// feature layer, then the decision layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.feature_dim));
        dims.push((self.feature_dim, self.num_classes));
        dims
    }
}

/// One affine map: weights `in x out` plus a bias of length `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(in_dim, out_dim),
            b: vec![0.0; out_dim],
        }
    }

    /// `x W + b` for a batch of row vectors.
    fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(&self.w)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        Ok(out)
    }
}

/// All trainable parameters. The encoder list ends with the feature layer
/// (no activation after it); `decision` maps features to logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Vec<Layer>,
    pub decision: Layer,
}

impl ModelParams {
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let dims = config.layer_dims();
        if self.encoder.len() + 1 != dims.len() {
            return Err(Error::DimMismatch {
                op: "ModelParams::validate",
                detail: format!(
                    "expected {} affine layers, got {}",
                    dims.len(),
                    self.encoder.len() + 1
                ),
            });
        }
        let all = self.encoder.iter().chain(std::iter::once(&self.decision));
        for (layer, &(din, dout)) in all.zip(&dims) {
            if layer.w.rows() != din || layer.w.cols() != dout || layer.b.len() != dout {
                return Err(Error::DimMismatch {
                    op: "ModelParams::validate",
                    detail: format!(
                        "layer shape {}x{}/{} does not match config {}x{}",
                        layer.w.rows(),
                        layer.w.cols(),
                        layer.b.len(),
                        din,
                        dout
                    ),
                });
            }
            if !layer.w.is_finite() || layer.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("ModelParams".into()));
            }
        }
        Ok(())
    }

    /// Iterates all layers in forward order (encoder layers then decision).
    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(std::iter::once(&self.decision))
    }
}

/// He-scaled Gaussian weights (std `sqrt(2 / fan_in)`), zero biases.
pub fn init_params(config: &ModelConfig, rng: &mut RngState) -> Result<ModelParams> {
    config.validate()?;
    let dims = config.layer_dims();
    let mut layers: Vec<Layer> = dims
        .iter()
        .map(|&(din, dout)| {
            let std = (2.0 / din as f64).sqrt();
            Layer {
                w: Matrix::from_fn(din, dout, |_, _| rng.normal() * std),
                b: vec![0.0; dout],
            }
        })
        .collect();
    let decision = layers.pop().expect("layer_dims is never empty");
    Ok(ModelParams {
        encoder: layers,
        decision,
    })
}

/// Everything the forward pass produced, including the detached norms.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each encoder affine: `layer_inputs[0]` is the batch itself,
    /// the rest are post-activation hidden states.
    pub layer_inputs: Vec<Matrix>,
    /// Pre-normalization features, `N x d`.
    pub z: Matrix,
    /// Detached per-sample feature norms (pure observation, no gradient path).
    pub recorded_norms: Vec<f64>,
    /// Normalized features; present exactly when the model normalizes.
    pub z_norm: Option<Matrix>,
    pub logits: Matrix,
    pub softmax: Matrix,
}

impl ForwardTrace {
    /// The features actually fed to the decision layer.
    pub fn decision_input(&self) -> &Matrix {
        self.z_norm.as_ref().unwrap_or(&self.z)
    }

    pub fn batch_size(&self) -> usize {
        self.z.rows()
    }

    /// Top-1 predictions (ties broken toward the lower class index).
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.logits.rows())
            .map(|r| {
                let row = self.logits.row(r);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-wise L2 normalization: `z_i -> z_i / max(||z_i||, epsilon)`.
pub fn l2_normalize_rows(z: &Matrix, epsilon: f64) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let norm = out.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(epsilon);
        for v in out.row_mut(r) {
            *v /= denom;
        }
    }
    out
}

fn leaky_relu(m: &mut Matrix, slope: f64) {
    for r in 0..m.rows() {
        for v in m.row_mut(r) {
            if *v < 0.0 {
                *v *= slope;
            }
        }
    }
}

/// Runs the encoder, records the detached feature norms, optionally
/// normalizes, and produces logits and softmax.
pub fn forward(params: &ModelParams, config: &ModelConfig, x: &Matrix) -> Result<ForwardTrace> {
    params.validate(config)?;
    if x.cols() != config.input_dim {
        return Err(Error::DimMismatch {
            op: "forward",
            detail: format!("input has {} columns, model expects {}", x.cols(), config.input_dim),
        });
    }

    let mut layer_inputs = Vec::with_capacity(params.encoder.len());
    let mut activation = x.clone();
    let last = params.encoder.len() - 1;
    for (i, layer) in params.encoder.iter().enumerate() {
        let mut out = layer.apply(&activation)?;
        if i < last {
            leaky_relu(&mut out, config.leaky_slope);
        }
        layer_inputs.push(activation);
        activation = out;
    }
    let z = activation;
    let recorded_norms = z.row_l2_norms();

    let z_norm = config
        .normalize
        .then(|| l2_normalize_rows(&z, config.epsilon));
    let features = z_norm.as_ref().unwrap_or(&z);

    let mut logits = features.matmul(&params.decision.w)?;
    if config.use_bias {
        for r in 0..logits.rows() {
            let row = logits.row_mut(r);
            for (v, b) in row.iter_mut().zip(&params.decision.b) {
                *v += b;
            }
        }
    }

    let softmax = row_softmax(&logits);
    Ok(ForwardTrace {
        layer_inputs,
        z,
        recorded_norms,
        z_norm,
        logits,
        softmax,
    })
}

fn row_softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch (max-subtraction stabilized) and its
/// gradient `(softmax - onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let n = logits.rows();
    let k = logits.cols();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} logit rows vs {} labels", n, labels.len()),
        });
    }
    for &label in labels {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
    }
    let mut grad = row_softmax(logits);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        let grow = grad.row_mut(r);
        grow[label] -= 1.0;
        for v in grow.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Gradients for every parameter plus the gradient at the pre-normalization
/// feature layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: Vec<Layer>,
    pub decision: Layer,
    /// `dL/dz`, `N x d`; orthogonal to `z` row-by-row when normalizing.
    pub dl_dz: Matrix,
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (acc, v) in out.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    out
}

/// Exact analytic gradients of the mean cross-entropy with respect to every
/// parameter and to the pre-normalization features.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    trace: &ForwardTrace,
    labels: &[usize],
) -> Result<Gradients> {
    params.validate(config)?;
    if trace.layer_inputs.len() != params.encoder.len()
        || trace.z.cols() != config.feature_dim
        || trace.logits.cols() != config.num_classes
        || trace.z_norm.is_some() != config.normalize
    {
        return Err(Error::DimMismatch {
            op: "backward",
            detail: "trace does not match params/config".into(),
        });
    }
    let n = trace.batch_size();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            op: "backward",
            detail: format!("{} trace rows vs {} labels", n, labels.len()),
        });
    }

    // dL/dlogits = (softmax - onehot) / N, from the trace's own softmax.
    let mut d_logits = trace.softmax.clone();
    let inv_n = 1.0 / n as f64;
    for (r, &label) in labels.iter().enumerate() {
        if label >= config.num_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: config.num_classes,
            });
        }
        let row = d_logits.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }

    let features = trace.decision_input();
    let d_decision_w = features.transpose().matmul(&d_logits)?;
    let d_decision_b = if config.use_bias {
        column_sums(&d_logits)
    } else {
        vec![0.0; config.num_classes]
    };
    let d_features = d_logits.matmul(&params.decision.w.transpose())?;

    // Through the normalization layer (projection Jacobian), or straight copy.
    let dl_dz = if config.normalize {
        let mut dz = d_features.clone();
        for r in 0..n {
            let norm = trace.recorded_norms[r];
            if norm > config.epsilon {
                let zr = trace.z.row(r);
                let gr: Vec<f64> = dz.row(r).to_vec();
                let dot: f64 = gr.iter().zip(zr).map(|(g, z)| g * z).sum();
                let inv_norm_sq = 1.0 / (norm * norm);
                for ((out, &g), &zv) in dz.row_mut(r).iter_mut().zip(&gr).zip(zr) {
                    *out = (g - dot * zv * inv_norm_sq) / norm;
                }
            } else {
                for v in dz.row_mut(r) {
                    *v /= config.epsilon;
                }
            }
        }
        dz
    } else {
        d_features
    };

    // Back through the encoder. The last encoder layer (feature layer) has no
    // activation; hidden layers apply leaky-ReLU.
    let mut encoder_grads = vec![Layer::zeros(0, 0); params.encoder.len()];
    let mut upstream = dl_dz.clone();
    for i in (0..params.encoder.len()).rev() {
        let input = &trace.layer_inputs[i];
        let d_w = input.transpose().matmul(&upstream)?;
        let d_b = column_sums(&upstream);
        let d_input = upstream.matmul(&params.encoder[i].w.transpose())?;
        encoder_grads[i] = Layer { w: d_w, b: d_b };
        if i > 0 {
            // d(pre-activation) of the previous hidden layer: its output is
            // layer_inputs[i], sign-preserving under leaky-ReLU.
            upstream = d_input;
            let post = &trace.layer_inputs[i];
            for r in 0..upstream.rows() {
                let post_row = post.row(r);
                for (v, &p) in upstream.row_mut(r).iter_mut().zip(post_row) {
                    if p <= 0.0 {
                        *v *= config.leaky_slope;
                    }
                }
            }
        }
    }

    Ok(Gradients {
        encoder: encoder_grads,
        decision: Layer {
            w: d_decision_w,
            b: d_decision_b,
        },
        dl_dz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn small_config(normalize: bool) -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dims: vec![5],
            feature_dim: 3,
            num_classes: 3,
            leaky_slope: 0.01,
            normalize,
            epsilon: 1e-12,
            use_bias: true,
        }
    }

    fn random_batch(rng: &mut RngState, n: usize, dim: usize) -> Matrix {
        Matrix::from_fn(n, dim, |_, _| rng.normal())
    }

    #[test]
    fn normalize_rows_examples() {
        let z = Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let n = l2_normalize_rows(&z, 1e-12);
        assert_close(n.get(0, 0), 0.6, 1e-15);
        assert_close(n.get(0, 1), 0.8, 1e-15);

        let zero = Matrix::zeros(1, 4);
        assert_eq!(l2_normalize_rows(&zero, 1e-12), zero);

        let unit = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let again = l2_normalize_rows(&l2_normalize_rows(&unit, 1e-12), 1e-12);
        for (a, b) in again.data().iter().zip(unit.data()) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn forward_identity_net_is_affine() {
        // Zero hidden layers, identity feature layer: logits = x W + b.
        let config = ModelConfig {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            num_classes: 2,
            leaky_slope: 0.01,
            normalize: false,
            epsilon: 1e-12,
            use_bias: true,
        };
        let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let params = ModelParams {
            encoder: vec![Layer {
                w: Matrix::identity(3),
                b: vec![0.0; 3],
            }],
            decision: Layer {
                w: w.clone(),
                b: vec![0.5, -0.5],
            },
        };
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let trace = forward(&params, &config, &x).unwrap();
        let expect = x.matmul(&w).unwrap();
        assert_close(trace.logits.get(0, 0), expect.get(0, 0) + 0.5, 1e-12);
        assert_close(trace.logits.get(0, 1), expect.get(0, 1) - 0.5, 1e-12);
        assert_eq!(trace.z, x);
    }

    #[test]
    fn forward_normalized_features_are_unit() {
        let config = small_config(true);
        let mut rng = RngState::new(1);
        let params = init_params(&config, &mut rng).unwrap();
        let x = random_batch(&mut rng, 10, 4);
        let trace = forward(&params, &config, &x).unwrap();
        for (r, norm) in trace.z_norm.as_ref().unwrap().row_l2_norms().iter().enumerate() {
            if trace.recorded_norms[r] > config.epsilon {
                assert_close(*norm, 1.0, 1e-12);
            }
            assert!(*norm <= 1.0 + 1e-12);
        }
        // Softmax rows sum to one.
        for r in 0..trace.softmax.rows() {
            let s: f64 = trace.softmax.row(r).iter().sum();
            assert_close(s, 1.0, 1e-12);
        }
        // Recorded norms are exactly the row norms of z.
        assert_eq!(trace.recorded_norms, trace.z.row_l2_norms());
    }

    #[test]
    fn forward_normalize_switch_changes_logits_not_z() {
        let mut rng = RngState::new(2);
        let config_on = small_config(true);
        let config_off = small_config(false);
        let params = init_params(&config_on, &mut rng).unwrap();
        let x = random_batch(&mut rng, 6, 4);
        let on = forward(&params, &config_on, &x).unwrap();
        let off = forward(&params, &config_off, &x).unwrap();
        assert_eq!(on.z, off.z);
        let diff: f64 = on
            .logits
            .data()
            .iter()
            .zip(off.logits.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "logits should differ when norms are not 1");
    }

    #[test]
    fn forward_rejects_bad_input_width() {
        let config = small_config(false);
        let mut rng = RngState::new(3);
        let params = init_params(&config, &mut rng).unwrap();
        let x = Matrix::zeros(2, 5);
        assert!(matches!(
            forward(&params, &config, &x),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Matrix::zeros(4, 10);
        let labels = vec![0, 3, 7, 9];
        let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
        assert_close(loss, 10.0f64.ln(), 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_with_margin() {
        let labels = vec![0usize];
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let logits = Matrix::from_rows(&[vec![margin, 0.0, 0.0]]).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!(loss < prev);
            prev = loss;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let mut rng = RngState::new(4);
        let logits = random_batch(&mut rng, 8, 5);
        let labels: Vec<usize> = (0..8).map(|_| rng.next_below(5) as usize).collect();
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();

        // Per-sample formula, no stabilization tricks.
        let mut expect = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            expect += -(row[y].exp() / denom).ln();
        }
        expect /= 8.0;
        assert_close(loss, expect, 1e-12);

        // Gradient formula check.
        for (r, &y) in labels.iter().enumerate() {
            let row = logits.row(r);
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..5 {
                let softmax = row[c].exp() / denom;
                let want = (softmax - if c == y { 1.0 } else { 0.0 }) / 8.0;
                assert_close(grad.get(r, c), want, 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn gradient_is_orthogonal_to_features_when_normalizing() {
        let config = small_config(true);
        let mut rng = RngState::new(5);
        for _ in 0..20 {
            let params = init_params(&config, &mut rng).unwrap();
            let x = random_batch(&mut rng, 8, 4);
            let labels: Vec<usize> = (0..8).map(|_| rng.next_below(3) as usize).collect();
            let trace = forward(&params, &config, &x).unwrap();
            let grads = backward(&params, &config, &trace, &labels).unwrap();
            for r in 0..8 {
                let g = grads.dl_dz.row(r);
                let z = trace.z.row(r);
                let dot: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
                let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                if gn > 0.0 && zn > 0.0 {
                    assert!(
                        (dot / (gn * zn)).abs() < 1e-8,
                        "cosine {}",
                        dot / (gn * zn)
                    );
                }
            }
        }
    }

    /// Central finite differences over every parameter.
    pub(crate) fn finite_difference_check(
        config: &ModelConfig,
        params: &ModelParams,
        x: &Matrix,
        labels: &[usize],
        h: f64,
    ) -> f64 {
        let loss_of = |p: &ModelParams| {
            let trace = forward(p, config, x).unwrap();
            softmax_cross_entropy(&trace.logits, labels).unwrap().0
        };
        let trace = forward(params, config, x).unwrap();
        let grads = backward(params, config, &trace, labels).unwrap();

        let mut worst: f64 = 0.0;
        let n_layers = params.encoder.len();
        for li in 0..=n_layers {
            let (analytic_w, analytic_b) = if li < n_layers {
                (&grads.encoder[li].w, &grads.encoder[li].b)
            } else {
                (&grads.decision.w, &grads.decision.b)
            };
            let mut num_w = Matrix::zeros(analytic_w.rows(), analytic_w.cols());
            for r in 0..analytic_w.rows() {
                for c in 0..analytic_w.cols() {
                    let mut plus = params.clone();
                    let mut minus = params.clone();
                    {
                        let target = if li < n_layers {
                            &mut plus.encoder[li].w
                        } else {
                            &mut plus.decision.w
                        };
                        target.set(r, c, target.get(r, c) + h);
                    }
                    {
                        let target = if li < n_layers {
                            &mut minus.encoder[li].w
                        } else {
                            &mut minus.decision.w
                        };
                        target.set(r, c, target.get(r, c) - h);
                    }
                    num_w.set(r, c, (loss_of(&plus) - loss_of(&minus)) / (2.0 * h));
                }
            }
            let diff = num_w.sub(analytic_w).unwrap().frobenius_norm();
            let scale = analytic_w.frobenius_norm().max(num_w.frobenius_norm());
            if scale > 1e-10 {
                worst = worst.max(diff / scale);
            } else {
                worst = worst.max(diff);
            }

            let mut num_b = vec![0.0; analytic_b.len()];
            for (i, nb) in num_b.iter_mut().enumerate() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                if li < n_layers {
                    plus.encoder[li].b[i] += h;
                    minus.encoder[li].b[i] -= h;
                } else {
                    plus.decision.b[i] += h;
                    minus.decision.b[i] -= h;
                }
                *nb = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            }
            let diff = num_b
                .iter()
                .zip(analytic_b)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let ascale = analytic_b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nscale = num_b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = ascale.max(nscale);
            if scale > 1e-10 {
                worst = worst.max(diff / scale);
            } else {
                worst = worst.max(diff);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::new(6);
        for normalize in [true, false] {
            let config = small_config(normalize);
            let params = init_params(&config, &mut rng).unwrap();
            let x = random_batch(&mut rng, 5, 4);
            let labels: Vec<usize> = (0..5).map(|_| rng.next_below(3) as usize).collect();
            let worst = finite_difference_check(&config, &params, &x, &labels, 1e-5);
            assert!(worst < 1e-5, "normalize={normalize}: rel err {worst}");
        }
    }

    #[test]
    fn feature_gradient_matches_finite_differences() {
        // Perturb z directly and differentiate the decision tail.
        let mut rng = RngState::new(7);
        for normalize in [true, false] {
            let config = small_config(normalize);
            let params = init_params(&config, &mut rng).unwrap();
            let x = random_batch(&mut rng, 4, 4);
            let labels: Vec<usize> = (0..4).map(|_| rng.next_below(3) as usize).collect();
            let trace = forward(&params, &config, &x).unwrap();
            let grads = backward(&params, &config, &trace, &labels).unwrap();

            let tail_loss = |z: &Matrix| {
                let feats = if normalize {
                    l2_normalize_rows(z, config.epsilon)
                } else {
                    z.clone()
                };
                let mut logits = feats.matmul(&params.decision.w).unwrap();
                for r in 0..logits.rows() {
                    for (v, b) in logits.row_mut(r).iter_mut().zip(&params.decision.b) {
                        *v += b;
                    }
                }
                softmax_cross_entropy(&logits, &labels).unwrap().0
            };

            let h = 1e-5;
            for r in 0..4 {
                for c in 0..3 {
                    let mut plus = trace.z.clone();
                    plus.set(r, c, plus.get(r, c) + h);
                    let mut minus = trace.z.clone();
                    minus.set(r, c, minus.get(r, c) - h);
                    let numeric = (tail_loss(&plus) - tail_loss(&minus)) / (2.0 * h);
                    let analytic = grads.dl_dz.get(r, c);
                    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
                    assert!(
                        (analytic - numeric).abs() / denom < 1e-5,
                        "dz[{r},{c}]: {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn confident_model_has_tiny_gradients() {
        // Huge-margin logits drive (softmax - onehot)/N to ~0 and the chain
        // rule zeroes every parameter gradient.
        let config = ModelConfig {
            input_dim: 2,
            hidden_dims: vec![],
            feature_dim: 2,
            num_classes: 2,
            leaky_slope: 0.01,
            normalize: false,
            epsilon: 1e-12,
            use_bias: true,
        };
        let params = ModelParams {
            encoder: vec![Layer {
                w: Matrix::identity(2).scale(100.0),
                b: vec![0.0; 2],
            }],
            decision: Layer {
                w: Matrix::identity(2),
                b: vec![0.0; 2],
            },
        };
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let trace = forward(&params, &config, &x).unwrap();
        let grads = backward(&params, &config, &trace, &[0]).unwrap();
        assert!(grads.decision.w.frobenius_norm() < 1e-12);
        assert!(grads.encoder[0].w.frobenius_norm() < 1e-12);
    }

    #[test]
    fn backward_rejects_stale_trace() {
        let mut rng = RngState::new(8);
        let config_on = small_config(true);
        let config_off = small_config(false);
        let params = init_params(&config_on, &mut rng).unwrap();
        let x = random_batch(&mut rng, 3, 4);
        let trace = forward(&params, &config_on, &x).unwrap();
        // Same params, wrong config for this trace.
        assert!(matches!(
            backward(&params, &config_off, &trace, &[0, 1, 2]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn init_is_deterministic_and_he_scaled() {
        let config = ModelConfig {
            input_dim: 100,
            hidden_dims: vec![100],
            feature_dim: 10,
            num_classes: 4,
            leaky_slope: 0.01,
            normalize: true,
            epsilon: 1e-12,
            use_bias: true,
        };
        let a = init_params(&config, &mut RngState::new(55)).unwrap();
        let b = init_params(&config, &mut RngState::new(55)).unwrap();
        assert_eq!(a, b);

        // 100x100 hidden layer: 1e4 draws, variance should be close to 2/100.
        let w = &a.encoder[0].w;
        let n = (w.rows() * w.cols()) as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let target = 2.0 / 100.0;
        assert!((var - target).abs() / target < 0.2, "var {var}");
        assert!(a.encoder[0].b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_with_no_hidden_layers() {
        let config = ModelConfig {
            input_dim: 6,
            hidden_dims: vec![],
            feature_dim: 3,
            num_classes: 2,
            leaky_slope: 0.01,
            normalize: false,
            epsilon: 1e-12,
            use_bias: true,
        };
        let p = init_params(&config, &mut RngState::new(1)).unwrap();
        assert_eq!(p.encoder.len(), 1);
        assert_eq!(p.encoder[0].w.rows(), 6);
        assert_eq!(p.decision.w.rows(), 3);
        assert_eq!(p.decision.w.cols(), 2);
    }

    #[test]
    fn scaling_a_feature_row_leaves_normalized_output_unchanged() {
        let mut rng = RngState::new(9);
        let z = random_batch(&mut rng, 5, 3);
        let eps = 1e-12;
        let base = l2_normalize_rows(&z, eps);
        for &c in &[0.5, 2.0, 1e6] {
            let mut scaled = z.clone();
            for v in scaled.row_mut(2) {
                *v *= c;
            }
            let out = l2_normalize_rows(&scaled, eps);
            for (a, b) in out.row(2).iter().zip(base.row(2)) {
                assert_close(*a, *b, 1e-12);
            }
        }
    }
}
