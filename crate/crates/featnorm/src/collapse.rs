//! Neural-collapse measurements: variability collapse (NC1), equinormality
//! and equiangularity of class means, norm-dispersion statistics, and the
//! cross-entropy lower-bound diagnostic.

use crate::error::{Error, Result};
use crate::linalg::{pinv_psd, Matrix, DEFAULT_PINV_TOL};

/// Per-class first and second moments of a feature set.
#[derive(Debug, Clone)]
pub struct ClassStats {
    /// `C x d` matrix of class means.
    pub class_means: Matrix,
    /// Count-weighted mean of all samples.
    pub global_mean: Vec<f64>,
    pub counts: Vec<usize>,
    /// `(1/N) sum_i (z_i - mu_{c(i)}) (z_i - mu_{c(i)})^T`.
    pub within_cov: Matrix,
    /// `(1/C) sum_c (mu_c - mu_G) (mu_c - mu_G)^T`.
    pub between_cov: Matrix,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Class means centered by the global mean.
    pub fn centered_means(&self) -> Matrix {
        Matrix::from_fn(self.class_means.rows(), self.class_means.cols(), |c, j| {
            self.class_means.get(c, j) - self.global_mean[j]
        })
    }

    /// True when the between-class covariance is numerically zero (all class
    /// means coincide with the global mean). NC1 is 0 by the pseudoinverse
    /// convention in that geometry and should be read with care.
    pub fn degenerate_between(&self) -> bool {
        self.between_cov.frobenius_norm() < 1e-14
    }
}

/// Computes class means, the global mean, and both covariance matrices.
/// Every class `0..C-1` (with `C = max label + 1`) must be populated.
pub fn class_stats(z: &Matrix, labels: &[usize]) -> Result<ClassStats> {
    let n = z.rows();
    let d = z.cols();
    if n == 0 || labels.len() != n {
        return Err(Error::DimMismatch {
            op: "class_stats",
            detail: format!("{} feature rows vs {} labels", n, labels.len()),
        });
    }
    let c = labels.iter().copied().max().unwrap() + 1;
    let mut counts = vec![0usize; c];
    for &label in labels {
        counts[label] += 1;
    }
    if let Some(empty) = counts.iter().position(|&k| k == 0) {
        return Err(Error::EmptyClass { class: empty });
    }

    let mut class_means = Matrix::zeros(c, d);
    let mut global_mean = vec![0.0; d];
    for (r, &label) in labels.iter().enumerate() {
        for (j, v) in z.row(r).iter().enumerate() {
            class_means.set(label, j, class_means.get(label, j) + v);
            global_mean[j] += v;
        }
    }
    for (cls, &count) in counts.iter().enumerate() {
        for j in 0..d {
            class_means.set(cls, j, class_means.get(cls, j) / count as f64);
        }
    }
    for g in global_mean.iter_mut() {
        *g /= n as f64;
    }

    let mut within = Matrix::zeros(d, d);
    for (r, &label) in labels.iter().enumerate() {
        let dev: Vec<f64> = z
            .row(r)
            .iter()
            .enumerate()
            .map(|(j, v)| v - class_means.get(label, j))
            .collect();
        for (a, &da) in dev.iter().enumerate() {
            for (b, &db) in dev.iter().enumerate() {
                within.set(a, b, within.get(a, b) + da * db);
            }
        }
    }
    let within_cov = within.scale(1.0 / n as f64);

    let mut between = Matrix::zeros(d, d);
    for cls in 0..c {
        let dev: Vec<f64> = (0..d)
            .map(|j| class_means.get(cls, j) - global_mean[j])
            .collect();
        for (a, &da) in dev.iter().enumerate() {
            for (b, &db) in dev.iter().enumerate() {
                between.set(a, b, between.get(a, b) + da * db);
            }
        }
    }
    let between_cov = between.scale(1.0 / c as f64);

    Ok(ClassStats {
        class_means,
        global_mean,
        counts,
        within_cov,
        between_cov,
    })
}

/// Variability collapse: `Tr(Sigma_W pinv(Sigma_B)) / C`.
///
/// A zero between-class covariance yields 0 by the pseudoinverse convention;
/// callers that care can detect the degenerate geometry via
/// [`CollapseReport::degenerate_between`].
pub fn nc1(z: &Matrix, labels: &[usize]) -> Result<f64> {
    let stats = class_stats(z, labels)?;
    nc1_from_stats(&stats)
}

pub fn nc1_from_stats(stats: &ClassStats) -> Result<f64> {
    let pinv = pinv_psd(&stats.between_cov, DEFAULT_PINV_TOL)?;
    let prod = stats.within_cov.matmul(&pinv)?;
    let trace: f64 = (0..prod.rows()).map(|i| prod.get(i, i)).sum();
    Ok(trace / stats.num_classes() as f64)
}

/// Equinormality: population coefficient of variation of the centered class
/// mean norms. Needs at least two classes and a nonzero average norm.
pub fn en_means(stats: &ClassStats) -> Result<f64> {
    let c = stats.num_classes();
    if c < 2 {
        return Err(Error::Degenerate("en_means needs >= 2 classes".into()));
    }
    let norms = stats.centered_means().row_l2_norms();
    let mean: f64 = norms.iter().sum::<f64>() / c as f64;
    if mean <= 0.0 {
        return Err(Error::Degenerate(
            "all centered class means have zero norm".into(),
        ));
    }
    let var: f64 = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
    Ok(var.sqrt() / mean)
}

/// Equiangularity: mean absolute deviation of off-diagonal pairwise cosines
/// of centered, normalized class means from `-1/(C-1)`.
pub fn ea_means(stats: &ClassStats) -> Result<f64> {
    let c = stats.num_classes();
    if c < 2 {
        return Err(Error::Degenerate("ea_means needs >= 2 classes".into()));
    }
    let centered = stats.centered_means();
    let norms = centered.row_l2_norms();
    if let Some(zero) = norms.iter().position(|&n| n <= 0.0) {
        return Err(Error::Degenerate(format!(
            "centered mean of class {zero} has zero length"
        )));
    }
    let d = centered.cols();
    let unit = Matrix::from_fn(c, d, |r, j| centered.get(r, j) / norms[r]);
    let gram = unit.matmul(&unit.transpose())?;
    let target = -1.0 / (c as f64 - 1.0);
    let mut acc = 0.0;
    for a in 0..c {
        for b in 0..c {
            if a != b {
                acc += (gram.get(a, b) - target).abs();
            }
        }
    }
    Ok(acc / (c * (c - 1)) as f64)
}

/// Inputs to the cross-entropy lower bound: a feature-norm cap, the class
/// count, and the Frobenius norm of the decision weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub rho_z: f64,
    pub k: usize,
    pub frob_w: f64,
}

/// `log(1 + (k-1) exp(-rho_z sqrt(k)/(k-1) ||W||_F))`.
pub fn ce_lower_bound(b: &BoundInputs) -> f64 {
    assert!(b.k >= 2, "bound needs k >= 2");
    let k = b.k as f64;
    let exponent = -b.rho_z * (k.sqrt() / (k - 1.0)) * b.frob_w;
    (1.0 + (k - 1.0) * exponent.exp()).ln()
}

/// Mean, population standard deviation, and coefficient of variation of a
/// norm vector. CV is 0 when the mean is not positive.
pub fn norm_dispersion_of(norms: &[f64]) -> (f64, f64, f64) {
    if norms.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let cv = if mean > 0.0 { std / mean } else { 0.0 };
    (mean, std, cv)
}

/// Dispersion statistics of the row norms of a feature matrix.
pub fn norm_dispersion(z: &Matrix) -> (f64, f64, f64) {
    norm_dispersion_of(&z.row_l2_norms())
}

/// All collapse measurements for one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseReport {
    pub nc1: f64,
    pub en_means: f64,
    pub ea_means: f64,
    pub norm_mean: f64,
    pub norm_std: f64,
    pub norm_cv: f64,
    /// True when the between-class covariance is numerically zero, in which
    /// case `nc1` is 0 by the pseudoinverse convention.
    pub degenerate_between: bool,
}

pub fn collapse_report(z: &Matrix, labels: &[usize]) -> Result<CollapseReport> {
    let stats = class_stats(z, labels)?;
    let nc1 = nc1_from_stats(&stats)?;
    let en = en_means(&stats)?;
    let ea = ea_means(&stats)?;
    let (norm_mean, norm_std, norm_cv) = norm_dispersion(z);
    let degenerate_between = stats.degenerate_between();
    Ok(CollapseReport {
        nc1,
        en_means: en,
        ea_means: ea,
        norm_mean,
        norm_std,
        norm_cv,
        degenerate_between,
    })
}
