//! Distribution distances between sample sets.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

/// Eigenvalues above `-EIG_CLAMP · scale` are clamped to zero; lower ones are an error.
const EIG_CLAMP: f64 = 1e-10;

/// A named scalar metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
}

fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |a, b| m[(a, b)])
}

/// Symmetric PSD square root via eigendecomposition.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut vals = DVector::zeros(eig.eigenvalues.len());
    for (k, &v) in eig.eigenvalues.iter().enumerate() {
        if v < -EIG_CLAMP * scale {
            return Err(Error::Numerical(format!("matrix is not PSD: eigenvalue {v:e}")));
        }
        vals[k] = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// `‖μa - μb‖² + Tr(Σa + Σb - 2(Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
pub fn frechet_from_moments(
    mean_a: &Array1<f64>,
    cov_a: &Array2<f64>,
    mean_b: &Array1<f64>,
    cov_b: &Array2<f64>,
) -> Result<f64> {
    let d = mean_a.len();
    if mean_b.len() != d || cov_a.dim() != (d, d) || cov_b.dim() != (d, d) {
        return Err(invalid("frechet distance needs matching dimensions"));
    }
    let diff = mean_a - mean_b;
    let (a, b) = (to_na(cov_a), to_na(cov_b));
    let ra = sqrt_psd(&a)?;
    let cross = sqrt_psd(&(&ra * &b * &ra))?;
    let value = diff.dot(&diff) + a.trace() + b.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Sample mean and unbiased covariance of an `n × d` array.
pub fn sample_moments(samples: ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = samples.nrows();
    if n < 2 || samples.ncols() == 0 {
        return Err(invalid("moments need at least two samples and one dimension"));
    }
    let mean = samples.mean_axis(Axis(0)).expect("non-empty");
    let centered = &samples - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Fréchet distance between Gaussian fits of two sample sets.
pub fn frechet_gaussian(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    let (ma, ca) = sample_moments(a)?;
    let (mb, cb) = sample_moments(b)?;
    frechet_from_moments(&ma, &ca, &mb, &cb)
}

/// 2-Wasserstein distance between two sorted 1-D empirical distributions,
/// integrating the squared gap between their quantile functions.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut u, mut total) = (0.0, 0.0);
    while i < a.len() && j < b.len() {
        let ua = (i + 1) as f64 / na;
        let ub = (j + 1) as f64 / nb;
        let next = ua.min(ub);
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    total.sqrt()
}

/// Mean over random unit directions of the 1-D 2-Wasserstein distance between
/// projections. The sample sets may differ in size.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = a.ncols();
    if b.ncols() != d || d == 0 {
        return Err(invalid("sliced wasserstein needs matching, non-zero dimensions"));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(invalid("sliced wasserstein needs non-empty sample sets"));
    }
    if n_projections == 0 {
        return Err(invalid("need at least one projection"));
    }
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut dir = Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.dot(&dir).sqrt();
        dir /= norm;
        let mut pa = a.dot(&dir).to_vec();
        let mut pb = b.dot(&dir).to_vec();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += wasserstein_1d_sorted(&pa, &pb);
    }
    Ok(total / n_projections as f64)
}
