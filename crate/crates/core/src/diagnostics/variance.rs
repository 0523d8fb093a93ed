//! Monte-Carlo variance diagnostics on the forward process.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::oracle::DataDistribution;
use crate::schedule::{NoiseSchedule, Parameterization, TimeGrid};

/// What the centering mean `μ` conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// `μ = E[x_{t_i} | x_{t_{i+1}}, x_0]`, the Gaussian forward posterior.
    /// The cross term vanishes exactly.
    #[default]
    ForwardPosterior,
    /// `μ = E[x_{t_i} | x_{t_{i+1}}]`. Here `μ - x_0` is not a function of
    /// `x_{t_{i+1}}` and the cross term equals `-2 E tr Cov(x_{t_i}, x_0 | x_{t_{i+1}})`,
    /// which is non-zero whenever `t_i < t_{i+1}`.
    Marginal,
}

/// Decomposition of `E‖x_{t_i} - x_0‖²` around a conditional mean `μ` of `x_{t_i}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionReport {
    pub n: usize,
    /// `E‖x_{t_i} - x_0‖²`.
    pub mse: f64,
    /// `E‖x_{t_i} - μ‖²`.
    pub variance_term: f64,
    /// `E‖μ - x_0‖²`.
    pub bias_term: f64,
    /// `|mse - variance_term - bias_term|`, twice the sample cross term.
    pub residual: f64,
    /// Standard error of the residual.
    pub standard_error: f64,
}

/// Monte-Carlo check of the variance/bias split. Samples `x_0`, then `x_{t_i}`
/// and `x_{t_{i+1}}` along the forward chain; `t_i <= t_next`.
pub fn reconstruction_decomposition_check<R: Rng + ?Sized>(
    distribution: &DataDistribution,
    schedule: &NoiseSchedule,
    t_i: f64,
    t_next: f64,
    n: usize,
    centering: Centering,
    rng: &mut R,
) -> Result<DecompositionReport> {
    if n < 2 {
        return Err(invalid("decomposition check needs at least two samples"));
    }
    if t_next < t_i {
        return Err(invalid(format!("need t_i <= t_next, got {t_i} > {t_next}")));
    }
    let vi = schedule.eval(t_i)?;
    let vn = schedule.eval(t_next)?;
    let a = vn.alpha / vi.alpha;
    let s = (vn.sigma * vn.sigma - a * a * vi.sigma * vi.sigma).max(0.0).sqrt();
    // Weight on the innovation x_{t_{i+1}} - α_{t_{i+1}} x_0 in the forward posterior.
    let gain = if vn.sigma > 0.0 {
        a * vi.sigma * vi.sigma / (vn.sigma * vn.sigma)
    } else {
        1.0
    };
    let d = distribution.dim();
    let (mut mse, mut var, mut bias) = (0.0, 0.0, 0.0);
    let (mut c_sum, mut c_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x0 = distribution.sample(rng);
        let xi = Array1::from_shape_fn(d, |j| {
            vi.alpha * x0[j] + vi.sigma * rng.sample::<f64, _>(StandardNormal)
        });
        let xn = Array1::from_shape_fn(d, |j| a * xi[j] + s * rng.sample::<f64, _>(StandardNormal));
        let mu = match centering {
            Centering::ForwardPosterior => {
                Array1::from_shape_fn(d, |j| vi.alpha * x0[j] + gain * (xn[j] - vn.alpha * x0[j]))
            }
            Centering::Marginal => distribution.forward_conditional_mean(schedule, xn.view(), t_i, t_next)?,
        };
        let e_var = &xi - &mu;
        let e_bias = &mu - &x0;
        let v = e_var.dot(&e_var);
        let b = e_bias.dot(&e_bias);
        let c = 2.0 * e_var.dot(&e_bias);
        mse += v + b + c;
        var += v;
        bias += b;
        c_sum += c;
        c_sq += c * c;
    }
    let nf = n as f64;
    let (mse, var, bias) = (mse / nf, var / nf, bias / nf);
    let c_mean = c_sum / nf;
    let c_var = (c_sq / nf - c_mean * c_mean).max(0.0) * nf / (nf - 1.0);
    Ok(DecompositionReport {
        n,
        mse,
        variance_term: var,
        bias_term: bias,
        residual: (mse - var - bias).abs(),
        standard_error: (c_var / nf).sqrt(),
    })
}

/// Conditional variances of one DDIM step under each parameterization, split
/// into the linear term in `x_{t_i}` and the model term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComparison {
    pub i: usize,
    pub t: f64,
    /// `σ_{t_{i-1}} / σ_{t_i}`.
    pub coef_data: f64,
    /// `α_{t_{i-1}} / α_{t_i}`.
    pub coef_noise: f64,
    pub linear_data: f64,
    pub model_data: f64,
    pub linear_noise: f64,
    pub model_noise: f64,
}

impl VarianceComparison {
    pub fn var_data(&self) -> f64 {
        self.linear_data + self.model_data
    }

    pub fn var_noise(&self) -> f64 {
        self.linear_noise + self.model_noise
    }
}

fn trace_variance(samples: &[Array1<f64>]) -> f64 {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut total = 0.0;
    for j in 0..d {
        let mean = samples.iter().map(|s| s[j]).sum::<f64>() / n;
        total += samples.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    }
    total
}

/// For every grid step, fix one `x_0`, draw `n` states `x_{t_i} | x_0`, and
/// measure the variance of the linear and model terms of the data- and
/// noise-prediction DDIM updates. Rows run from `i = N` down to 1.
pub fn data_vs_noise_variance<R: Rng + ?Sized>(
    distribution: &DataDistribution,
    schedule: &NoiseSchedule,
    grid: &TimeGrid,
    n: usize,
    rng: &mut R,
) -> Result<Vec<VarianceComparison>> {
    if n < 2 {
        return Err(invalid("variance comparison needs at least two samples"));
    }
    let d = distribution.dim();
    let mut rows = Vec::with_capacity(grid.n_steps());
    for i in (1..=grid.n_steps()).rev() {
        let cur = schedule.eval(grid.t(i))?;
        let next = schedule.eval(grid.t(i - 1))?;
        let h_data = Parameterization::DataPrediction.kappa(&next) - Parameterization::DataPrediction.kappa(&cur);
        let h_noise = Parameterization::NoisePrediction.kappa(&next) - Parameterization::NoisePrediction.kappa(&cur);
        let x0 = distribution.sample(rng);
        let mut lin_d = Vec::with_capacity(n);
        let mut mod_d = Vec::with_capacity(n);
        let mut lin_n = Vec::with_capacity(n);
        let mut mod_n = Vec::with_capacity(n);
        for _ in 0..n {
            let x = Array1::from_shape_fn(d, |j| {
                cur.alpha * x0[j] + cur.sigma * rng.sample::<f64, _>(StandardNormal)
            });
            let m = distribution.posterior_mean(x.view(), cur.alpha, cur.sigma)?;
            let eps = (&x - &(&m * cur.alpha)) / cur.sigma;
            lin_d.push(&x * (next.sigma / cur.sigma));
            mod_d.push(&m * (next.sigma * h_data));
            lin_n.push(&x * (next.alpha / cur.alpha));
            mod_n.push(&eps * (next.alpha * h_noise));
        }
        rows.push(VarianceComparison {
            i,
            t: cur.t,
            coef_data: next.sigma / cur.sigma,
            coef_noise: next.alpha / cur.alpha,
            linear_data: trace_variance(&lin_d),
            model_data: trace_variance(&mod_d),
            linear_noise: trace_variance(&lin_n),
            model_noise: trace_variance(&mod_n),
        });
    }
    Ok(rows)
}
