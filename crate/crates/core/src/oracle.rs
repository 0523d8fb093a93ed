//! Analytic denoisers for Gaussian and diagonal Gaussian-mixture data.
//!
//! For data `x_0 ~ N(m, diag v)` and `x_t = α x_0 + σ ε`, the posterior mean is
//! `m + α v (x - α m) / (α² v + σ²)` coordinate-wise. Mixtures weight each
//! component's posterior mean by its responsibility
//! `π_k N(x; α m_k, α² v_k + σ²)`, computed in log space.

use ndarray::{Array1, Array2, ArrayView1};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::schedule::{NoiseSchedule, Parameterization};

/// One diagonal Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

/// Data distribution with a closed-form posterior mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DataDistribution {
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    component: Vec<Component>,
}

impl TryFrom<RawDistribution> for DataDistribution {
    type Error = Error;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        Self::mixture(raw.component)
    }
}

impl From<DataDistribution> for RawDistribution {
    fn from(d: DataDistribution) -> Self {
        Self {
            component: d.components,
        }
    }
}

impl DataDistribution {
    /// Single Gaussian `N(mean, diag(cov_diag))`.
    pub fn gaussian(mean: Vec<f64>, cov_diag: Vec<f64>) -> Result<Self> {
        Self::mixture(vec![Component {
            weight: 1.0,
            mean,
            cov_diag,
        }])
    }

    /// Mixture of diagonal Gaussians; weights are normalised.
    pub fn mixture(mut components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("distribution needs at least one component"))?;
        let dim = first.mean.len();
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.cov_diag.len() != dim {
                return Err(invalid(format!("component {k} has inconsistent dimension")));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(invalid(format!("component {k} weight must be positive")));
            }
            if c.cov_diag.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid(format!("component {k} covariance must be positive definite")));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(invalid(format!("component {k} mean is not finite")));
            }
            total += c.weight;
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    /// Anisotropic Gaussian: even coordinates `N(1, 0.5)`, odd ones `N(-0.5, 2)`.
    pub fn anisotropic(dim: usize) -> Result<Self> {
        let mean = (0..dim).map(|j| if j % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let var = (0..dim).map(|j| if j % 2 == 0 { 0.5 } else { 2.0 }).collect();
        Self::gaussian(mean, var)
    }

    /// Four-mode 2-D mixture at `(±1, ±1)`, variance 0.04, weights 0.1 to 0.4.
    pub fn four_mode() -> Self {
        let modes = [(-1.0, -1.0, 0.1), (1.0, -1.0, 0.2), (-1.0, 1.0, 0.3), (1.0, 1.0, 0.4)];
        Self::mixture(
            modes
                .iter()
                .map(|&(a, b, w)| Component {
                    weight: w,
                    mean: vec![a, b],
                    cov_diag: vec![0.04, 0.04],
                })
                .collect(),
        )
        .expect("valid constant mixture")
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn is_gaussian(&self) -> bool {
        self.components.len() == 1
    }

    fn single(&self) -> Result<&Component> {
        if self.is_gaussian() {
            Ok(&self.components[0])
        } else {
            Err(invalid("operation needs a single-Gaussian distribution"))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let k = if self.is_gaussian() {
            0
        } else {
            let w = WeightedIndex::new(self.components.iter().map(|c| c.weight))
                .expect("weights validated at construction");
            w.sample(rng)
        };
        let c = &self.components[k];
        Array1::from_shape_fn(self.dim(), |j| {
            let z: f64 = rng.sample(StandardNormal);
            c.mean[j] + c.cov_diag[j].sqrt() * z
        })
    }

    /// Mean of the data distribution.
    pub fn mean(&self) -> Array1<f64> {
        let mut m = Array1::zeros(self.dim());
        for c in &self.components {
            m.scaled_add(c.weight, &ArrayView1::from(&c.mean));
        }
        m
    }

    /// Full covariance of the data distribution.
    pub fn covariance(&self) -> Array2<f64> {
        let d = self.dim();
        let mu = self.mean();
        let mut cov = Array2::zeros((d, d));
        for c in &self.components {
            for a in 0..d {
                cov[(a, a)] += c.weight * c.cov_diag[a];
                for b in 0..d {
                    cov[(a, b)] += c.weight * (c.mean[a] - mu[a]) * (c.mean[b] - mu[b]);
                }
            }
        }
        cov
    }

    fn check_dim(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `E[y | z]` where, per component, `y ~ N(a_y m, a_y² v + s_y²)` and
    /// `z = c·y + noise` with `Var(z) = a_z² v + s_z²` and `Cov(y, z) = c·Var(y)`.
    ///
    /// The posterior mean of `x_0` given `x_t` is the case `a_y = 1, s_y = 0`.
    fn conditional_mean(
        &self,
        z: ArrayView1<f64>,
        y: (f64, f64),
        zc: (f64, f64),
        coupling: f64,
    ) -> Result<Array1<f64>> {
        self.check_dim(z)?;
        let (ay, sy) = y;
        let (az, sz) = zc;
        let d = self.dim();
        let mut log_w = Vec::with_capacity(self.components.len());
        let mut means = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let mut lw = c.weight.ln();
            let mut m = Array1::zeros(d);
            for j in 0..d {
                let var_y = ay * ay * c.cov_diag[j] + sy * sy;
                let var_z = az * az * c.cov_diag[j] + sz * sz;
                let resid = z[j] - az * c.mean[j];
                m[j] = ay * c.mean[j] + coupling * var_y / var_z * resid;
                lw -= 0.5 * ((2.0 * std::f64::consts::PI * var_z).ln() + resid * resid / var_z);
            }
            log_w.push(lw);
            means.push(m);
        }
        if means.len() == 1 {
            return Ok(means.pop().unwrap());
        }
        let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("all mixture responsibilities underflow".into()));
        }
        let norm: f64 = log_w.iter().map(|l| (l - max).exp()).sum();
        let mut out = Array1::zeros(d);
        for (lw, m) in log_w.iter().zip(&means) {
            out.scaled_add((lw - max).exp() / norm, m);
        }
        Ok(out)
    }

    /// `E[x_0 | x_t = x]` for `x_t = α x_0 + σ ε`.
    pub fn posterior_mean(&self, x: ArrayView1<f64>, alpha: f64, sigma: f64) -> Result<Array1<f64>> {
        self.conditional_mean(x, (1.0, 0.0), (alpha, sigma), alpha)
    }

    /// `E[x_s | x_t = x]` under the forward process, `s < t`, integrating out `x_0`.
    pub fn forward_conditional_mean(
        &self,
        schedule: &NoiseSchedule,
        x: ArrayView1<f64>,
        s: f64,
        t: f64,
    ) -> Result<Array1<f64>> {
        let vs = schedule.eval(s)?;
        let vt = schedule.eval(t)?;
        self.conditional_mean(x, (vs.alpha, vs.sigma), (vt.alpha, vt.sigma), vt.alpha / vs.alpha)
    }

    /// Exact probability-flow map from time `t_from` to `t_to` (single Gaussian only).
    ///
    /// Each coordinate keeps its standardised value `(x - α m) / sqrt(α² v + σ²)`.
    pub fn flow_map(
        &self,
        schedule: &NoiseSchedule,
        x: ArrayView1<f64>,
        t_from: f64,
        t_to: f64,
    ) -> Result<Array1<f64>> {
        let c = self.single()?;
        self.check_dim(x)?;
        let a = schedule.eval(t_from)?;
        let b = schedule.eval(t_to)?;
        Ok(Array1::from_shape_fn(self.dim(), |j| {
            let sa = (a.alpha * a.alpha * c.cov_diag[j] + a.sigma * a.sigma).sqrt();
            let sb = (b.alpha * b.alpha * c.cov_diag[j] + b.sigma * b.sigma).sqrt();
            b.alpha * c.mean[j] + sb * (x[j] - a.alpha * c.mean[j]) / sa
        }))
    }

    /// Marginal `N(α m, α² v + σ²)` standard deviations at time `t` (single Gaussian only).
    pub fn marginal_std(&self, schedule: &NoiseSchedule, t: f64) -> Result<Array1<f64>> {
        let c = self.single()?;
        let v = schedule.eval(t)?;
        Ok(Array1::from_shape_fn(self.dim(), |j| {
            (v.alpha * v.alpha * c.cov_diag[j] + v.sigma * v.sigma).sqrt()
        }))
    }
}

/// A model queried by the solvers. Each `evaluate` call counts as one function evaluation.
pub trait Denoiser {
    fn parameterization(&self) -> Parameterization;
    fn dim(&self) -> usize;
    fn evaluate(&mut self, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>>;
    /// Number of `evaluate` calls so far.
    fn evaluations(&self) -> usize;
}

/// Bayes-optimal denoiser for a [`DataDistribution`].
#[derive(Debug, Clone)]
pub struct DenoiserOracle {
    distribution: DataDistribution,
    schedule: NoiseSchedule,
    mode: Parameterization,
    calls: usize,
}

impl DenoiserOracle {
    pub fn new(distribution: DataDistribution, schedule: NoiseSchedule, mode: Parameterization) -> Self {
        Self {
            distribution,
            schedule,
            mode,
            calls: 0,
        }
    }

    pub fn distribution(&self) -> &DataDistribution {
        &self.distribution
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Fresh oracle with the same data and the other parameterization.
    pub fn with_mode(&self, mode: Parameterization) -> Self {
        Self::new(self.distribution.clone(), self.schedule.clone(), mode)
    }
}

impl Denoiser for DenoiserOracle {
    fn parameterization(&self) -> Parameterization {
        self.mode
    }

    fn dim(&self) -> usize {
        self.distribution.dim()
    }

    fn evaluate(&mut self, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        self.calls += 1;
        let v = self.schedule.eval(t)?;
        let x0 = self.distribution.posterior_mean(x, v.alpha, v.sigma)?;
        let out = match self.mode {
            Parameterization::DataPrediction => x0,
            Parameterization::NoisePrediction => (&x - &(x0 * v.alpha)) / v.sigma,
        };
        if out.iter().any(|y| !y.is_finite()) {
            return Err(Error::Numerical(format!("oracle output non-finite at t={t}")));
        }
        Ok(out)
    }

    fn evaluations(&self) -> usize {
        self.calls
    }
}

/// Classifier-free guidance: `(1 + w)·cond - w·uncond`.
pub fn cfg_combine(cond: ArrayView1<f64>, uncond: ArrayView1<f64>, w: f64) -> Result<Array1<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::DimensionMismatch {
            expected: cond.len(),
            found: uncond.len(),
        });
    }
    Ok(&cond * (1.0 + w) - &uncond * w)
}

/// A draw `(x_0, ε, x_t = α x_0 + σ ε)` from the forward process.
#[derive(Debug, Clone)]
pub struct ForwardSample {
    pub x0: Array1<f64>,
    pub noise: Array1<f64>,
    pub xt: Array1<f64>,
}

pub fn sample_forward<R: Rng + ?Sized>(
    distribution: &DataDistribution,
    schedule: &NoiseSchedule,
    t: f64,
    rng: &mut R,
) -> Result<ForwardSample> {
    let v = schedule.eval(t)?;
    let x0 = distribution.sample(rng);
    let noise = Array1::from_shape_fn(x0.len(), |_| rng.sample::<f64, _>(StandardNormal));
    let xt = &x0 * v.alpha + &noise * v.sigma;
    Ok(ForwardSample { x0, noise, xt })
}

/// Deterministic stand-in models for solver tests.
pub mod stubs {
    use std::collections::VecDeque;

    use super::*;

    /// Returns the same vector at every call.
    #[derive(Debug, Clone)]
    pub struct ConstantDenoiser {
        value: Array1<f64>,
        mode: Parameterization,
        calls: usize,
    }

    impl ConstantDenoiser {
        pub fn new(value: Array1<f64>, mode: Parameterization) -> Self {
            Self { value, mode, calls: 0 }
        }
    }

    impl Denoiser for ConstantDenoiser {
        fn parameterization(&self) -> Parameterization {
            self.mode
        }
        fn dim(&self) -> usize {
            self.value.len()
        }
        fn evaluate(&mut self, _x: ArrayView1<f64>, _t: f64) -> Result<Array1<f64>> {
            self.calls += 1;
            Ok(self.value.clone())
        }
        fn evaluations(&self) -> usize {
            self.calls
        }
    }

    /// `d(κ) = a + b κ(t)`, independent of the state.
    #[derive(Debug, Clone)]
    pub struct LinearKappaDenoiser {
        a: Array1<f64>,
        b: Array1<f64>,
        schedule: NoiseSchedule,
        mode: Parameterization,
        calls: usize,
    }

    impl LinearKappaDenoiser {
        pub fn new(a: Array1<f64>, b: Array1<f64>, schedule: NoiseSchedule, mode: Parameterization) -> Self {
            assert_eq!(a.len(), b.len());
            Self {
                a,
                b,
                schedule,
                mode,
                calls: 0,
            }
        }

        /// Exact `f(x_{t_to}) - f(x_{t_from})` for this model.
        pub fn exact_increment(&self, t_from: f64, t_to: f64) -> Result<Array1<f64>> {
            let k0 = self.mode.kappa_at(&self.schedule, t_from)?;
            let k1 = self.mode.kappa_at(&self.schedule, t_to)?;
            Ok(&self.a * (k1 - k0) + &self.b * (0.5 * (k1 * k1 - k0 * k0)))
        }
    }

    impl Denoiser for LinearKappaDenoiser {
        fn parameterization(&self) -> Parameterization {
            self.mode
        }
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn evaluate(&mut self, _x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
            self.calls += 1;
            let k = self.mode.kappa_at(&self.schedule, t)?;
            Ok(&self.a + &(&self.b * k))
        }
        fn evaluations(&self) -> usize {
            self.calls
        }
    }

    /// Replays a fixed list of outputs, one per call.
    #[derive(Debug, Clone)]
    pub struct ScriptedDenoiser {
        outputs: VecDeque<Array1<f64>>,
        dim: usize,
        mode: Parameterization,
        calls: usize,
    }

    impl ScriptedDenoiser {
        pub fn new(outputs: Vec<Array1<f64>>, mode: Parameterization) -> Self {
            let dim = outputs.first().map_or(0, |o| o.len());
            Self {
                outputs: outputs.into(),
                dim,
                mode,
                calls: 0,
            }
        }
    }

    impl Denoiser for ScriptedDenoiser {
        fn parameterization(&self) -> Parameterization {
            self.mode
        }
        fn dim(&self) -> usize {
            self.dim
        }
        fn evaluate(&mut self, _x: ArrayView1<f64>, _t: f64) -> Result<Array1<f64>> {
            self.calls += 1;
            self.outputs
                .pop_front()
                .ok_or_else(|| domain("scripted denoiser ran out of outputs"))
        }
        fn evaluations(&self) -> usize {
            self.calls
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::assert_close;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gmm() -> DataDistribution {
        DataDistribution::mixture(vec![
            Component {
                weight: 1.0,
                mean: vec![-1.0, 0.5],
                cov_diag: vec![0.2, 0.3],
            },
            Component {
                weight: 3.0,
                mean: vec![2.0, -1.0],
                cov_diag: vec![0.5, 0.1],
            },
        ])
        .unwrap()
    }

    #[test]
    fn standard_gaussian_posterior_mean() {
        // m = α x / (α² + σ²) = α x on a VP schedule.
        let s = NoiseSchedule::vp_linear();
        let v = s.eval(0.4).unwrap();
        let d = DataDistribution::standard(1).unwrap();
        let x = array![0.7];
        let m = d.posterior_mean(x.view(), v.alpha, v.sigma).unwrap();
        assert_close(m[0], v.alpha * 0.7, 1e-14);
    }

    #[test]
    fn single_component_mixture_equals_gaussian() {
        let g = DataDistribution::gaussian(vec![1.0, -2.0], vec![0.3, 2.0]).unwrap();
        let m = DataDistribution::mixture(vec![Component {
            weight: 5.0,
            mean: vec![1.0, -2.0],
            cov_diag: vec![0.3, 2.0],
        }])
        .unwrap();
        let x = array![0.2, 0.9];
        let a = g.posterior_mean(x.view(), 0.6, 0.8).unwrap();
        let b = m.posterior_mean(x.view(), 0.6, 0.8).unwrap();
        assert_close(a[0], b[0], 1e-15);
        assert_close(a[1], b[1], 1e-15);
    }

    #[test]
    fn mixture_posterior_mean_matches_direct_sum() {
        // Independent evaluation of Σ_k w_k(x) E_k[x0|x] without log-sum-exp.
        let d = gmm();
        let (alpha, sigma) = (0.8, 0.6);
        let x = array![0.3, -0.4];
        let mut num = [0.0; 2];
        let mut den = 0.0;
        for c in d.components() {
            let mut lik = c.weight;
            let mut post = [0.0; 2];
            for j in 0..2 {
                let var = alpha * alpha * c.cov_diag[j] + sigma * sigma;
                let r = x[j] - alpha * c.mean[j];
                lik *= (-(r * r) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                post[j] = c.mean[j] + alpha * c.cov_diag[j] * r / var;
            }
            den += lik;
            for j in 0..2 {
                num[j] += lik * post[j];
            }
        }
        let m = d.posterior_mean(x.view(), alpha, sigma).unwrap();
        assert_close(m[0], num[0] / den, 1e-13);
        assert_close(m[1], num[1] / den, 1e-13);
    }

    #[test]
    fn responsibilities_do_not_underflow_far_from_data() {
        let d = gmm();
        let x = array![1e3, -1e3];
        let m = d.posterior_mean(x.view(), 0.9, 0.1).unwrap();
        assert!(m.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn noise_and_data_modes_are_consistent() {
        let s = NoiseSchedule::vp_linear();
        let mut data = DenoiserOracle::new(gmm(), s.clone(), Parameterization::DataPrediction);
        let mut noise = data.with_mode(Parameterization::NoisePrediction);
        let x = array![0.5, 1.5];
        for t in [0.01, 0.3, 0.9] {
            let v = s.eval(t).unwrap();
            let x0 = data.evaluate(x.view(), t).unwrap();
            let eps = noise.evaluate(x.view(), t).unwrap();
            for j in 0..2 {
                assert_close(x[j], v.alpha * x0[j] + v.sigma * eps[j], 1e-12);
            }
        }
        assert_eq!(data.evaluations(), 3);
        assert_eq!(noise.evaluations(), 3);
    }

    #[test]
    fn cfg_zero_weight_returns_conditional() {
        let c = array![1.0, 2.0];
        let u = array![-3.0, 5.0];
        assert_eq!(cfg_combine(c.view(), u.view(), 0.0).unwrap(), c);
        assert_eq!(cfg_combine(c.view(), u.view(), 1.0).unwrap(), array![5.0, -1.0]);
    }

    #[test]
    fn rejects_invalid_distributions() {
        assert!(DataDistribution::gaussian(vec![], vec![]).is_err());
        assert!(DataDistribution::gaussian(vec![0.0], vec![0.0]).is_err());
        assert!(DataDistribution::gaussian(vec![0.0, 1.0], vec![1.0]).is_err());
        let d = DataDistribution::standard(2).unwrap();
        assert!(matches!(
            d.posterior_mean(array![1.0].view(), 0.5, 0.5),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flow_map_preserves_marginal_quantile() {
        let s = NoiseSchedule::vp_linear();
        let d = DataDistribution::gaussian(vec![1.0], vec![0.25]).unwrap();
        let x = array![0.3];
        let y = d.flow_map(&s, x.view(), 0.8, 0.1).unwrap();
        let back = d.flow_map(&s, y.view(), 0.1, 0.8).unwrap();
        assert_close(back[0], 0.3, 1e-14);
    }

    #[test]
    fn oracle_beats_rescaling_baseline() {
        // Bayes optimality spot check: E|x0 - x_θ|² <= E|x0 - x_t/α|².
        let s = NoiseSchedule::vp_linear();
        let d = gmm();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = 0.5;
        let v = s.eval(t).unwrap();
        let (mut opt, mut naive) = (0.0, 0.0);
        for _ in 0..4000 {
            let f = sample_forward(&d, &s, t, &mut rng).unwrap();
            let m = d.posterior_mean(f.xt.view(), v.alpha, v.sigma).unwrap();
            opt += (&f.x0 - &m).mapv(|e| e * e).sum();
            naive += (&f.x0 - &(&f.xt / v.alpha)).mapv(|e| e * e).sum();
        }
        assert!(opt < naive);
    }

    #[test]
    fn covariance_of_mixture() {
        let d = gmm();
        let cov = d.covariance();
        let mu = d.mean();
        // Monte-Carlo check of the closed-form second moment.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut acc = Array2::<f64>::zeros((2, 2));
        for _ in 0..n {
            let x = d.sample(&mut rng) - &mu;
            for a in 0..2 {
                for b in 0..2 {
                    acc[(a, b)] += x[a] * x[b];
                }
            }
        }
        acc /= n as f64;
        for a in 0..2 {
            for b in 0..2 {
                assert_close(acc[(a, b)], cov[(a, b)], 0.03);
            }
        }
    }

    #[test]
    fn forward_conditional_mean_degenerates_to_identity() {
        let s = NoiseSchedule::vp_linear();
        let d = gmm();
        let x = array![0.4, -0.1];
        let m = d.forward_conditional_mean(&s, x.view(), 0.3, 0.3).unwrap();
        assert_close(m[0], 0.4, 1e-12);
        assert_close(m[1], -0.1, 1e-12);
    }

    #[test]
    fn distribution_toml_roundtrip() {
        let d = gmm();
        let text = toml::to_string(&d).unwrap();
        let back: DataDistribution = toml::from_str(&text).unwrap();
        assert_eq!(back, d);
        let bad = "[[component]]\nweight = 1.0\nmean = [0.0]\ncov_diag = [-1.0]\n";
        assert!(toml::from_str::<DataDistribution>(bad).is_err());
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        fn point() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-3.0f64..3.0, 2)
        }

        fn variances() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.05f64..4.0, 2)
        }

        proptest! {
            #[test]
            fn gaussian_posterior_mean_is_coordinatewise_shrinkage(
                mean in point(), var in variances(), x in point(), t in 0.01f64..0.99,
            ) {
                let v = NoiseSchedule::vp_linear().eval(t).unwrap();
                let d = DataDistribution::gaussian(mean.clone(), var.clone()).unwrap();
                let m = d.posterior_mean(Array1::from(x.clone()).view(), v.alpha, v.sigma).unwrap();
                for j in 0..2 {
                    let s2 = v.sigma * v.sigma;
                    let want = (s2 * mean[j] + v.alpha * var[j] * x[j]) / (v.alpha * v.alpha * var[j] + s2);
                    prop_assert!((m[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }

            #[test]
            fn duplicated_components_do_not_change_the_posterior(
                mean in point(), var in variances(), x in point(), t in 0.01f64..0.99, w in 0.1f64..5.0,
            ) {
                let v = NoiseSchedule::vp_linear().eval(t).unwrap();
                let c = Component { weight: w, mean: mean.clone(), cov_diag: var.clone() };
                let mix = DataDistribution::mixture(vec![c.clone(), c]).unwrap();
                let one = DataDistribution::gaussian(mean, var).unwrap();
                let x = Array1::from(x);
                let a = mix.posterior_mean(x.view(), v.alpha, v.sigma).unwrap();
                let b = one.posterior_mean(x.view(), v.alpha, v.sigma).unwrap();
                prop_assert!((&a - &b).iter().all(|d| d.abs() <= 1e-12));
            }

            #[test]
            fn mixture_posterior_lies_between_component_posteriors(
                x in point(), t in 0.01f64..0.99,
            ) {
                let v = NoiseSchedule::vp_linear().eval(t).unwrap();
                let d = gmm();
                let x = Array1::from(x);
                let m = d.posterior_mean(x.view(), v.alpha, v.sigma).unwrap();
                let parts: Vec<Array1<f64>> = d
                    .components()
                    .iter()
                    .map(|c| {
                        let g = DataDistribution::gaussian(c.mean.clone(), c.cov_diag.clone()).unwrap();
                        g.posterior_mean(x.view(), v.alpha, v.sigma).unwrap()
                    })
                    .collect();
                for j in 0..2 {
                    let lo = parts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
                    let hi = parts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(m[j] >= lo - 1e-12 && m[j] <= hi + 1e-12);
                }
            }
        }
    }
}
