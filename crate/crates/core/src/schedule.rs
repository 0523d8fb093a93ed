//! Noise schedules, κ-parameterizations, time grids and step-ratio strategies.
//!
//! A schedule maps diffusion time `t` to `(α_t, σ_t)` with log-SNR
//! `λ_t = log(α_t / σ_t)`. Solvers integrate in a transformed time `κ`:
//! `κ = σ/α` for noise prediction and `κ = α/σ` for data prediction, so
//! `log κ = -λ` and `log κ = λ` respectively.
//!
//! Grids are stored by index: `times[i] = t_i`, with `t_N` the start of
//! sampling and `t_0` the end. Step `i` moves from `t_i` to `t_{i-1}`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Result};

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Largest usable time of the cosine schedule; `α` vanishes at `t = 1`.
pub const COSINE_T_MAX: f64 = 0.9946;
/// Default end time for VP schedules.
pub const DEFAULT_T_END: f64 = 1e-3;

/// Ratio denominators below this are rejected as degenerate.
const RATIO_EPS: f64 = 1e-14;
/// Relative slack when clamping inverted times back into the domain.
const DOMAIN_SLACK: f64 = 1e-12;

/// Continuous-time noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// Variance preserving, linear β: `log α_t = -¼t²(β1-β0) - ½tβ0`.
    VpLinear { beta0: f64, beta1: f64 },
    /// Variance preserving, cosine `α_t` with offset [`COSINE_OFFSET`].
    VpCosine,
    /// Variance exploding, `α = 1`, `σ = t`.
    VeEdm { sigma_min: f64, sigma_max: f64 },
}

/// `(α_t, σ_t, λ_t)` at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl ScheduleValues {
    pub fn snr(&self) -> f64 {
        (2.0 * self.lambda).exp()
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::vp_linear()
    }
}

impl NoiseSchedule {
    pub fn vp_linear() -> Self {
        Self::VpLinear {
            beta0: 0.1,
            beta1: 20.0,
        }
    }

    pub fn edm() -> Self {
        Self::VeEdm {
            sigma_min: 0.002,
            sigma_max: 80.0,
        }
    }

    /// Check constructor invariants.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::VpLinear { beta0, beta1 } => {
                if !(beta0 > 0.0 && beta1 > beta0 && beta1.is_finite()) {
                    return Err(invalid(format!(
                        "vp_linear needs 0 < beta0 < beta1, got beta0={beta0}, beta1={beta1}"
                    )));
                }
            }
            Self::VpCosine => {}
            Self::VeEdm { sigma_min, sigma_max } => {
                if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
                    return Err(invalid(format!(
                        "ve_edm needs 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Largest valid time.
    pub fn t_max(&self) -> f64 {
        match *self {
            Self::VpLinear { .. } => 1.0,
            Self::VpCosine => COSINE_T_MAX,
            Self::VeEdm { sigma_max, .. } => sigma_max,
        }
    }

    /// Default `(t_start, t_end)` for sampling.
    pub fn default_span(&self) -> (f64, f64) {
        match *self {
            Self::VeEdm { sigma_min, sigma_max } => (sigma_max, sigma_min),
            _ => (self.t_max(), DEFAULT_T_END),
        }
    }

    pub fn is_variance_preserving(&self) -> bool {
        !matches!(self, Self::VeEdm { .. })
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t <= self.t_max()) || !t.is_finite() {
            return Err(domain(format!("t={t} outside (0, {}] for {self}", self.t_max())));
        }
        Ok(())
    }

    fn log_alpha(&self, t: f64) -> f64 {
        match *self {
            Self::VpLinear { beta0, beta1 } => -0.25 * t * t * (beta1 - beta0) - 0.5 * t * beta0,
            Self::VpCosine => {
                let s = COSINE_OFFSET;
                ((t + s) / (1.0 + s) * FRAC_PI_2).cos().ln() - (s / (1.0 + s) * FRAC_PI_2).cos().ln()
            }
            Self::VeEdm { .. } => 0.0,
        }
    }

    /// `(α_t, σ_t, λ_t)`; errors outside the valid domain.
    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        self.check_domain(t)?;
        let log_alpha = self.log_alpha(t);
        let (alpha, sigma) = match self {
            Self::VeEdm { .. } => (1.0, t),
            // σ² = 1 - α² without cancellation at small t.
            _ => (log_alpha.exp(), (-(2.0 * log_alpha).exp_m1()).sqrt()),
        };
        if !(sigma > 0.0) || !(alpha > 0.0) {
            return Err(domain(format!("alpha or sigma vanishes at t={t}")));
        }
        Ok(ScheduleValues {
            t,
            alpha,
            sigma,
            lambda: log_alpha - sigma.ln(),
        })
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.alpha)
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.sigma)
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.lambda)
    }

    pub fn snr(&self, t: f64) -> Result<f64> {
        Ok(self.eval(t)?.snr())
    }

    /// Inverse of `t ↦ λ_t`.
    pub fn t_from_lambda(&self, lambda: f64) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(domain(format!("non-finite lambda {lambda}")));
        }
        let t = match *self {
            Self::VpLinear { beta0, beta1 } => {
                // α² = 1/(1+e^{-2λ}) so -2 log α = softplus(-2λ).
                let l = softplus(-2.0 * lambda);
                2.0 * l / (beta0 + (beta0 * beta0 + 2.0 * (beta1 - beta0) * l).sqrt())
            }
            Self::VpCosine => {
                let s = COSINE_OFFSET;
                let log_alpha = -0.5 * softplus(-2.0 * lambda);
                let c = (log_alpha + (s / (1.0 + s) * FRAC_PI_2).cos().ln()).exp();
                2.0 * (1.0 + s) / PI * c.acos() - s
            }
            Self::VeEdm { .. } => (-lambda).exp(),
        };
        let t_max = self.t_max();
        let t = if t > t_max && t <= t_max * (1.0 + DOMAIN_SLACK) {
            t_max
        } else {
            t
        };
        self.check_domain(t)?;
        Ok(t)
    }
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VpLinear { beta0, beta1 } => write!(f, "vp_linear(beta0={beta0}, beta1={beta1})"),
            Self::VpCosine => write!(f, "vp_cosine"),
            Self::VeEdm { sigma_min, sigma_max } => write!(f, "ve_edm(sigma_min={sigma_min}, sigma_max={sigma_max})"),
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// What the model predicts, which fixes the κ-space a solver works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// `ε_θ`; `f(x) = x/α`, `κ = σ/α`.
    NoisePrediction,
    /// `x_θ`; `f(x) = x/σ`, `κ = α/σ`.
    DataPrediction,
}

impl Parameterization {
    pub fn log_kappa(self, v: &ScheduleValues) -> f64 {
        match self {
            Self::NoisePrediction => -v.lambda,
            Self::DataPrediction => v.lambda,
        }
    }

    pub fn kappa(self, v: &ScheduleValues) -> f64 {
        self.log_kappa(v).exp()
    }

    /// Divisor in `f(x) = x / scale`: `α` for noise prediction, `σ` for data prediction.
    pub fn state_scale(self, v: &ScheduleValues) -> f64 {
        match self {
            Self::NoisePrediction => v.alpha,
            Self::DataPrediction => v.sigma,
        }
    }

    /// `κ(t)` for a schedule.
    pub fn kappa_at(self, schedule: &NoiseSchedule, t: f64) -> Result<f64> {
        Ok(self.kappa(&schedule.eval(t)?))
    }

    /// Inverse of `t ↦ κ(t)`.
    pub fn t_from_kappa(self, schedule: &NoiseSchedule, kappa: f64) -> Result<f64> {
        if !(kappa > 0.0) {
            return Err(domain(format!("kappa must be positive, got {kappa}")));
        }
        let lambda = match self {
            Self::NoisePrediction => -kappa.ln(),
            Self::DataPrediction => kappa.ln(),
        };
        schedule.t_from_lambda(lambda)
    }
}

/// Step-placement rule for [`make_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum GridPolicy {
    /// Uniform in `t`.
    Uniform,
    /// Uniform in `λ`.
    LogSnrUniform,
    /// Karras spacing in `σ/α` with exponent `rho`.
    EdmKarras { rho: f64 },
}

impl fmt::Display for GridPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => write!(f, "uniform"),
            Self::LogSnrUniform => write!(f, "logsnr"),
            Self::EdmKarras { rho } => write!(f, "edm(rho={rho})"),
        }
    }
}

/// Decreasing sequence of times `t_N > … > t_0`, stored as `times[i] = t_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
    policy: GridPolicy,
}

impl TimeGrid {
    /// Wrap explicit times given in sampling order (`t_N` first).
    pub fn from_sampling_order(schedule: &NoiseSchedule, sampling_order: &[f64], policy: GridPolicy) -> Result<Self> {
        if sampling_order.len() < 2 {
            return Err(invalid("a grid needs at least two times"));
        }
        for w in sampling_order.windows(2) {
            if !(w[0] > w[1]) {
                return Err(invalid(format!(
                    "grid must be strictly decreasing, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for &t in sampling_order {
            schedule.eval(t)?;
        }
        let mut times = sampling_order.to_vec();
        times.reverse();
        Ok(Self { times, policy })
    }

    /// Number of steps `N`.
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `t_i`.
    pub fn t(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Times indexed by `i`, so `times()[0] = t_0` is the end time.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn policy(&self) -> GridPolicy {
        self.policy
    }

    pub fn t_start(&self) -> f64 {
        self.times[self.n_steps()]
    }

    pub fn t_end(&self) -> f64 {
        self.times[0]
    }

    fn check_step(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n_steps() {
            return Err(invalid(format!("step index {i} outside 1..={}", self.n_steps())));
        }
        Ok(())
    }

    /// `h_{t_i} = κ(t_{i-1}) - κ(t_i)`.
    pub fn h_kappa(&self, schedule: &NoiseSchedule, p: Parameterization, i: usize) -> Result<f64> {
        self.check_step(i)?;
        Ok(p.kappa_at(schedule, self.t(i - 1))? - p.kappa_at(schedule, self.t(i))?)
    }

    /// `h_{λ_i} = λ(t_{i-1}) - λ(t_i)`.
    pub fn h_lambda(&self, schedule: &NoiseSchedule, i: usize) -> Result<f64> {
        self.check_step(i)?;
        Ok(schedule.lambda(self.t(i - 1))? - schedule.lambda(self.t(i))?)
    }
}

/// Build an `n`-step grid from `t_start` down to `t_end`.
pub fn make_grid(schedule: &NoiseSchedule, policy: GridPolicy, n: usize, t_start: f64, t_end: f64) -> Result<TimeGrid> {
    schedule.validate()?;
    if n == 0 {
        return Err(invalid("grid needs at least one step"));
    }
    if !(t_start > t_end) {
        return Err(invalid(format!("t_start={t_start} must exceed t_end={t_end}")));
    }
    schedule.eval(t_start)?;
    schedule.eval(t_end)?;
    let nf = n as f64;
    let mut order = Vec::with_capacity(n + 1);
    order.push(t_start);
    match policy {
        GridPolicy::Uniform => {
            for j in 1..n {
                order.push(t_start + (j as f64 / nf) * (t_end - t_start));
            }
        }
        GridPolicy::LogSnrUniform => {
            let l0 = schedule.lambda(t_start)?;
            let l1 = schedule.lambda(t_end)?;
            for j in 1..n {
                order.push(schedule.t_from_lambda(l0 + (j as f64 / nf) * (l1 - l0))?);
            }
        }
        GridPolicy::EdmKarras { rho } => {
            if !(rho > 0.0) {
                return Err(invalid(format!("rho must be positive, got {rho}")));
            }
            // Karras spacing is defined on σ/α = e^{-λ}, which is σ itself for VE.
            let s_max = (-schedule.lambda(t_start)?).exp().powf(1.0 / rho);
            let s_min = (-schedule.lambda(t_end)?).exp().powf(1.0 / rho);
            for j in 1..n {
                let s = (s_max + (j as f64 / nf) * (s_min - s_max)).powf(rho);
                order.push(schedule.t_from_lambda(-s.ln())?);
            }
        }
    }
    order.push(t_end);
    TimeGrid::from_sampling_order(schedule, &order, policy)
}

/// How the multistep ratio `r_i` between consecutive steps is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum RStrategy {
    /// Ratio of consecutive log-κ (equivalently log-SNR) step sizes.
    #[default]
    LogSnr,
    /// Ratio of normalised variance drops.
    NormVar,
    /// Ratio of `arctan` of consecutive κ-steps.
    ArcTan,
    /// Geometric mean of `NormVar` and `ArcTan`.
    Refined,
    /// `LogSnr` scaled by agreement between the gradient direction and the state.
    Confidence { beta: f64 },
}

impl fmt::Display for RStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LogSnr => write!(f, "logsnr"),
            Self::NormVar => write!(f, "normvar"),
            Self::ArcTan => write!(f, "arctan"),
            Self::Refined => write!(f, "refined"),
            Self::Confidence { beta } => write!(f, "confidence(beta={beta})"),
        }
    }
}

/// Extra inputs for [`RStrategy::Confidence`].
#[derive(Debug, Clone, Copy)]
pub struct RContext<'a> {
    /// Direction of the backward difference `B_θ(t_i, t_{i+1})`.
    pub direction: ArrayView1<'a, f64>,
    /// Current state `x_{t_i}`.
    pub state: ArrayView1<'a, f64>,
}

fn checked_ratio(num: f64, den: f64, what: &str) -> Result<f64> {
    if !(den.abs() >= RATIO_EPS) || !num.is_finite() {
        return Err(domain(format!("{what}: denominator {den:e} below {RATIO_EPS:e}")));
    }
    Ok(num / den)
}

/// `(log κ_i - log κ_{i+1}) / (log κ_{i-1} - log κ_i)`.
pub fn ratio_logsnr(log_k_prev: f64, log_k_cur: f64, log_k_next: f64) -> Result<f64> {
    checked_ratio(log_k_cur - log_k_next, log_k_prev - log_k_cur, "logsnr ratio")
}

fn relative_drop(noisier: f64, cleaner: f64) -> f64 {
    (noisier - cleaner).abs() / noisier.max(cleaner)
}

/// Ratio of normalised variance drops; arguments are `Var(t_{i-1}), Var(t_i), Var(t_{i+1})`.
pub fn ratio_normvar(var_prev: f64, var_cur: f64, var_next: f64) -> Result<f64> {
    if !(var_prev > 0.0 && var_cur > 0.0 && var_next > 0.0) {
        return Err(domain("normvar ratio needs positive variances"));
    }
    checked_ratio(
        relative_drop(var_next, var_cur),
        relative_drop(var_cur, var_prev),
        "normvar ratio",
    )
}

/// `arctan(h_{t_{i+1}}) / arctan(h_{t_i})`.
pub fn ratio_arctan(h_cur: f64, h_next: f64) -> Result<f64> {
    checked_ratio(h_next.atan(), h_cur.atan(), "arctan ratio")
}

/// `clamp(1 + β·cos(direction, state), 0.5, 1.5)`.
pub fn confidence_weight(beta: f64, ctx: &RContext<'_>) -> f64 {
    let nd = ctx.direction.dot(&ctx.direction).sqrt();
    let ns = ctx.state.dot(&ctx.state).sqrt();
    let cos = if nd > 0.0 && ns > 0.0 {
        ctx.direction.dot(&ctx.state) / (nd * ns)
    } else {
        0.0
    };
    (1.0 + beta * cos).clamp(0.5, 1.5)
}

/// Multistep ratio `r_i` for step `i` (needs `1 <= i < N`).
pub fn step_ratio(
    strategy: RStrategy,
    grid: &TimeGrid,
    schedule: &NoiseSchedule,
    p: Parameterization,
    i: usize,
    context: Option<&RContext<'_>>,
) -> Result<f64> {
    if i == 0 || i >= grid.n_steps() {
        return Err(invalid(format!(
            "step ratio needs 1 <= i < N, got i={i}, N={}",
            grid.n_steps()
        )));
    }
    let prev = schedule.eval(grid.t(i - 1))?;
    let cur = schedule.eval(grid.t(i))?;
    let next = schedule.eval(grid.t(i + 1))?;
    let logsnr = || ratio_logsnr(p.log_kappa(&prev), p.log_kappa(&cur), p.log_kappa(&next));
    let normvar = || ratio_normvar(prev.sigma.powi(2), cur.sigma.powi(2), next.sigma.powi(2));
    let arctan = || ratio_arctan(p.kappa(&prev) - p.kappa(&cur), p.kappa(&cur) - p.kappa(&next));
    match strategy {
        RStrategy::LogSnr => logsnr(),
        RStrategy::NormVar => normvar(),
        RStrategy::ArcTan => arctan(),
        RStrategy::Refined => {
            let prod = normvar()? * arctan()?;
            if !(prod > 0.0) {
                return Err(domain(format!("refined ratio of non-positive product {prod}")));
            }
            Ok(prod.sqrt())
        }
        RStrategy::Confidence { beta } => {
            let ctx = context.ok_or_else(|| invalid("confidence ratio needs a gradient context"))?;
            Ok(logsnr()? * confidence_weight(beta, ctx))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::assert_close;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn vp_linear_endpoint_alpha() {
        let s = NoiseSchedule::vp_linear();
        // log α(1) = -¼·19.9 - ½·0.1 = -5.025
        assert_close(s.alpha(1.0).unwrap(), (-5.025f64).exp(), 1e-15);
        assert_close(s.alpha(1.0).unwrap(), 6.5716e-3, 1e-6);
    }

    #[test]
    fn vp_identity_holds() {
        for s in [NoiseSchedule::vp_linear(), NoiseSchedule::VpCosine] {
            for t in [1e-4, 0.01, 0.3, 0.7, 0.99] {
                let v = s.eval(t).unwrap();
                assert_close(v.alpha.powi(2) + v.sigma.powi(2), 1.0, 1e-14);
            }
        }
    }

    #[test]
    fn ve_values() {
        let s = NoiseSchedule::edm();
        let v = s.eval(2.0).unwrap();
        assert_eq!(v.alpha, 1.0);
        assert_eq!(v.sigma, 2.0);
        assert_close(v.lambda, -(2.0f64.ln()), 1e-15);
    }

    #[test]
    fn rejects_out_of_domain() {
        let s = NoiseSchedule::vp_linear();
        assert!(matches!(s.eval(-0.1), Err(crate::Error::Domain(_))));
        assert!(matches!(s.eval(0.0), Err(crate::Error::Domain(_))));
        assert!(matches!(s.eval(1.5), Err(crate::Error::Domain(_))));
        assert!(NoiseSchedule::VpCosine.eval(0.999).is_err());
    }

    #[test]
    fn kappa_signs() {
        let s = NoiseSchedule::vp_linear();
        let v = s.eval(0.5).unwrap();
        assert_close(Parameterization::NoisePrediction.kappa(&v), v.sigma / v.alpha, 1e-14);
        assert_close(Parameterization::DataPrediction.kappa(&v), v.alpha / v.sigma, 1e-14);
    }

    #[test]
    fn logsnr_grid_is_uniform_in_lambda() {
        let s = NoiseSchedule::vp_linear();
        let g = make_grid(&s, GridPolicy::LogSnrUniform, 10, 1.0, 1e-3).unwrap();
        let h0 = g.h_lambda(&s, 1).unwrap();
        for i in 1..=10 {
            assert_close(g.h_lambda(&s, i).unwrap(), h0, 1e-9);
        }
    }

    #[test]
    fn edm_grid_matches_karras_formula() {
        let s = NoiseSchedule::edm();
        let g = make_grid(&s, GridPolicy::EdmKarras { rho: 7.0 }, 10, 80.0, 0.002).unwrap();
        let (a, b) = (80f64.powf(1.0 / 7.0), 0.002f64.powf(1.0 / 7.0));
        for j in 0..=10 {
            let expected = (a + j as f64 / 10.0 * (b - a)).powi(7);
            let got = g.t(10 - j);
            assert!(
                (got - expected).abs() <= 1e-12 * expected.max(1.0),
                "{got} vs {expected}"
            );
        }
    }

    #[test]
    fn single_step_grid() {
        let s = NoiseSchedule::vp_linear();
        let g = make_grid(&s, GridPolicy::Uniform, 1, 1.0, 1e-3).unwrap();
        assert_eq!(g.times(), &[1e-3, 1.0]);
    }

    #[test]
    fn grid_rejects_bad_inputs() {
        let s = NoiseSchedule::vp_linear();
        assert!(make_grid(&s, GridPolicy::Uniform, 0, 1.0, 1e-3).is_err());
        assert!(make_grid(&s, GridPolicy::Uniform, 5, 1e-3, 1.0).is_err());
        assert!(make_grid(&s, GridPolicy::Uniform, 5, 2.0, 1e-3).is_err());
    }

    #[test]
    fn h_kappa_sign_follows_parameterization() {
        let s = NoiseSchedule::vp_linear();
        let g = make_grid(&s, GridPolicy::LogSnrUniform, 8, 1.0, 1e-3).unwrap();
        for i in 1..=8 {
            assert!(g.h_kappa(&s, Parameterization::DataPrediction, i).unwrap() > 0.0);
            assert!(g.h_kappa(&s, Parameterization::NoisePrediction, i).unwrap() < 0.0);
        }
    }

    #[test]
    fn normvar_hand_example() {
        assert_close(ratio_normvar(0.25, 0.5, 1.0).unwrap(), 1.0, 1e-15);
    }

    #[test]
    fn ratios_on_uniform_steps_are_one() {
        assert_close(ratio_logsnr(3.0, 2.0, 1.0).unwrap(), 1.0, 1e-15);
        assert_close(ratio_arctan(0.7, 0.7).unwrap(), 1.0, 1e-15);
    }

    #[test]
    fn degenerate_ratio_is_rejected() {
        assert!(ratio_logsnr(1.0, 1.0, 0.5).is_err());
        assert!(ratio_arctan(0.0, 0.3).is_err());
    }

    #[test]
    fn confidence_weight_clamps() {
        let d = array![1.0, 0.0];
        let x = array![2.0, 0.0];
        let ctx = RContext {
            direction: d.view(),
            state: x.view(),
        };
        assert_close(confidence_weight(0.5, &ctx), 1.5, 0.0);
        assert_close(confidence_weight(10.0, &ctx), 1.5, 0.0);
        let xn = array![-2.0, 0.0];
        let ctx = RContext {
            direction: d.view(),
            state: xn.view(),
        };
        assert_close(confidence_weight(0.5, &ctx), 0.5, 0.0);
    }

    #[test]
    fn step_ratio_logsnr_on_logsnr_grid() {
        let s = NoiseSchedule::vp_linear();
        let g = make_grid(&s, GridPolicy::LogSnrUniform, 10, 1.0, 1e-3).unwrap();
        for i in 1..10 {
            let r = step_ratio(RStrategy::LogSnr, &g, &s, Parameterization::DataPrediction, i, None).unwrap();
            assert_close(r, 1.0, 1e-9);
        }
        assert!(step_ratio(RStrategy::LogSnr, &g, &s, Parameterization::DataPrediction, 10, None).is_err());
        assert!(step_ratio(
            RStrategy::Confidence { beta: 0.5 },
            &g,
            &s,
            Parameterization::DataPrediction,
            3,
            None
        )
        .is_err());
    }

    #[test]
    fn all_strategies_are_positive_on_default_grid() {
        let s = NoiseSchedule::vp_linear();
        let g = make_grid(&s, GridPolicy::EdmKarras { rho: 7.0 }, 12, 1.0, 1e-3).unwrap();
        let d = array![0.3, -0.2];
        let x = array![1.0, 1.0];
        let ctx = RContext {
            direction: d.view(),
            state: x.view(),
        };
        for p in [Parameterization::DataPrediction, Parameterization::NoisePrediction] {
            for strat in [
                RStrategy::LogSnr,
                RStrategy::NormVar,
                RStrategy::ArcTan,
                RStrategy::Refined,
                RStrategy::Confidence { beta: 0.5 },
            ] {
                for i in 1..12 {
                    let r = step_ratio(strat, &g, &s, p, i, Some(&ctx)).unwrap();
                    assert!(r > 0.0 && r.is_finite(), "{strat} {p:?} {i}: {r}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn vp_alpha_decreasing_sigma_increasing(a in 1e-4f64..0.99, b in 1e-4f64..0.99) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for s in [NoiseSchedule::vp_linear(), NoiseSchedule::VpCosine] {
                let (vl, vh) = (s.eval(lo).unwrap(), s.eval(hi).unwrap());
                prop_assert!(vl.alpha >= vh.alpha);
                prop_assert!(vl.sigma <= vh.sigma);
                prop_assert!(vl.lambda > vh.lambda);
            }
        }

        #[test]
        fn lambda_roundtrip(t in 1e-4f64..0.99) {
            for s in [NoiseSchedule::vp_linear(), NoiseSchedule::VpCosine, NoiseSchedule::edm()] {
                let back = s.t_from_lambda(s.lambda(t).unwrap()).unwrap();
                prop_assert!((back - t).abs() <= 1e-9 * t.max(1e-2), "{} {} {}", s, t, back);
            }
        }

        #[test]
        fn grids_strictly_decrease(n in 1usize..60, which in 0usize..3) {
            let s = NoiseSchedule::vp_linear();
            let policy = [GridPolicy::Uniform, GridPolicy::LogSnrUniform, GridPolicy::EdmKarras { rho: 7.0 }][which];
            let g = make_grid(&s, policy, n, 1.0, 1e-3).unwrap();
            prop_assert_eq!(g.n_steps(), n);
            for w in g.times().windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }
    }
}
