//! Closed-form minimisers of the quadratic surrogates that set the EVODiff
//! weights `ζ` and `η`, their sigmoid maps, and a brute-force grid search.
//!
//! With `D` the probe difference, `P̃ = P - σh·m_t` and `σh` the scaled step,
//! the ζ surrogate is `‖P̃ - σh ζ D‖²`, minimised at `(D·P̃)/(σh D·D)`.
//! With `B̃ = B1 - B2`, the η surrogate is `‖(1-η)B1 + ηB2‖²`, minimised at
//! `(B̃·B1)/(B̃·B̃)`. The literal closed forms differ from these minimisers,
//! `ζ` by sign and `η` as `1 - η_lit`; [`OptFormula`] selects between them.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Norms below this make the surrogate degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Which closed form to use for `ζ*` or `η*`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptFormula {
    /// Literal forms `ζ* = -(D·P̃)/(σh D·D)`, `η* = -(B̃·B2)/(B̃·B̃)`.
    Literal,
    /// The true surrogate minimisers.
    AnalyticMin,
}

/// Inputs of the ζ surrogate.
#[derive(Debug, Clone, Copy)]
pub struct ZetaInputs<'a> {
    /// `P(x_{t_{i-1}})`, the summed backward/forward reconstruction.
    pub p: ArrayView1<'a, f64>,
    /// `D = x_θ(x̃_{t_{i-1}}, t_{i-1}) - x_θ(x̃_{t_i}, t_i)`.
    pub d: ArrayView1<'a, f64>,
    /// `m_t = x_θ(x̃_{t_i}, t_i)`.
    pub m_t: ArrayView1<'a, f64>,
    /// `σ_{t_i} h_{t_i}`.
    pub sigma_h: f64,
}

impl ZetaInputs<'_> {
    /// `P̃ = P - σh·m_t`.
    pub fn p_tilde(&self) -> Array1<f64> {
        &self.p - &(&self.m_t * self.sigma_h)
    }

    /// `‖P̃ - σh ζ D‖²`.
    pub fn objective(&self, zeta: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.p.len() {
            let r = self.p[j] - self.sigma_h * self.m_t[j] - self.sigma_h * zeta * self.d[j];
            acc += r * r;
        }
        acc
    }
}

/// Inputs of the η surrogate.
#[derive(Debug, Clone, Copy)]
pub struct EtaInputs<'a> {
    /// Gradient from the current and probe evaluations.
    pub b1: ArrayView1<'a, f64>,
    /// Gradient from the current and previous evaluations.
    pub b2: ArrayView1<'a, f64>,
}

impl EtaInputs<'_> {
    /// `‖(1-η)B1 + ηB2‖²`.
    pub fn objective(&self, eta: f64) -> f64 {
        let mut acc = 0.0;
        for j in 0..self.b1.len() {
            let r = (1.0 - eta) * self.b1[j] + eta * self.b2[j];
            acc += r * r;
        }
        acc
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

fn degenerate(norm_sq: f64) -> Result<()> {
    let norm = norm_sq.sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateDirection {
            norm,
            threshold: DEGENERATE_NORM,
        });
    }
    Ok(())
}

/// Closed-form `ζ*`.
pub fn zeta_star(inputs: &ZetaInputs<'_>, formula: OptFormula) -> Result<f64> {
    check_len(inputs.p.len(), inputs.d.len())?;
    check_len(inputs.p.len(), inputs.m_t.len())?;
    if inputs.sigma_h == 0.0 || !inputs.sigma_h.is_finite() {
        return Err(invalid(format!(
            "sigma_h must be finite and non-zero, got {}",
            inputs.sigma_h
        )));
    }
    let dd = inputs.d.dot(&inputs.d);
    degenerate(dd)?;
    let min = inputs.d.dot(&inputs.p_tilde()) / (inputs.sigma_h * dd);
    Ok(match formula {
        OptFormula::AnalyticMin => min,
        OptFormula::Literal => -min,
    })
}

/// Closed-form `η*`.
pub fn eta_star(inputs: &EtaInputs<'_>, formula: OptFormula) -> Result<f64> {
    check_len(inputs.b1.len(), inputs.b2.len())?;
    let bt = &inputs.b1 - &inputs.b2;
    let bb = bt.dot(&bt);
    degenerate(bb)?;
    Ok(match formula {
        OptFormula::AnalyticMin => bt.dot(&inputs.b1) / bb,
        OptFormula::Literal => -bt.dot(&inputs.b2) / bb,
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How a raw `ζ*` is squashed into `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaMap {
    /// `sigmoid(-(|ζ*| - μ))`.
    Plain,
    /// `sigmoid(-(σ_{t_i}/σ_{t_{i+1}})(|ζ*| - μ))`.
    SigmaScaled,
}

// Largest double below one; keeps saturated sigmoids inside the open interval.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Map `ζ*` into `(0, 1)`. `sigma_ratio` is only read by [`ZetaMap::SigmaScaled`].
pub fn map_zeta(raw: f64, mu: f64, map: ZetaMap, sigma_ratio: f64) -> f64 {
    let scale = match map {
        ZetaMap::Plain => 1.0,
        ZetaMap::SigmaScaled => sigma_ratio,
    };
    sigmoid(-scale * (raw.abs() - mu)).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

/// Map `η*` into `(0.5, 1)`: `sigmoid(|η*|)`.
pub fn map_eta(raw: f64) -> f64 {
    sigmoid(raw.abs()).clamp(0.5 + f64::EPSILON / 2.0, BELOW_ONE)
}

/// Surrogate to minimise by grid search.
#[derive(Debug, Clone, Copy)]
pub enum Surrogate<'a> {
    Zeta(ZetaInputs<'a>),
    Eta(EtaInputs<'a>),
}

impl Surrogate<'_> {
    pub fn eval(&self, param: f64) -> f64 {
        match self {
            Self::Zeta(z) => z.objective(param),
            Self::Eta(e) => e.objective(param),
        }
    }
}

/// Result of [`grid_search_min`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSearchResult {
    pub argmin: f64,
    pub value: f64,
    /// The objective did not vary over the grid; `argmin` is the lower bound.
    pub flat: bool,
}

/// Evaluate the surrogate on `lo, lo+step, …, hi` and return the first minimiser.
pub fn grid_search_min(objective: &Surrogate<'_>, lo: f64, hi: f64, step: f64) -> Result<GridSearchResult> {
    if !(hi > lo && step > 0.0) {
        return Err(invalid(format!("bad search range [{lo}, {hi}] step {step}")));
    }
    let n = ((hi - lo) / step).round() as usize;
    let (mut best, mut best_v) = (lo, objective.eval(lo));
    let mut worst_v = best_v;
    for k in 1..=n {
        let p = lo + k as f64 * step;
        let v = objective.eval(p);
        if v < best_v {
            best = p;
            best_v = v;
        }
        worst_v = worst_v.max(v);
    }
    let flat = worst_v - best_v <= 1e-12 * (1.0 + best_v.abs());
    Ok(GridSearchResult {
        argmin: if flat { lo } else { best },
        value: best_v,
        flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::assert_close;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zeta_star_hand_example() {
        // P̃ = P - σh m_t = [0.6, 0] with σh = 1 and D = [1, 0]: minimiser 0.6.
        let p = array![1.0, 0.0];
        let m = array![0.4, 0.0];
        let d = array![1.0, 0.0];
        let z = ZetaInputs {
            p: p.view(),
            d: d.view(),
            m_t: m.view(),
            sigma_h: 1.0,
        };
        assert_close(zeta_star(&z, OptFormula::AnalyticMin).unwrap(), 0.6, 1e-15);
        assert_close(zeta_star(&z, OptFormula::Literal).unwrap(), -0.6, 1e-15);
    }

    #[test]
    fn eta_star_hand_example() {
        let b1 = array![1.0, 0.0];
        let b2 = array![0.0, 1.0];
        let e = EtaInputs {
            b1: b1.view(),
            b2: b2.view(),
        };
        // B̃ = [1,-1]: analytic 1/2, literal -(-1)/2 = 1/2.
        assert_close(eta_star(&e, OptFormula::AnalyticMin).unwrap(), 0.5, 1e-15);
        assert_close(eta_star(&e, OptFormula::Literal).unwrap(), 0.5, 1e-15);
    }

    #[test]
    fn degenerate_directions_error() {
        let z0 = array![0.0, 0.0];
        let p = array![1.0, 2.0];
        let z = ZetaInputs {
            p: p.view(),
            d: z0.view(),
            m_t: p.view(),
            sigma_h: 1.0,
        };
        assert!(matches!(
            zeta_star(&z, OptFormula::Literal),
            Err(Error::DegenerateDirection { .. })
        ));
        let e = EtaInputs {
            b1: p.view(),
            b2: p.view(),
        };
        assert!(matches!(
            eta_star(&e, OptFormula::AnalyticMin),
            Err(Error::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn map_values() {
        assert_close(map_zeta(0.5, 0.5, ZetaMap::Plain, 1.0), 0.5, 1e-15);
        assert_close(map_eta(0.0), 0.5, 1e-15);
        assert!(map_eta(0.0) > 0.5);
        assert!(map_eta(1e6) < 1.0);
        assert!(map_zeta(1e6, 0.5, ZetaMap::Plain, 1.0) > 0.0);
        assert_close(map_zeta(0.8, 0.5, ZetaMap::SigmaScaled, 2.0), sigmoid(-0.6), 1e-15);
    }

    #[test]
    fn grid_search_finds_known_vertex() {
        let p = array![0.3];
        let m = array![0.0];
        let d = array![1.0];
        let z = Surrogate::Zeta(ZetaInputs {
            p: p.view(),
            d: d.view(),
            m_t: m.view(),
            sigma_h: 1.0,
        });
        let r = grid_search_min(&z, -5.0, 5.0, 1e-4).unwrap();
        assert!((r.argmin - 0.3).abs() <= 1e-4);
        assert!(!r.flat);
    }

    #[test]
    fn flat_objective_is_flagged() {
        let b = array![1.0, 1.0];
        let e = Surrogate::Eta(EtaInputs {
            b1: b.view(),
            b2: b.view(),
        });
        let r = grid_search_min(&e, -5.0, 5.0, 1e-2).unwrap();
        assert!(r.flat);
        assert_eq!(r.argmin, -5.0);
    }

    fn vec8() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 8)
    }

    proptest! {
        #[test]
        fn literal_and_analytic_zeta_differ_by_sign(p in vec8(), d in vec8(), m in vec8(), sh in 0.1f64..3.0) {
            let (p, d, m) = (Array1::from(p), Array1::from(d), Array1::from(m));
            prop_assume!(d.dot(&d).sqrt() > 1e-3);
            let z = ZetaInputs { p: p.view(), d: d.view(), m_t: m.view(), sigma_h: sh };
            let a = zeta_star(&z, OptFormula::AnalyticMin).unwrap();
            let l = zeta_star(&z, OptFormula::Literal).unwrap();
            prop_assert_eq!(a.abs(), l.abs());
            prop_assert!(z.objective(a) <= z.objective(a + 1e-3) + 1e-12);
            prop_assert!(z.objective(a) <= z.objective(a - 1e-3) + 1e-12);
        }

        #[test]
        fn analytic_eta_is_one_minus_literal(b1 in vec8(), b2 in vec8()) {
            let (b1, b2) = (Array1::from(b1), Array1::from(b2));
            let bt = &b1 - &b2;
            prop_assume!(bt.dot(&bt).sqrt() > 1e-3);
            let e = EtaInputs { b1: b1.view(), b2: b2.view() };
            let a = eta_star(&e, OptFormula::AnalyticMin).unwrap();
            let l = eta_star(&e, OptFormula::Literal).unwrap();
            // B̃·B1 = B̃·B̃ + B̃·B2, so the minimiser is 1 + B̃·B2/B̃·B̃ = 1 - literal.
            prop_assert!((a - (1.0 - l)).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn maps_stay_in_range(raw in -1e3f64..1e3, mu in 0.0f64..1.0, ratio in 0.5f64..2.0) {
            let z = map_zeta(raw, mu, ZetaMap::Plain, 1.0);
            let zs = map_zeta(raw, mu, ZetaMap::SigmaScaled, ratio);
            prop_assert!(z > 0.0 && z < 1.0);
            prop_assert!(zs > 0.0 && zs < 1.0);
            let e = map_eta(raw);
            prop_assert!(e > 0.5 && e < 1.0);
        }
    }
}
