//! Checks of the standing hypotheses on a map/potential pair, and the
//! derived constants (expansion, hyperbolicity exponent, frequency
//! threshold, admissible variation weight).

use super::MapModel;
use crate::error::Result;
use crate::potential::Potential;
use serde::{Deserialize, Serialize};

/// Optional overrides for the derived constants. `None` means "pick the
/// default".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidatorParams {
    pub gamma: Option<f64>,
    pub c: Option<f64>,
    pub eps0: Option<f64>,
    pub theta: Option<f64>,
    /// Multiplier of `log L` in the oscillation condition; the model
    /// theory leaves it unspecified.
    pub m: f64,
    /// Orbit length used to measure the density of hyperbolic times.
    pub tau_horizon: usize,
    /// Number of starting points for the density estimate.
    pub tau_points: usize,
}

impl Default for ValidatorParams {
    fn default() -> Self {
        ValidatorParams {
            gamma: None,
            c: None,
            eps0: None,
            theta: None,
            m: 1.0,
            tau_horizon: 40,
            tau_points: 512,
        }
    }
}

/// A named inequality with its slack (`> 0` when it holds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub holds: bool,
    /// `None` when the condition is vacuous.
    pub margin: Option<f64>,
}

impl Check {
    fn from_margin(margin: f64) -> Self {
        Check { holds: margin > 0.0, margin: Some(margin) }
    }

    fn vacuous() -> Self {
        Check { holds: true, margin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub deg: u32,
    /// Number of non-expanding blocks.
    pub q: usize,
    /// Number of expanding blocks.
    pub p: usize,
    pub covering_time: Option<usize>,
    /// `min |f'|` over the expanding blocks.
    pub sigma: f64,
    /// `max(1, sup 1/|f'|)` over the non-expanding blocks.
    #[serde(rename = "L")]
    pub big_l: f64,
    pub alpha: f64,
    pub oscillation: f64,
    pub c: f64,
    pub gamma: f64,
    /// Empirical density of hyperbolic times on orbits outside the
    /// frequency set.
    pub tau: f64,
    /// `2c / log L`, the lower bound the theory asserts for `tau`; absent
    /// when `L = 1`.
    pub tau_bound: Option<f64>,
    pub tau_meets_bound: Option<bool>,
    pub eps0: f64,
    pub m: f64,
    pub m_is_placeholder: bool,
    pub holds_h1: bool,
    pub h2: Check,
    pub h3a: Check,
    pub h3b: Check,
    /// `sigma^-(1-gamma) < e^-2c < 1`.
    pub relation_sigma: Check,
    /// `log q + c alpha + eps0 < log deg`.
    pub relation_expansion: Check,
    /// `sigma^-(1-gamma) L^gamma < e^-2c`.
    pub relation_l: Check,
    /// `(log L)^2 <= 2 c^2`.
    pub relation_l_squared: Check,
    /// `osc < log deg - log q - m log L`.
    pub relation_oscillation: Check,
    pub star_feasible: bool,
    pub theta_interval: (f64, f64),
    pub theta: f64,
    pub warnings: Vec<String>,
}

impl HypothesisReport {
    /// Every hypothesis and relation holds.
    pub fn all_hold(&self) -> bool {
        self.holds_h1
            && self.h2.holds
            && self.h3a.holds
            && self.h3b.holds
            && self.relation_sigma.holds
            && self.relation_expansion.holds
            && self.relation_l.holds
            && self.relation_oscillation.holds
            && self.star_feasible
    }
}

/// `(sigma, L)` from exact derivative ranges on each element.
pub(crate) fn expansion_constants(model: &MapModel) -> (f64, f64) {
    let mut sigma = f64::INFINITY;
    let mut big_l = 1.0_f64;
    for i in 0..model.alphabet_size() {
        let (a, b) = model.element(i);
        let (lo, _) = model.deriv_bounds(a, b);
        if model.is_non_expanding(i) {
            big_l = big_l.max(1.0 / lo);
        } else {
            sigma = sigma.min(lo);
        }
    }
    (sigma, big_l)
}

pub fn validate_hypotheses(
    model: &MapModel,
    potential: &Potential,
    alpha: f64,
    params: &ValidatorParams,
) -> Result<HypothesisReport> {
    let mut warnings = Vec::new();
    let deg = model.degree();
    let log_deg = (deg as f64).ln();
    let q = model.non_expanding_count();
    let p = model.alphabet_size() - q;
    let log_q = if q == 0 { None } else { Some((q as f64).ln()) };
    let lq = log_q.unwrap_or(0.0);
    let osc = potential.oscillation();
    if (alpha - potential.alpha()).abs() > 1e-12 {
        warnings.push(format!(
            "requested exponent {alpha} differs from the potential's certified exponent {}",
            potential.alpha()
        ));
    }

    let (sigma, big_l) = expansion_constants(model);
    let log_s = sigma.ln();
    let log_l = big_l.ln();
    let h2 = if p == 0 {
        Check { holds: false, margin: None }
    } else {
        Check::from_margin(sigma - 1.0)
    };
    if !h2.holds {
        warnings.push(format!("expanding blocks are not uniformly expanding (sigma = {sigma:.6})"));
    }

    let h3a = match log_q {
        None => Check::vacuous(),
        Some(l) => Check::from_margin(log_deg - l - osc),
    };

    let eps0 = match params.eps0 {
        Some(e) => e,
        None => {
            let e = 0.5 * (log_deg - lq - osc);
            if e > 0.0 {
                e
            } else {
                warnings.push("no positive eps0 is compatible with the oscillation; using 1e-3".into());
                1e-3
            }
        }
    };

    let gamma = match params.gamma {
        Some(g) => g,
        None if q == 0 => 0.5,
        None if log_s > 0.0 => 0.5 * log_s / (log_s + log_l),
        None => 0.5,
    };

    let c = match params.c {
        Some(c) => c,
        None => {
            let lower = log_l / std::f64::consts::SQRT_2;
            let upper = (((1.0 - gamma) * log_s - gamma * log_l) / 2.0).min((log_deg - lq - eps0) / alpha);
            if upper > lower && upper > 0.0 {
                0.5 * (lower + upper)
            } else {
                warnings.push(format!(
                    "no exponent c satisfies both log L / sqrt 2 <= c ({lower:.4}) and the \
                     expansion relations (c < {upper:.4}); falling back"
                ));
                if upper > 0.0 {
                    0.5 * upper
                } else {
                    0.5 * log_s.abs().max(1e-3)
                }
            }
        }
    };

    let tau = hyperbolic_density(model, c, gamma, params, &mut warnings);
    let (tau_bound, tau_meets_bound) = if big_l > 1.0 {
        let b = 2.0 * c / log_l;
        if tau < b {
            warnings.push(format!(
                "measured hyperbolic-time density {tau:.4} is below 2c/log L = {b:.4}"
            ));
        }
        (Some(b), Some(tau >= b))
    } else {
        (None, None)
    };

    let h3b = Check::from_margin(0.5 * (c * tau - log_l) * alpha - osc);
    let relation_sigma = Check::from_margin((-2.0 * c).exp() - (-(1.0 - gamma) * log_s).exp());
    let relation_sigma = if c <= 0.0 { Check { holds: false, ..relation_sigma } } else { relation_sigma };
    let relation_expansion = Check::from_margin(log_deg - lq - c * alpha - eps0);
    let relation_l =
        Check::from_margin((-2.0 * c).exp() - (-(1.0 - gamma) * log_s + gamma * log_l).exp());
    let relation_l_squared = Check {
        holds: log_l * log_l <= 2.0 * c * c,
        margin: Some(2.0 * c * c - log_l * log_l),
    };
    let relation_oscillation = Check::from_margin(log_deg - lq - params.m * log_l - osc);

    // Admissible variation weights: the lower end comes from the two
    // conditions with L^alpha, the upper end from the contraction condition.
    let la = big_l.powf(alpha);
    let d = deg as f64;
    let lo = (la / (d * potential.inf().exp())).max(la * (potential.sup() - 2.0 * potential.inf()).exp() / d);
    let hi = (c * tau * alpha).exp() / (d * potential.sup().exp());
    let star_feasible = lo < hi;
    let theta = match params.theta {
        Some(t) => {
            if !(t > lo && t < hi) {
                warnings.push(format!("theta = {t} lies outside the admissible interval ({lo:.6}, {hi:.6})"));
            }
            t
        }
        None if star_feasible => (lo * hi).sqrt(),
        None => {
            let t = 1.0 / (d * potential.inf().exp()).sqrt();
            warnings.push(format!(
                "admissible theta interval ({lo:.6}, {hi:.6}) is empty; using theta = {t:.6}"
            ));
            t
        }
    };

    warnings.push(format!(
        "the multiplier m = {} of log L in the oscillation relation is a placeholder",
        params.m
    ));

    Ok(HypothesisReport {
        deg,
        q,
        p,
        covering_time: model.covering_time(),
        sigma,
        big_l,
        alpha,
        oscillation: osc,
        c,
        gamma,
        tau,
        tau_bound,
        tau_meets_bound,
        eps0,
        m: params.m,
        m_is_placeholder: true,
        holds_h1: model.covering_time().is_some(),
        h2,
        h3a,
        h3b,
        relation_sigma,
        relation_expansion,
        relation_l,
        relation_l_squared,
        relation_oscillation,
        star_feasible,
        theta_interval: (lo, hi),
        theta,
        warnings,
    })
}

/// Smallest fraction `#{hyperbolic times <= H} / H` over a deterministic
/// grid of orbits that spend at most `gamma H` steps in the non-expanding
/// blocks.
fn hyperbolic_density(
    model: &MapModel,
    c: f64,
    gamma: f64,
    params: &ValidatorParams,
    warnings: &mut Vec<String>,
) -> f64 {
    let h = params.tau_horizon.max(1);
    let npts = params.tau_points.max(1);
    let mut best: Option<f64> = None;
    for k in 0..npts {
        // irrational shift keeps the grid off dyadic and partition points
        let x = ((k as f64 + 0.5) / npts as f64 + 0.000_123_456_789_1 * std::f64::consts::SQRT_2).fract();
        let Ok(logs) = model.log_inverse_derivs(x, h) else { continue };
        let bad = model.orbit(x, h).iter().filter(|y| model.is_non_expanding(model.element_of(**y))).count();
        if bad as f64 > gamma * h as f64 {
            continue;
        }
        let count = super::hyperbolic_times_from_logs(&logs, c).len();
        let frac = count as f64 / h as f64;
        best = Some(best.map_or(frac, |b: f64| b.min(frac)));
    }
    match best {
        Some(t) => t,
        None => {
            warnings.push("no sample orbit avoided the frequency set; tau set to 0".into());
            0.0
        }
    }
}
