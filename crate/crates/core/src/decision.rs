//! Binary treat / no-treat choice over identified sets.
//!
//! Utility is the realised ATT under `Treat` and zero under `NoTreat`, so
//! the worst-case regret of treating is the largest possible harm and that
//! of abstaining is the largest forgone gain.

use alloc::format;

use crate::identification::{CurvatureSweep, Interval};
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PolicyDecision {
    Treat,
    NoTreat,
}

impl PolicyDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyDecision::Treat => "treat",
            PolicyDecision::NoTreat => "no_treat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegretProfile {
    pub decision: PolicyDecision,
    pub worst_case_regret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MinimaxChoice {
    pub decision: PolicyDecision,
    pub treat: RegretProfile,
    pub no_treat: RegretProfile,
}

/// Minimises worst-case regret over `interval`; ties go to `NoTreat`.
pub fn minimax_rule(interval: &Interval) -> MinimaxChoice {
    let treat = RegretProfile {
        decision: PolicyDecision::Treat,
        worst_case_regret: (-interval.lo).max(0.0),
    };
    let no_treat = RegretProfile {
        decision: PolicyDecision::NoTreat,
        worst_case_regret: interval.hi.max(0.0),
    };
    let decision = if treat.worst_case_regret < no_treat.worst_case_regret {
        PolicyDecision::Treat
    } else {
        PolicyDecision::NoTreat
    };
    MinimaxChoice {
        decision,
        treat,
        no_treat,
    }
}

/// Bisection tolerance on `delta` for [`fragility_index`].
pub const BISECTION_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FragilityReport {
    pub baseline: PolicyDecision,
    /// First grid `delta` at which the decision flips; `+∞` if none.
    pub grid_index: f64,
    /// Bisected flip point, equal to `grid_index` without an evaluator.
    pub refined_index: f64,
}

/// Smallest `delta` at which the minimax decision departs from the one at the
/// first grid point. With `evaluate`, the flip is bisected between the
/// bracketing grid points.
pub fn fragility_index(
    sweep: &CurvatureSweep,
    evaluate: Option<&dyn Fn(f64) -> Result<Interval>>,
) -> Result<FragilityReport> {
    let mut points = sweep.points();
    let (_, first) = points
        .next()
        .ok_or_else(|| Error::Domain("sweep has no computed interval".into()))?;
    let baseline = minimax_rule(&first).decision;
    let mut prev = sweep.deltas[0];
    let mut flip = None;
    for (delta, iv) in sweep.points() {
        if minimax_rule(&iv).decision != baseline {
            flip = Some((prev, delta));
            break;
        }
        prev = delta;
    }
    let Some((below, at)) = flip else {
        return Ok(FragilityReport {
            baseline,
            grid_index: f64::INFINITY,
            refined_index: f64::INFINITY,
        });
    };
    let refined = match evaluate {
        None => at,
        Some(f) => {
            let (mut lo, mut hi) = (below, at);
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if minimax_rule(&f(mid)?).decision != baseline {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    };
    Ok(FragilityReport {
        baseline,
        grid_index: at,
        refined_index: refined,
    })
}

/// `|τ̂| / SE`, the multiple of the standard error spanned by the estimate.
pub fn se_ratio(tau_hat: f64, se: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::Domain(format!("se must be > 0, got {se}")));
    }
    Ok(math::abs(tau_hat) / se)
}

/// Smallest `δ` on `{0, step, 2·step, ...}` with `0 ∈ τ̂ ± δ·SE`.
pub fn bias_robustness(tau_hat: f64, se: f64, grid_step: f64) -> Result<f64> {
    let ratio = se_ratio(tau_hat, se)?;
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::Domain(format!("grid step must be > 0, got {grid_step}")));
    }
    let target = math::abs(tau_hat);
    let mut k = math::ceil(ratio / grid_step);
    // guard against the quotient rounding below an exact multiple
    while k * grid_step * se < target {
        k += 1.0;
    }
    Ok(k * grid_step)
}
