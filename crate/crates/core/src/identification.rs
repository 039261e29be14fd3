//! Identified sets for the ATT: worst-case bounds, curvature-constrained
//! bounds from outcome-dependent tilting of control weights, trimming-proxy
//! sweeps and the sign-identification threshold.
//!
//! Under curvature `δ` the counterfactual mean of the treated is any tilted
//! control mean `Σ tᵢwᵢyᵢ / Σ tᵢwᵢ` with `tᵢ ∈ [1, e^δ]`. The objective is
//! linear-fractional over a box, so its extremes sit at vertices where the
//! large tilt covers a suffix (maximum) or prefix (minimum) of the outcomes
//! in sorted order.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::estimators::{att_match, MatchSpec};
use crate::math;
use crate::propensity::{score_dataset, trim, PropensityModel, TrimRule};
use crate::stats;
use crate::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// `[center - radius, center + radius]`, radius clamped at zero.
    pub fn around(center: f64, radius: f64) -> Self {
        let r = radius.max(0.0);
        Self {
            lo: center - r,
            hi: center + r,
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn scaled(&self, k: f64) -> Self {
        if k >= 0.0 {
            Self { lo: self.lo * k, hi: self.hi * k }
        } else {
            Self { lo: self.hi * k, hi: self.lo * k }
        }
    }
}

/// Range of admissible potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OutcomeSupport {
    pub y_lo: f64,
    pub y_hi: f64,
}

impl OutcomeSupport {
    pub fn new(y_lo: f64, y_hi: f64) -> Result<Self> {
        if !(y_lo.is_finite() && y_hi.is_finite() && y_lo <= y_hi) {
            return Err(Error::Domain(format!("invalid outcome support [{y_lo}, {y_hi}]")));
        }
        Ok(Self { y_lo, y_hi })
    }

    /// Smallest support containing every observed outcome.
    pub fn empirical(data: &Dataset) -> Result<Self> {
        let ys = data.records().iter().map(|u| u.outcome);
        let lo = ys.clone().fold(f64::INFINITY, f64::min);
        let hi = ys.fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }
}

/// Worst-case ATT bounds: the counterfactual mean may be anywhere in the
/// outcome support.
pub fn manski_bounds(data: &Dataset, support: OutcomeSupport) -> Result<Interval> {
    if data.treated_count() == 0 {
        return Err(Error::Validation("no treated units".into()));
    }
    for u in data.records() {
        if !(support.y_lo <= u.outcome && u.outcome <= support.y_hi) {
            return Err(Error::Support {
                value: u.outcome,
                lo: support.y_lo,
                hi: support.y_hi,
            });
        }
    }
    let m1 = stats::mean(&data.treated_outcomes());
    Interval::new(m1 - support.y_hi, m1 - support.y_lo)
}

fn check_instance(outcomes: &[f64], weights: &[f64], delta: f64) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
    }
    if outcomes.is_empty() || outcomes.len() != weights.len() {
        return Err(Error::Domain(format!(
            "need matching non-empty vectors, got {} outcomes and {} weights",
            outcomes.len(),
            weights.len()
        )));
    }
    if outcomes.iter().any(|y| !y.is_finite()) {
        return Err(Error::Domain("non-finite outcome".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Domain("weights must be finite and > 0".into()));
    }
    Ok(())
}

fn weighted_mean(outcomes: &[f64], weights: &[f64]) -> f64 {
    let num: f64 = outcomes.iter().zip(weights).map(|(y, w)| w * y).sum();
    let den: f64 = weights.iter().sum();
    num / den
}

/// ATT interval under curvature `delta`, by the sorted-threshold scan.
pub fn curvature_bounds(
    control_outcomes: &[f64],
    base_weights: &[f64],
    treated_mean: f64,
    delta: f64,
) -> Result<Interval> {
    check_instance(control_outcomes, base_weights, delta)?;
    let mar = weighted_mean(control_outcomes, base_weights);
    if delta == 0.0 {
        return Ok(Interval::point(treated_mean - mar));
    }
    let n = control_outcomes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| control_outcomes[a].total_cmp(&control_outcomes[b]).then(a.cmp(&b)));
    let y: Vec<f64> = order.iter().map(|&i| control_outcomes[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| base_weights[i]).collect();

    // prefix[k] / suffix[k] hold (Σ w y, Σ w) over [0, k) and [k, n)
    let mut prefix = Vec::with_capacity(n + 1);
    let (mut a, mut b) = (0.0, 0.0);
    prefix.push((a, b));
    for i in 0..n {
        a += w[i] * y[i];
        b += w[i];
        prefix.push((a, b));
    }
    let mut suffix = alloc::vec![(0.0, 0.0); n + 1];
    let (mut a, mut b) = (0.0, 0.0);
    for i in (0..n).rev() {
        a += w[i] * y[i];
        b += w[i];
        suffix[i] = (a, b);
    }

    let t = math::exp(delta);
    // Splits k = 0 and k = n tilt every unit equally and give the MAR mean.
    let mut mu_max = mar;
    let mut mu_min = mar;
    for k in 1..n {
        let (ap, wp) = prefix[k];
        let (as_, ws) = suffix[k];
        let mp = ap / wp;
        let ms = as_ / ws;
        // Each term is monotone in t under IEEE rounding, so the envelopes
        // nest exactly as delta grows.
        let gap = (ms - mp).max(0.0);
        mu_max = mu_max.max(mp + gap / (1.0 + wp / (t * ws)));
        mu_min = mu_min.min(ms - gap / (1.0 + ws / (t * wp)));
    }
    Interval::new(treated_mean - mu_max, treated_mean - mu_min)
}

/// Largest instance accepted by [`oracle_curvature_bounds`].
pub const ORACLE_MAX_N: usize = 20;

/// Brute-force vertex enumeration of the tilting problem over `{1, e^δ}ⁿ`.
pub fn oracle_curvature_bounds(
    control_outcomes: &[f64],
    base_weights: &[f64],
    treated_mean: f64,
    delta: f64,
) -> Result<Interval> {
    let n = control_outcomes.len();
    if n > ORACLE_MAX_N {
        return Err(Error::Size { n, max: ORACLE_MAX_N });
    }
    check_instance(control_outcomes, base_weights, delta)?;
    let t = math::exp(delta);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for mask in 0u32..(1u32 << n) {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            let ti = if mask >> i & 1 == 1 { t } else { 1.0 };
            num += ti * base_weights[i] * control_outcomes[i];
            den += ti * base_weights[i];
        }
        let mu = num / den;
        lo = lo.min(mu);
        hi = hi.max(mu);
    }
    Interval::new(treated_mean - hi, treated_mean - lo)
}

/// Control outcomes, odds weights and treated mean extracted from a fitted
/// model; evaluates the curvature interval at any `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltingProblem {
    pub control_outcomes: Vec<f64>,
    pub base_weights: Vec<f64>,
    pub treated_mean: f64,
}

impl TiltingProblem {
    pub fn from_model(data: &Dataset, model: &PropensityModel) -> Result<Self> {
        data.require_both_arms()?;
        let scores = score_dataset(model, data)?.values;
        let base_weights = data
            .records()
            .iter()
            .zip(&scores)
            .filter(|(u, _)| !u.treated)
            .map(|(_, e)| e / (1.0 - e))
            .collect();
        Ok(Self {
            control_outcomes: data.control_outcomes(),
            base_weights,
            treated_mean: stats::mean(&data.treated_outcomes()),
        })
    }

    pub fn bounds(&self, delta: f64) -> Result<Interval> {
        curvature_bounds(&self.control_outcomes, &self.base_weights, self.treated_mean, delta)
    }

    /// The ATT point under ignorable selection.
    pub fn mar_point(&self) -> f64 {
        self.treated_mean - weighted_mean(&self.control_outcomes, &self.base_weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepMethod {
    Tilting,
    TrimmingProxy,
}

impl SweepMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepMethod::Tilting => "tilting",
            SweepMethod::TrimmingProxy => "trimming_proxy",
        }
    }
}

/// Identified sets along an ascending `delta` grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurvatureSweep {
    pub deltas: Vec<f64>,
    /// `None` marks a grid point where the set could not be computed.
    pub intervals: Vec<Option<Interval>>,
    /// Smallest grid `delta` whose set excludes zero; `+∞` if none.
    pub massi: f64,
    pub method: SweepMethod,
    /// Grid indices whose width is below that of an earlier point.
    pub width_violations: Vec<usize>,
}

impl CurvatureSweep {
    pub fn from_parts(
        deltas: Vec<f64>,
        intervals: Vec<Option<Interval>>,
        method: SweepMethod,
    ) -> Result<Self> {
        check_grid(&deltas)?;
        if deltas.len() != intervals.len() {
            return Err(Error::Domain("deltas and intervals differ in length".into()));
        }
        let massi = massi(&deltas, &intervals);
        let width_violations = width_violations(&intervals);
        Ok(Self {
            deltas,
            intervals,
            massi,
            method,
            width_violations,
        })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, Interval)> + '_ {
        self.deltas
            .iter()
            .zip(&self.intervals)
            .filter_map(|(d, iv)| iv.map(|iv| (*d, iv)))
    }
}

fn check_grid(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::Domain("empty delta grid".into()));
    }
    if !(deltas[0] >= 0.0) || deltas.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("deltas must be finite and >= 0".into()));
    }
    if deltas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("deltas must be strictly increasing".into()));
    }
    Ok(())
}

/// Smallest grid `delta` whose interval excludes zero, `+∞` if none does.
pub fn massi(deltas: &[f64], intervals: &[Option<Interval>]) -> f64 {
    deltas
        .iter()
        .zip(intervals)
        .find(|(_, iv)| iv.is_some_and(|iv| !iv.contains(0.0)))
        .map_or(f64::INFINITY, |(d, _)| *d)
}

fn width_violations(intervals: &[Option<Interval>]) -> Vec<usize> {
    let mut widest = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for (i, iv) in intervals.iter().enumerate() {
        if let Some(iv) = iv {
            if iv.width() < widest {
                out.push(i);
            }
            widest = widest.max(iv.width());
        }
    }
    out
}

/// Curvature sweep on odds-weighted controls. Fails if sets do not nest.
pub fn sweep_tilting(data: &Dataset, model: &PropensityModel, deltas: &[f64]) -> Result<CurvatureSweep> {
    check_grid(deltas)?;
    let problem = TiltingProblem::from_model(data, model)?;
    sweep_problem(&problem, deltas)
}

pub fn sweep_problem(problem: &TiltingProblem, deltas: &[f64]) -> Result<CurvatureSweep> {
    check_grid(deltas)?;
    let intervals = deltas
        .iter()
        .map(|&d| problem.bounds(d))
        .collect::<Result<Vec<_>>>()?;
    if let Some(w) = intervals.windows(2).find(|w| !w[1].contains_interval(&w[0])) {
        return Err(Error::Numerical(format!(
            "tilting sets not nested: {:?} then {:?}",
            w[0], w[1]
        )));
    }
    CurvatureSweep::from_parts(
        deltas.to_vec(),
        intervals.into_iter().map(Some).collect(),
        SweepMethod::Tilting,
    )
}

/// How each `delta` of a trimming-proxy sweep maps to a trim rule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrimMapping {
    /// `[δ/scale, 1 − δ/scale]`, the lower end clipped into `[0, 0.5)`.
    Symmetric { scale: f64 },
    /// Explicit rules, looked up by exact `delta`.
    Explicit(Vec<(f64, TrimRule)>),
}

impl Default for TrimMapping {
    fn default() -> Self {
        TrimMapping::Symmetric { scale: 10.0 }
    }
}

impl TrimMapping {
    pub fn rule(&self, delta: f64) -> Result<TrimRule> {
        match self {
            TrimMapping::Symmetric { scale } => {
                if !(*scale > 0.0) {
                    return Err(Error::Domain("trim scale must be > 0".into()));
                }
                let low = (delta / scale).clamp(0.0, 0.5 - f64::EPSILON);
                TrimRule::new(low, 1.0 - low)
            }
            TrimMapping::Explicit(rules) => rules
                .iter()
                .find(|(d, _)| *d == delta)
                .map(|(_, r)| *r)
                .ok_or_else(|| Error::Domain(format!("no trim rule for delta {delta}"))),
        }
    }
}

/// Trimming as a stand-in for curvature: at each `delta` the ATT is matched
/// on the trimmed sample and reported as `τ̂ ± δ·SE`.
pub fn sweep_trimming_proxy(
    data: &Dataset,
    model: &PropensityModel,
    deltas: &[f64],
    mapping: &TrimMapping,
    spec: &MatchSpec,
) -> Result<CurvatureSweep> {
    check_grid(deltas)?;
    let mut intervals = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let rule = mapping.rule(delta)?;
        let point = trim(data, model, rule)
            .and_then(|t| att_match(&t.data, model, spec))
            .ok()
            .map(|est| Interval::around(est.tau_hat, delta * est.se));
        intervals.push(point);
    }
    CurvatureSweep::from_parts(deltas.to_vec(), intervals, SweepMethod::TrimmingProxy)
}

/// `[ateᵢ − ε, ateᵢ + ε]` for every observed ATE.
pub fn fixed_radius_sets(observed_ates: &[f64], epsilon: f64) -> Result<Vec<Interval>> {
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(observed_ates
        .iter()
        .map(|a| Interval::around(*a, epsilon))
        .collect())
}
