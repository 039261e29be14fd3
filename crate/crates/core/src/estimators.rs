//! Point estimators of the ATT: nearest-neighbour matching, inverse
//! probability weighting and the naive difference in means.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::linalg::{Cholesky, SquareMatrix};
use crate::math;
use crate::propensity::{score_dataset, PropensityModel};
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Metric {
    /// Absolute difference of logit propensity scores.
    LogitScore,
    /// Mahalanobis distance on the model covariates, pooled covariance.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

/// Maximum admissible match distance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Caliper {
    /// A fixed distance on the metric scale.
    Absolute(f64),
    /// A multiple of the sample SD of logit scores, resolved per call.
    LogitSd(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchSpec {
    pub metric: Metric,
    pub caliper: Option<Caliper>,
    pub with_replacement: bool,
    pub n_neighbors: usize,
    pub tie_break: TieBreak,
}

impl Default for MatchSpec {
    fn default() -> Self {
        Self {
            metric: Metric::LogitScore,
            caliper: None,
            with_replacement: true,
            n_neighbors: 1,
            tie_break: TieBreak::LowestIndex,
        }
    }
}

impl MatchSpec {
    pub fn nearest_logit() -> Self {
        Self::default()
    }

    /// Logit matching with a caliper of 0.2 SD of the logit score.
    pub fn logit_caliper() -> Self {
        Self {
            caliper: Some(Caliper::LogitSd(0.2)),
            ..Self::default()
        }
    }

    pub fn mahalanobis() -> Self {
        Self {
            metric: Metric::Mahalanobis,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors == 0 {
            return Err(Error::Domain("n_neighbors must be >= 1".into()));
        }
        match self.caliper {
            Some(Caliper::Absolute(c)) | Some(Caliper::LogitSd(c)) if !(c > 0.0) => {
                Err(Error::Domain(format!("caliper must be > 0, got {c}")))
            }
            _ => Ok(()),
        }
    }

    /// Short stable tag, e.g. `nn1_logit_repl_cal0.2sd`.
    pub fn describe(&self) -> String {
        let metric = match self.metric {
            Metric::LogitScore => "logit",
            Metric::Mahalanobis => "mahalanobis",
        };
        let repl = if self.with_replacement { "repl" } else { "norepl" };
        let mut tag = format!("nn{}_{}_{}", self.n_neighbors, metric, repl);
        match self.caliper {
            None => {}
            Some(Caliper::Absolute(c)) => tag.push_str(&format!("_cal{c}")),
            Some(Caliper::LogitSd(c)) => tag.push_str(&format!("_cal{c}sd")),
        }
        tag
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttEstimate {
    pub tau_hat: f64,
    pub se: f64,
    pub n_treated_used: usize,
    pub n_dropped: usize,
    pub design_tag: String,
}

/// Pairwise distance between treated unit `t` and control `c`, both indices
/// into the per-arm feature tables.
enum Distance {
    Logit { treated: Vec<f64>, control: Vec<f64> },
    Mahalanobis {
        treated: Vec<Vec<f64>>,
        control: Vec<Vec<f64>>,
        precision: SquareMatrix,
    },
}

impl Distance {
    fn between(&self, t: usize, c: usize) -> f64 {
        match self {
            Distance::Logit { treated, control } => math::abs(treated[t] - control[c]),
            Distance::Mahalanobis {
                treated,
                control,
                precision,
            } => {
                let diff: Vec<f64> = treated[t].iter().zip(&control[c]).map(|(a, b)| a - b).collect();
                let q: f64 = precision
                    .mul_vec(&diff)
                    .iter()
                    .zip(&diff)
                    .map(|(a, b)| a * b)
                    .sum();
                math::sqrt(q.max(0.0))
            }
        }
    }
}

fn logit_scores(data: &Dataset, model: &PropensityModel) -> Result<Vec<f64>> {
    Ok(score_dataset(model, data)?
        .values
        .into_iter()
        .map(math::logit)
        .collect())
}

fn split_by_arm<T: Clone>(data: &Dataset, values: &[T]) -> (Vec<T>, Vec<T>) {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (u, v) in data.records().iter().zip(values) {
        if u.treated {
            t.push(v.clone());
        } else {
            c.push(v.clone());
        }
    }
    (t, c)
}

/// Inverse of the pooled sample covariance of the model covariates.
fn pooled_precision(rows: &[Vec<f64>]) -> Result<SquareMatrix> {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    if p == 0 || n < 2 {
        return Err(Error::Numerical("covariance needs >= 2 units and >= 1 covariate".into()));
    }
    let mut means = alloc::vec![0.0; p];
    for r in rows {
        for j in 0..p {
            means[j] += r[j];
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = SquareMatrix::zeros(p);
    for r in rows {
        for j in 0..p {
            let dj = r[j] - means[j];
            for k in 0..=j {
                cov.add(j, k, dj * (r[k] - means[k]));
            }
        }
    }
    for j in 0..p {
        for k in 0..=j {
            let v = cov.get(j, k) / (n - 1) as f64;
            cov.set(j, k, v);
            cov.set(k, j, v);
        }
    }
    Cholesky::factor(&cov)
        .map(|ch| ch.inverse())
        .ok_or_else(|| Error::Numerical("pooled covariance is singular".into()))
}

fn build_distance(data: &Dataset, model: &PropensityModel, metric: Metric) -> Result<Distance> {
    match metric {
        Metric::LogitScore => {
            let (treated, control) = split_by_arm(data, &logit_scores(data, model)?);
            Ok(Distance::Logit { treated, control })
        }
        Metric::Mahalanobis => {
            let cols = model
                .covariate_columns
                .iter()
                .map(|c| {
                    data.schema()
                        .covariate_index(c)
                        .ok_or_else(|| Error::Scoring(format!("model column `{c}` not in dataset")))
                })
                .collect::<Result<Vec<_>>>()?;
            let rows: Vec<Vec<f64>> = data
                .records()
                .iter()
                .map(|u| cols.iter().map(|&c| u.covariates[c]).collect())
                .collect();
            let precision = pooled_precision(&rows)?;
            let (treated, control) = split_by_arm(data, &rows);
            Ok(Distance::Mahalanobis {
                treated,
                control,
                precision,
            })
        }
    }
}

fn resolve_caliper(
    caliper: Option<Caliper>,
    data: &Dataset,
    model: &PropensityModel,
) -> Result<f64> {
    Ok(match caliper {
        None => f64::INFINITY,
        Some(Caliper::Absolute(c)) => c,
        Some(Caliper::LogitSd(k)) => k * stats::sample_sd(&logit_scores(data, model)?),
    })
}

/// The `k` nearest available controls to treated unit `t` within `caliper`,
/// ordered by (distance, control index).
fn nearest(
    dist: &Distance,
    t: usize,
    n_control: usize,
    k: usize,
    caliper: f64,
    used: Option<&[bool]>,
) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for c in 0..n_control {
        if used.is_some_and(|u| u[c]) {
            continue;
        }
        let d = dist.between(t, c);
        if !(d <= caliper) {
            continue;
        }
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        // strict comparison keeps the earlier control ahead on ties
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, c));
        best.truncate(k);
    }
    best.into_iter().map(|(_, c)| c).collect()
}

/// Nearest-neighbour matching estimate of the ATT.
///
/// Each treated unit is compared with the mean outcome of its matched
/// controls; the SE treats the matched differences as independent
/// (`sd(diff) / sqrt(m)`). Without replacement, treated units are matched
/// greedily in dataset order.
pub fn att_match(data: &Dataset, model: &PropensityModel, spec: &MatchSpec) -> Result<AttEstimate> {
    data.require_both_arms()?;
    spec.validate()?;
    let dist = build_distance(data, model, spec.metric)?;
    let caliper = resolve_caliper(spec.caliper, data, model)?;
    let ty = data.treated_outcomes();
    let cy = data.control_outcomes();
    let mut used = if spec.with_replacement {
        None
    } else {
        Some(alloc::vec![false; cy.len()])
    };
    let mut diffs = Vec::with_capacity(ty.len());
    for (t, y) in ty.iter().enumerate() {
        let matched = nearest(&dist, t, cy.len(), spec.n_neighbors, caliper, used.as_deref());
        if matched.is_empty() {
            continue;
        }
        if let Some(u) = used.as_mut() {
            for &c in &matched {
                u[c] = true;
            }
        }
        let m0 = matched.iter().map(|&c| cy[c]).sum::<f64>() / matched.len() as f64;
        diffs.push(y - m0);
    }
    if diffs.is_empty() {
        return Err(Error::Estimation(format!(
            "no treated unit matched under {}",
            spec.describe()
        )));
    }
    Ok(AttEstimate {
        tau_hat: stats::mean(&diffs),
        se: stats::sample_sd(&diffs) / math::sqrt(diffs.len() as f64),
        n_treated_used: diffs.len(),
        n_dropped: ty.len() - diffs.len(),
        design_tag: spec.describe(),
    })
}

/// Odds-weighted ATT: treated mean minus the `e/(1-e)`-weighted control mean.
pub fn att_ipw(data: &Dataset, model: &PropensityModel) -> Result<AttEstimate> {
    data.require_both_arms()?;
    let scores = score_dataset(model, data)?.values;
    let (_, control_scores) = split_by_arm(data, &scores);
    let ty = data.treated_outcomes();
    let cy = data.control_outcomes();
    let raw: Vec<f64> = control_scores.iter().map(|e| e / (1.0 - e)).collect();
    let top = raw.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::Estimation("degenerate control weights".into()));
    }
    // Rescaling by the largest weight leaves the ratio unchanged and makes
    // equal weights exactly one.
    let w: Vec<f64> = raw.iter().map(|v| v / top).collect();
    let total: f64 = w.iter().sum();
    if !(total > f64::EPSILON) {
        return Err(Error::Estimation("control weights sum to zero".into()));
    }
    let mu0 = w.iter().zip(&cy).map(|(a, y)| a * y).sum::<f64>() / total;
    let m1 = stats::mean(&ty);
    let var0 = w
        .iter()
        .zip(&cy)
        .map(|(a, y)| (a * (y - mu0)) * (a * (y - mu0)))
        .sum::<f64>()
        / (total * total);
    let var1 = stats::sample_variance(&ty) / ty.len() as f64;
    Ok(AttEstimate {
        tau_hat: m1 - mu0,
        se: math::sqrt(var0 + var1),
        n_treated_used: ty.len(),
        n_dropped: 0,
        design_tag: "ipw_odds".into(),
    })
}

pub fn naive_diff(data: &Dataset) -> Result<AttEstimate> {
    data.require_both_arms()?;
    let ty = data.treated_outcomes();
    let cy = data.control_outcomes();
    Ok(AttEstimate {
        tau_hat: stats::mean(&ty) - stats::mean(&cy),
        se: stats::two_sample_se(&ty, &cy),
        n_treated_used: ty.len(),
        n_dropped: 0,
        design_tag: "naive_diff".into(),
    })
}

/// One entry of a design-sensitivity batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub spec: MatchSpec,
    pub design_tag: String,
    pub estimate: Result<AttEstimate>,
}

/// Runs every design, recording failures per design.
pub fn design_sensitivity(
    data: &Dataset,
    model: &PropensityModel,
    designs: &[MatchSpec],
) -> Vec<DesignOutcome> {
    designs
        .iter()
        .map(|spec| DesignOutcome {
            spec: *spec,
            design_tag: spec.describe(),
            estimate: att_match(data, model, spec),
        })
        .collect()
}
