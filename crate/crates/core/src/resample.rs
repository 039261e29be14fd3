//! Arm-stratified bootstrap of matching estimates and propensity-decile
//! stratified ATTs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::estimators::{att_match, MatchSpec};
use crate::propensity::{fit_logistic, score_dataset, trim, FitOptions, PropensityModel, TrimRule};
use crate::rng::{stage, StreamRng};
use crate::stats;
use crate::{Error, Result};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_SHARE: f64 = 0.2;

/// What one bootstrap replicate computes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapDesign {
    pub spec: MatchSpec,
    /// Applied inside each replicate, after any refit.
    pub trim: Option<TrimRule>,
    /// Refit the propensity model on each replicate.
    pub refit: bool,
    pub fit_options: FitOptions,
    pub tag: String,
}

impl BootstrapDesign {
    pub fn new(spec: MatchSpec, trim: Option<TrimRule>, tag: impl Into<String>) -> Self {
        Self {
            spec,
            trim,
            refit: true,
            fit_options: FitOptions::default(),
            tag: tag.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BootstrapSummary {
    /// Successful replicate estimates in replicate order.
    pub estimates: Vec<f64>,
    pub failed: usize,
    pub mean: f64,
    pub sd: f64,
    /// 2.5%, 50% and 97.5% quantiles.
    pub quantiles: (f64, f64, f64),
    pub design_tag: String,
    pub seed: u64,
}

/// Record indices of replicate `replicate`: each arm resampled with
/// replacement to its own size, treated first, in draw order.
pub fn resample_indices(data: &Dataset, seed: u64, replicate: u64) -> Vec<usize> {
    let mut rng = StreamRng::new(seed, stage::BOOTSTRAP + replicate);
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for (i, u) in data.records().iter().enumerate() {
        if u.treated {
            treated.push(i);
        } else {
            control.push(i);
        }
    }
    let mut out = Vec::with_capacity(data.len());
    for arm in [&treated, &control] {
        for _ in 0..arm.len() {
            out.push(arm[rng.below(arm.len())]);
        }
    }
    out
}

/// ATT estimate of a single replicate.
pub fn bootstrap_replicate(
    data: &Dataset,
    model: &PropensityModel,
    design: &BootstrapDesign,
    seed: u64,
    replicate: u64,
) -> Result<f64> {
    let picks = resample_indices(data, seed, replicate);
    let records = picks.iter().map(|&i| data.records()[i].clone()).collect();
    let sample = Dataset::renumbered(
        records,
        data.schema().clone(),
        format!("{}#boot{replicate}", data.provenance()),
    );
    let refit;
    let model = if design.refit {
        refit = fit_logistic(&sample, &model.covariate_columns, design.fit_options)?;
        &refit
    } else {
        model
    };
    let sample = match design.trim {
        Some(rule) => trim(&sample, model, rule)?.data,
        None => sample,
    };
    Ok(att_match(&sample, model, &design.spec)?.tau_hat)
}

/// Summarises replicate outcomes; errors if more than a fifth failed.
pub fn summarize(
    outcomes: Vec<Result<f64>>,
    design_tag: impl Into<String>,
    seed: u64,
) -> Result<BootstrapSummary> {
    let total = outcomes.len();
    if total == 0 {
        return Err(Error::Domain("bootstrap needs b >= 1".into()));
    }
    let estimates: Vec<f64> = outcomes.into_iter().filter_map(|r| r.ok()).collect();
    let failed = total - estimates.len();
    if estimates.is_empty() || failed as f64 > MAX_FAILURE_SHARE * total as f64 {
        return Err(Error::Bootstrap { failed, total });
    }
    let mut sorted = estimates.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapSummary {
        mean: stats::mean(&estimates),
        sd: stats::sample_sd(&estimates),
        quantiles: (
            stats::quantile_sorted(&sorted, 0.025),
            stats::quantile_sorted(&sorted, 0.5),
            stats::quantile_sorted(&sorted, 0.975),
        ),
        estimates,
        failed,
        design_tag: design_tag.into(),
        seed,
    })
}

/// Sequential bootstrap; replicates are independent so callers may run
/// [`bootstrap_replicate`] in parallel and pass the results to [`summarize`].
pub fn bootstrap_att(
    data: &Dataset,
    model: &PropensityModel,
    design: &BootstrapDesign,
    b: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if b == 0 {
        return Err(Error::Domain("bootstrap needs b >= 1".into()));
    }
    data.require_both_arms()?;
    let outcomes = (0..b as u64)
        .map(|r| bootstrap_replicate(data, model, design, seed, r))
        .collect();
    summarize(outcomes, design.tag.clone(), seed)
}

pub const DECILES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecileRow {
    /// 1-based decile index.
    pub decile: usize,
    pub score_lo: f64,
    pub score_hi: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub att: Option<f64>,
    pub se: Option<f64>,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecileReport {
    pub rows: Vec<DecileRow>,
    pub min_per_arm: usize,
}

/// Difference in arm means inside each propensity decile. Units are ordered
/// by `(score, unit_id)` and split into ten groups whose sizes differ by at
/// most one. A decile is dropped when either arm has fewer than
/// `min_per_arm` units (and always when an arm is empty).
pub fn decile_att(data: &Dataset, model: &PropensityModel, min_per_arm: usize) -> Result<DecileReport> {
    let scores = score_dataset(model, data)?.values;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let recs = data.records();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(recs[a].unit_id.cmp(&recs[b].unit_id)));
    let n = order.len();
    let need = min_per_arm.max(1);
    let rows = (0..DECILES)
        .map(|k| {
            let group = &order[k * n / DECILES..(k + 1) * n / DECILES];
            let (t, c): (Vec<usize>, Vec<usize>) = group.iter().partition(|&&i| recs[i].treated);
            let ty: Vec<f64> = t.iter().map(|&i| recs[i].outcome).collect();
            let cy: Vec<f64> = c.iter().map(|&i| recs[i].outcome).collect();
            let dropped = ty.len() < need || cy.len() < need;
            let (att, se) = if dropped {
                (None, None)
            } else {
                (
                    Some(stats::mean(&ty) - stats::mean(&cy)),
                    Some(stats::two_sample_se(&ty, &cy)),
                )
            };
            DecileRow {
                decile: k + 1,
                score_lo: group.first().map_or(f64::NAN, |&i| scores[i]),
                score_hi: group.last().map_or(f64::NAN, |&i| scores[i]),
                n_treated: ty.len(),
                n_control: cy.len(),
                att,
                se,
                dropped,
            }
        })
        .collect();
    Ok(DecileReport { rows, min_per_arm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::toy;
    use crate::math;
    use alloc::vec;
    use proptest::prelude::*;

    fn line_model() -> PropensityModel {
        PropensityModel::from_coefficients(vec!["x".into()], vec![0.0, 1.0]).unwrap()
    }

    fn fixed(tag: &str) -> BootstrapDesign {
        BootstrapDesign {
            refit: false,
            ..BootstrapDesign::new(MatchSpec::default(), None, tag)
        }
    }

    fn sample_data() -> Dataset {
        let rows: Vec<(bool, f64, f64)> = (0..30)
            .map(|i| (i % 3 == 0, (i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() * 10.0))
            .collect();
        toy(&rows)
    }

    #[test]
    fn single_replicate_summary() {
        let d = sample_data();
        let s = bootstrap_att(&d, &line_model(), &fixed("x"), 1, 42).unwrap();
        let r = bootstrap_replicate(&d, &line_model(), &fixed("x"), 42, 0).unwrap();
        assert_eq!(s.estimates, vec![r]);
        assert_eq!((s.mean, s.sd), (r, 0.0));
        assert_eq!(s.quantiles, (r, r, r));
    }

    #[test]
    fn identical_outcomes_have_zero_sd() {
        let rows: Vec<(bool, f64, f64)> = (0..12).map(|i| (i % 2 == 0, i as f64 / 12.0, 5.0)).collect();
        let s = bootstrap_att(&toy(&rows), &line_model(), &fixed("flat"), 20, 1).unwrap();
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn too_many_failures_is_bootstrap_error() {
        let outcomes = vec![Ok(1.0), Err(Error::Estimation("x".into())), Ok(2.0)];
        assert!(matches!(summarize(outcomes, "t", 0), Err(Error::Bootstrap { failed: 1, total: 3 })));
        let mut few: Vec<Result<f64>> = (0..9).map(|v| Ok(v as f64)).collect();
        few.push(Err(Error::Estimation("x".into())));
        let s = summarize(few, "t", 0).unwrap();
        assert_eq!((s.failed, s.estimates.len()), (1, 9));
    }

    #[test]
    fn trimmed_replicates_refit() {
        let d = sample_data();
        let design = BootstrapDesign::new(MatchSpec::default(), Some(TrimRule::new(0.1, 0.9).unwrap()), "trim");
        let s1 = bootstrap_att(&d, &line_model(), &design, 15, 3).unwrap();
        let s2 = bootstrap_att(&d, &line_model(), &design, 15, 3).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.estimates.len() + s1.failed, 15);
    }

    #[test]
    fn hand_built_decile_with_empty_arm_is_dropped() {
        // 20 units, two per decile; the lowest decile holds two controls
        let mut rows = Vec::new();
        for k in 0..10 {
            let x = math::logit(0.05 + 0.09 * k as f64);
            rows.push((k != 0, x, 1.0 + k as f64));
            rows.push((false, x + 1e-6, k as f64));
        }
        let r = decile_att(&toy(&rows), &line_model(), 1).unwrap();
        assert!(r.rows[0].dropped && r.rows[0].att.is_none());
        assert_eq!((r.rows[0].n_treated, r.rows[0].n_control), (0, 2));
        for row in &r.rows[1..] {
            assert!(!row.dropped);
            assert!((row.att.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_scores_match_overall_difference() {
        // constant score: ties broken by unit_id, deciles are consecutive ids
        let rows: Vec<(bool, f64, f64)> = (0..100).map(|i| (i % 2 == 0, 0.0, if i % 2 == 0 { 3.0 } else { 1.0 })).collect();
        let r = decile_att(&toy(&rows), &line_model(), 5).unwrap();
        assert!(r.rows.iter().all(|row| !row.dropped && row.att == Some(2.0)));
    }

    proptest! {
        #[test]
        fn replicate_preserves_arm_sizes(seed in any::<u64>(), rep in 0u64..50) {
            let d = sample_data();
            let picks = resample_indices(&d, seed, rep);
            let t = picks.iter().filter(|&&i| d.records()[i].treated).count();
            prop_assert_eq!(t, d.treated_count());
            prop_assert_eq!(picks.len() - t, d.control_count());
        }

        #[test]
        fn deciles_partition_sample(n in 0usize..60, seed in any::<u64>()) {
            let mut rng = StreamRng::new(seed, 0);
            let rows: Vec<(bool, f64, f64)> = (0..n)
                .map(|_| (rng.uniform() < 0.5, (rng.uniform() * 4.0).floor() - 2.0, rng.uniform()))
                .collect();
            let r = decile_att(&toy(&rows), &line_model(), 2).unwrap();
            let total: usize = r.rows.iter().map(|row| row.n_treated + row.n_control).sum();
            prop_assert_eq!(total, n);
            let sizes: Vec<usize> = r.rows.iter().map(|row| row.n_treated + row.n_control).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let his: Vec<f64> = r.rows.iter().filter(|x| x.n_treated + x.n_control > 0).map(|x| x.score_hi).collect();
            let los: Vec<f64> = r.rows.iter().filter(|x| x.n_treated + x.n_control > 0).map(|x| x.score_lo).collect();
            for k in 1..his.len() {
                prop_assert!(his[k - 1] <= los[k]);
            }
        }
    }
}
