//! The core API used the way the command line uses it, on synthetic data
//! with a known propensity model and a constant treatment effect.

use fragility_core::data::Delimiter;
use fragility_core::decision::{fragility_index, minimax_rule, PolicyDecision};
use fragility_core::estimators::{att_ipw, att_match, design_sensitivity};
use fragility_core::identification::{sweep_tilting, TiltingProblem};
use fragility_core::propensity::{fit_logistic, trim};
use fragility_core::resample::{bootstrap_att, decile_att, BootstrapDesign};
use fragility_core::rng::StreamRng;
use fragility_core::simulation::{nonid_witness, run_sweep, SimConfig};
use fragility_core::strata::{build_support_map, restrict_to_overlap};
use fragility_core::{BinSpec, Dataset, FitOptions, MatchSpec, SchemaSpec, TrimRule, UnitRecord};

const EFFECT: f64 = 2.0;

fn synthetic(n: usize, seed: u64) -> Dataset {
    let schema = SchemaSpec::new(
        vec!["d".into(), "x1".into(), "x2".into(), "y".into()],
        "d",
        "y",
        vec!["x1".into(), "x2".into()],
        Delimiter::Comma,
    )
    .unwrap();
    let mut rng = StreamRng::new(seed, 0);
    let records = (0..n)
        .map(|i| {
            let x1 = 4.0 * rng.uniform() - 2.0;
            let x2 = f64::from(u8::from(rng.uniform() < 0.4));
            let eta = -0.5 + 1.2 * x1 - 0.8 * x2;
            let treated = rng.uniform() < 1.0 / (1.0 + (-eta).exp());
            let noise = rng.uniform() - 0.5;
            let y = 1.0 + 3.0 * x1 + x2 + noise + if treated { EFFECT } else { 0.0 };
            UnitRecord {
                unit_id: i,
                treated,
                outcome: y,
                covariates: vec![x1, x2],
            }
        })
        .collect();
    Dataset::new(records, schema, "synthetic").unwrap()
}

fn columns() -> Vec<String> {
    vec!["x1".into(), "x2".into()]
}

#[test]
fn fit_recovers_the_generating_model() {
    let d = synthetic(20_000, 3);
    let m = fit_logistic(&d, &columns(), FitOptions::default()).unwrap();
    assert!(m.converged);
    for (got, want) in m.coefficients.iter().zip([-0.5, 1.2, -0.8]) {
        assert!((got - want).abs() < 0.1, "{:?}", m.coefficients);
    }
}

#[test]
fn estimators_find_the_constant_effect() {
    let d = synthetic(4_000, 5);
    let m = fit_logistic(&d, &columns(), FitOptions::default()).unwrap();
    let specs = [MatchSpec::nearest_logit(), MatchSpec::logit_caliper(), MatchSpec::mahalanobis()];
    for o in design_sensitivity(&d, &m, &specs) {
        let e = o.estimate.unwrap();
        assert!((e.tau_hat - EFFECT).abs() < 0.25, "{} {}", o.design_tag, e.tau_hat);
    }
    let ipw = att_ipw(&d, &m).unwrap();
    assert!((ipw.tau_hat - EFFECT).abs() < 0.25, "{}", ipw.tau_hat);

    let trimmed = trim(&d, &m, TrimRule::new(0.1, 0.9).unwrap()).unwrap();
    let t = att_match(&trimmed.data, &m, &MatchSpec::nearest_logit()).unwrap();
    assert!((t.tau_hat - EFFECT).abs() < 0.3);
}

#[test]
fn overlap_restriction_keeps_only_shared_cells() {
    let d = synthetic(2_000, 8);
    let grid = [BinSpec::regular("x1", -2.0, 0.5, 2.0).unwrap(), BinSpec::new("x2", vec![0.0, 0.5, 1.0]).unwrap()];
    let map = build_support_map(&d, &grid).unwrap();
    let kept = restrict_to_overlap(&d, &map).unwrap();
    let again = build_support_map(&kept, &grid).unwrap();
    assert!(again
        .cells
        .iter()
        .all(|c| c.status == fragility_core::CellStatus::Both || c.treated + c.control == 0));
}

#[test]
fn sweep_starts_at_ipw_and_decision_is_stable_for_a_clear_effect() {
    let d = synthetic(3_000, 11);
    let m = fit_logistic(&d, &columns(), FitOptions::default()).unwrap();
    let grid: Vec<f64> = (0..=20).map(|k| f64::from(k) / 10.0).collect();
    let sweep = sweep_tilting(&d, &m, &grid).unwrap();
    let ipw = att_ipw(&d, &m).unwrap().tau_hat;
    let first = sweep.intervals[0].unwrap();
    assert!((first.lo - ipw).abs() < 1e-9 && (first.hi - ipw).abs() < 1e-9);
    assert!(sweep.width_violations.is_empty());
    assert_eq!(sweep.massi, 0.0);
    let problem = TiltingProblem::from_model(&d, &m).unwrap();
    let eval = |delta: f64| problem.bounds(delta);
    let report = fragility_index(&sweep, Some(&eval)).unwrap();
    assert_eq!(report.baseline, PolicyDecision::Treat);
    if report.grid_index.is_finite() {
        let at = problem.bounds(report.refined_index).unwrap();
        assert_eq!(minimax_rule(&at).decision, PolicyDecision::NoTreat);
    }
}

#[test]
fn bootstrap_is_reproducible_and_centred() {
    let d = synthetic(600, 13);
    let m = fit_logistic(&d, &columns(), FitOptions::default()).unwrap();
    let design = BootstrapDesign::new(MatchSpec::nearest_logit(), Some(TrimRule::new(0.05, 0.95).unwrap()), "t");
    let a = bootstrap_att(&d, &m, &design, 40, 21).unwrap();
    let b = bootstrap_att(&d, &m, &design, 40, 21).unwrap();
    assert_eq!(a, b);
    assert!((a.mean - EFFECT).abs() < 0.5, "{}", a.mean);
    assert!(a.quantiles.0 <= a.quantiles.1 && a.quantiles.1 <= a.quantiles.2);
}

#[test]
fn deciles_cover_every_unit() {
    let d = synthetic(1_000, 17);
    let m = fit_logistic(&d, &columns(), FitOptions::default()).unwrap();
    let r = decile_att(&d, &m, 5).unwrap();
    assert_eq!(r.rows.len(), 10);
    let total: usize = r.rows.iter().map(|row| row.n_treated + row.n_control).sum();
    assert_eq!(total, d.len());
}

#[test]
fn simulation_and_witness_defaults() {
    let s = run_sweep(&SimConfig::with_seed(4)).unwrap();
    assert_eq!(s.deltas, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    assert!(s.sets.iter().all(|i| i.contains(0.0)));
    assert_eq!(s.massi, f64::INFINITY);
    let w = nonid_witness(0.5, 4).unwrap();
    assert!(w.tv_distance < 0.01);
    assert!((w.att_1 - w.att_2).abs() > 0.1);
}
