//! Logistic propensity model fitted by iteratively reweighted least squares.
//!
//! The objective is the per-unit mean Bernoulli log-likelihood minus
//! `ridge / 2 * |β|²` over the slope coefficients (the intercept is not
//! penalised). Convergence is declared when the max-norm of the gradient
//! of that objective falls to `tol`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, SchemaSpec, UnitRecord};
use crate::linalg::{solve_spd_equilibrated, SquareMatrix};
use crate::math;
use crate::{Error, Result};

/// Scores are clamped into `[SCORE_FLOOR, 1 - SCORE_FLOOR]`.
pub const SCORE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitOptions {
    pub ridge: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-8,
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PropensityModel {
    /// Intercept first, then one slope per covariate column.
    pub coefficients: Vec<f64>,
    pub covariate_columns: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub ridge: f64,
    /// Max-norm of the objective gradient at the returned coefficients.
    pub gradient_norm: f64,
}

/// A model bound to a dataset schema, ready to score units.
#[derive(Debug, Clone)]
pub struct Scorer<'m> {
    model: &'m PropensityModel,
    columns: Vec<usize>,
}

impl<'m> Scorer<'m> {
    pub fn linear_predictor(&self, unit: &UnitRecord) -> f64 {
        let beta = &self.model.coefficients;
        beta[0]
            + self
                .columns
                .iter()
                .zip(&beta[1..])
                .map(|(&c, b)| b * unit.covariates[c])
                .sum::<f64>()
    }

    /// Clamped score and whether clamping was applied.
    pub fn score_with_clamp(&self, unit: &UnitRecord) -> (f64, bool) {
        let p = math::logistic(self.linear_predictor(unit));
        let clamped = p.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR);
        (clamped, clamped != p)
    }

    pub fn score(&self, unit: &UnitRecord) -> f64 {
        self.score_with_clamp(unit).0
    }
}

impl PropensityModel {
    /// A model with the given coefficients (intercept first).
    pub fn from_coefficients(columns: Vec<String>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != columns.len() + 1 {
            return Err(Error::Validation(format!(
                "{} coefficients for {} columns",
                coefficients.len(),
                columns.len()
            )));
        }
        Ok(Self {
            coefficients,
            covariate_columns: columns,
            converged: true,
            iterations: 0,
            ridge: 0.0,
            gradient_norm: 0.0,
        })
    }

    pub fn scorer(&self, schema: &SchemaSpec) -> Result<Scorer<'_>> {
        let columns = self
            .covariate_columns
            .iter()
            .map(|c| {
                schema
                    .covariate_index(c)
                    .ok_or_else(|| Error::Scoring(format!("model column `{c}` not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scorer {
            model: self,
            columns,
        })
    }
}

/// Scores one unit under `schema`.
pub fn score(model: &PropensityModel, schema: &SchemaSpec, unit: &UnitRecord) -> Result<f64> {
    if unit.covariates.len() != schema.covariate_columns.len() {
        return Err(Error::Scoring(format!(
            "unit {} has {} covariates, schema declares {}",
            unit.unit_id,
            unit.covariates.len(),
            schema.covariate_columns.len()
        )));
    }
    Ok(model.scorer(schema)?.score(unit))
}

/// Scores for every unit in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub values: Vec<f64>,
    pub clamp_events: usize,
}

pub fn score_dataset(model: &PropensityModel, data: &Dataset) -> Result<Scores> {
    let scorer = model.scorer(data.schema())?;
    let mut clamp_events = 0;
    let values = data
        .records()
        .iter()
        .map(|u| {
            let (p, clamped) = scorer.score_with_clamp(u);
            clamp_events += usize::from(clamped);
            p
        })
        .collect();
    Ok(Scores {
        values,
        clamp_events,
    })
}

struct Design {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

impl Design {
    fn build(data: &Dataset, covariates: &[String]) -> Result<Self> {
        let cols = covariates
            .iter()
            .map(|c| {
                data.schema()
                    .covariate_index(c)
                    .ok_or_else(|| Error::Validation(format!("unknown covariate `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = data
            .records()
            .iter()
            .map(|u| {
                let mut z = Vec::with_capacity(cols.len() + 1);
                z.push(1.0);
                z.extend(cols.iter().map(|&c| u.covariates[c]));
                z
            })
            .collect::<Vec<_>>();
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite design entry".into()));
        }
        let labels = data
            .records()
            .iter()
            .map(|u| if u.treated { 1.0 } else { 0.0 })
            .collect();
        Ok(Self { rows, labels })
    }

    fn eta(&self, beta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|z| z.iter().zip(beta).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn objective(&self, beta: &[f64], ridge: f64) -> f64 {
        let n = self.rows.len() as f64;
        let ll: f64 = self
            .eta(beta)
            .iter()
            .zip(&self.labels)
            .map(|(e, d)| d * e - math::softplus(*e))
            .sum();
        ll / n - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    /// Gradient and negative Hessian of the penalised mean log-likelihood.
    fn derivatives(&self, beta: &[f64], ridge: f64) -> (Vec<f64>, SquareMatrix) {
        let p = beta.len();
        let n = self.rows.len() as f64;
        let mut grad = vec![0.0; p];
        let mut hess = SquareMatrix::zeros(p);
        for (z, (&d, e)) in self.rows.iter().zip(self.labels.iter().zip(self.eta(beta))) {
            let mu = math::logistic(e);
            let w = mu * (1.0 - mu);
            let r = d - mu;
            for j in 0..p {
                grad[j] += r * z[j];
                let wz = w * z[j];
                for k in 0..=j {
                    hess.add(j, k, wz * z[k]);
                }
            }
        }
        for j in 0..p {
            grad[j] /= n;
            for k in 0..=j {
                let v = hess.get(j, k) / n;
                hess.set(j, k, v);
                hess.set(k, j, v);
            }
        }
        for j in 1..p {
            grad[j] -= ridge * beta[j];
            hess.add(j, j, ridge);
        }
        (grad, hess)
    }

    fn separates(&self, beta: &[f64]) -> bool {
        self.eta(beta)
            .iter()
            .zip(&self.labels)
            .all(|(e, d)| if *d > 0.5 { *e > 0.0 } else { *e < 0.0 })
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(math::abs(*x)))
}

/// Fits `P(D = 1 | X)` on the named covariates.
pub fn fit_logistic(
    data: &Dataset,
    covariates: &[String],
    options: FitOptions,
) -> Result<PropensityModel> {
    data.require_both_arms()?;
    if !(options.ridge >= 0.0) || !(options.tol > 0.0) {
        return Err(Error::Domain("ridge must be >= 0 and tol > 0".into()));
    }
    let design = Design::build(data, covariates)?;
    let p = covariates.len() + 1;
    let mut beta = vec![0.0; p];
    let mut objective = design.objective(&beta, options.ridge);
    let mut iterations = 0;
    let (mut grad, mut hess) = design.derivatives(&beta, options.ridge);
    let mut converged = max_norm(&grad) <= options.tol;

    while !converged && iterations < options.max_iter {
        let step = match solve_spd_equilibrated(&hess, &grad) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                if options.ridge == 0.0 && design.separates(&beta) {
                    return Err(Error::Divergence { iterations });
                }
                return Err(Error::Numerical(
                    "normal equations are rank deficient".into(),
                ));
            }
        };
        // The Newton decrement is invariant to covariate scale. Once it is
        // negligible the iteration stops even if earnings-sized columns keep
        // the raw gradient above `tol`; `converged` still reports the
        // gradient test alone.
        let decrement: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let at_optimum = decrement <= options.tol * options.tol;
        // Newton step with halving until the objective does not decrease.
        let mut scale = 1.0;
        let mut candidate;
        let mut cand_obj;
        let mut halvings = 0;
        loop {
            candidate = beta
                .iter()
                .zip(&step)
                .map(|(b, s)| b + scale * s)
                .collect::<Vec<_>>();
            cand_obj = design.objective(&candidate, options.ridge);
            if cand_obj >= objective || halvings >= 40 {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        iterations += 1;
        if cand_obj < objective {
            // No ascent direction left at machine precision.
            break;
        }
        beta = candidate;
        objective = cand_obj;
        let d = design.derivatives(&beta, options.ridge);
        grad = d.0;
        hess = d.1;
        converged = max_norm(&grad) <= options.tol;
        if at_optimum {
            break;
        }
    }

    // A strictly separating linear predictor means no finite maximiser exists;
    // the small gradient reached along the ray is not convergence.
    if options.ridge == 0.0 && design.separates(&beta) {
        return Err(Error::Divergence { iterations });
    }

    Ok(PropensityModel {
        coefficients: beta,
        covariate_columns: covariates.to_vec(),
        converged,
        iterations,
        ridge: options.ridge,
        gradient_norm: max_norm(&grad),
    })
}

/// Retain units whose score lies in `[low, high]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrimRule {
    pub low: f64,
    pub high: f64,
}

impl TrimRule {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&low) || !(high > 0.0 && high <= 1.0) || !(low < high) {
            return Err(Error::Domain(format!("invalid trim rule [{low}, {high}]")));
        }
        Ok(Self { low, high })
    }

    pub fn identity() -> Self {
        Self { low: 0.0, high: 1.0 }
    }

    pub fn retains(&self, score: f64) -> bool {
        score >= self.low && score <= self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimOutcome {
    pub data: Dataset,
    pub dropped_treated: usize,
    pub dropped_control: usize,
}

pub fn trim(data: &Dataset, model: &PropensityModel, rule: TrimRule) -> Result<TrimOutcome> {
    let scores = score_dataset(model, data)?;
    let mut it = scores.values.iter();
    let kept = data.filter(|_| rule.retains(*it.next().unwrap()));
    if kept.is_empty() {
        return Err(Error::Trimming {
            low: rule.low,
            high: rule.high,
        });
    }
    Ok(TrimOutcome {
        dropped_treated: data.treated_count() - kept.treated_count(),
        dropped_control: data.control_count() - kept.control_count(),
        data: kept,
    })
}

/// Equal-width histograms of scores over `[0, 1]`, one per arm.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreHistogram {
    pub edges: Vec<f64>,
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
}

pub fn score_histogram(
    data: &Dataset,
    model: &PropensityModel,
    n_bins: usize,
) -> Result<ScoreHistogram> {
    if n_bins == 0 {
        return Err(Error::Domain("n_bins must be >= 1".into()));
    }
    let scores = score_dataset(model, data)?;
    let mut treated = vec![0; n_bins];
    let mut control = vec![0; n_bins];
    for (u, s) in data.records().iter().zip(&scores.values) {
        let k = bin_of(*s, n_bins);
        if u.treated {
            treated[k] += 1;
        } else {
            control[k] += 1;
        }
    }
    let edges = (0..=n_bins).map(|k| k as f64 / n_bins as f64).collect();
    Ok(ScoreHistogram {
        edges,
        treated,
        control,
    })
}

fn bin_of(score: f64, n_bins: usize) -> usize {
    (math::floor(score * n_bins as f64) as usize).min(n_bins - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::*;

    fn cols() -> Vec<String> {
        vec!["x".into()]
    }

    /// X=1: 3 of 4 treated; X=0: 1 of 4 treated.
    fn log_odds_toy() -> Dataset {
        toy(&[
            (true, 1.0, 0.0),
            (true, 1.0, 0.0),
            (true, 1.0, 0.0),
            (false, 1.0, 0.0),
            (true, 0.0, 0.0),
            (false, 0.0, 0.0),
            (false, 0.0, 0.0),
            (false, 0.0, 0.0),
        ])
    }

    #[test]
    fn closed_form_log_odds() {
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        let m = fit_logistic(&log_odds_toy(), &cols(), opts).unwrap();
        assert!(m.converged);
        let intercept = math::ln(1.0 / 3.0);
        let slope = math::ln(3.0) - math::ln(1.0 / 3.0);
        assert!((m.coefficients[0] - intercept).abs() < 1e-8, "{:?}", m);
        assert!((m.coefficients[1] - slope).abs() < 1e-8, "{:?}", m);
        let d = log_odds_toy();
        let x1 = &d.records()[0];
        assert!((score(&m, d.schema(), x1).unwrap() - 0.75).abs() < 1e-9);
    }

    #[test]
    fn zero_coefficients_score_half() {
        let m = PropensityModel::from_coefficients(cols(), vec![0.0, 0.0]).unwrap();
        let d = toy(&[(true, 123.0, 0.0)]);
        assert_eq!(score(&m, d.schema(), &d.records()[0]).unwrap(), 0.5);
    }

    #[test]
    fn score_is_monotone_in_positive_covariate() {
        let m = PropensityModel::from_coefficients(cols(), vec![-1.0, 0.7]).unwrap();
        let d = toy(&[(true, 0.0, 0.0), (true, 1.0, 0.0), (true, 2.0, 0.0)]);
        let s = score_dataset(&m, &d).unwrap().values;
        assert!(s[0] < s[1] && s[1] < s[2]);
    }

    #[test]
    fn clamping_counted() {
        let m = PropensityModel::from_coefficients(cols(), vec![0.0, 100.0]).unwrap();
        let d = toy(&[(true, 1.0, 0.0), (false, -1.0, 0.0), (false, 0.0, 0.0)]);
        let s = score_dataset(&m, &d).unwrap();
        assert_eq!(s.clamp_events, 2);
        assert_eq!(s.values[0], 1.0 - SCORE_FLOOR);
        assert_eq!(s.values[1], SCORE_FLOOR);
    }

    #[test]
    fn column_mismatch_is_scoring_error() {
        let m = PropensityModel::from_coefficients(vec!["age".into()], vec![0.0, 1.0]).unwrap();
        let d = toy(&[(true, 1.0, 0.0)]);
        assert!(matches!(score(&m, d.schema(), &d.records()[0]), Err(Error::Scoring(_))));
    }

    #[test]
    fn perfect_separation_without_ridge_diverges() {
        let d = toy(&[(true, 1.0, 0.0), (true, 2.0, 0.0), (false, -1.0, 0.0), (false, -2.0, 0.0)]);
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        assert!(matches!(fit_logistic(&d, &cols(), opts), Err(Error::Divergence { .. })));
        // a visible ridge stabilises the problem
        let opts = FitOptions { ridge: 1e-2, ..FitOptions::default() };
        let m = fit_logistic(&d, &cols(), opts).unwrap();
        assert!(m.converged);
    }

    #[test]
    fn collinear_design_is_numerical_error() {
        let d = toy(&[(true, 1.0, 0.0), (false, 1.0, 0.0), (true, 1.0, 0.0)]);
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        assert!(matches!(fit_logistic(&d, &cols(), opts), Err(Error::Numerical(_))));
    }

    #[test]
    fn trim_identity_and_hand_scores() {
        // logit scores for x in {ln(.05/.95), 0, ln(.95/.05)} with slope 1
        let xs = [math::logit(0.05), 0.0, math::logit(0.95)];
        let d = toy(&[(true, xs[0], 1.0), (false, xs[1], 2.0), (true, xs[2], 3.0)]);
        let m = PropensityModel::from_coefficients(cols(), vec![0.0, 1.0]).unwrap();
        let all = trim(&d, &m, TrimRule::identity()).unwrap();
        assert_eq!(all.data, d);
        let mid = trim(&d, &m, TrimRule::new(0.1, 0.9).unwrap()).unwrap();
        assert_eq!(mid.data.len(), 1);
        assert_eq!(mid.data.records()[0].unit_id, 1);
        assert_eq!((mid.dropped_treated, mid.dropped_control), (2, 0));
        assert!(matches!(
            trim(&d, &m, TrimRule::new(0.6, 0.7).unwrap()),
            Err(Error::Trimming { .. })
        ));
    }

    #[test]
    fn trim_rule_domain() {
        assert!(TrimRule::new(0.5, 0.5).is_err());
        assert!(TrimRule::new(-0.1, 0.5).is_err());
        assert!(TrimRule::new(0.1, 1.1).is_err());
        assert!(TrimRule::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn histogram_hand_binning() {
        let xs = [math::logit(0.05), 0.0, math::logit(0.95)];
        let d = toy(&[(true, xs[0], 1.0), (false, xs[1], 2.0), (true, xs[2], 3.0)]);
        let m = PropensityModel::from_coefficients(cols(), vec![0.0, 1.0]).unwrap();
        let h = score_histogram(&d, &m, 10).unwrap();
        let mut t = vec![0; 10];
        t[0] = 1;
        t[9] = 1;
        let mut c = vec![0; 10];
        c[5] = 1;
        assert_eq!(h.treated, t);
        assert_eq!(h.control, c);
        let one = score_histogram(&d, &m, 1).unwrap();
        assert_eq!((one.treated[0], one.control[0]), (2, 1));
        assert!(score_histogram(&d, &m, 0).is_err());
    }

    #[test]
    fn fit_is_bit_deterministic() {
        let d = toy(&[
            (true, 0.3, 0.0),
            (false, 1.3, 0.0),
            (true, 2.1, 0.0),
            (false, -0.4, 0.0),
            (true, 0.9, 0.0),
            (false, 0.2, 0.0),
        ]);
        let a = fit_logistic(&d, &cols(), FitOptions::default()).unwrap();
        let b = fit_logistic(&d, &cols(), FitOptions::default()).unwrap();
        assert_eq!(
            a.coefficients.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.coefficients.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    fn random_design(seed: u64, n: usize) -> Dataset {
        let mut rng = crate::rng::StreamRng::new(seed, 7);
        let rows: Vec<(bool, f64, f64)> = (0..n)
            .map(|_| {
                let x = rng.uniform() * 4.0 - 2.0;
                (rng.uniform() < math::logistic(0.3 + 0.8 * x), x, 0.0)
            })
            .collect();
        toy(&rows)
    }

    #[test]
    fn earnings_scale_column_stops_early() {
        let d = random_design(3, 400);
        let scaled = toy(
            &d.records()
                .iter()
                .map(|u| (u.treated, u.covariates[0] * 1e4, 0.0))
                .collect::<Vec<_>>(),
        );
        let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
        let a = fit_logistic(&d, &cols(), opts).unwrap();
        let b = fit_logistic(&scaled, &cols(), opts).unwrap();
        assert!(b.iterations < 30, "{}", b.iterations);
        assert_eq!(b.converged, b.gradient_norm <= opts.tol);
        assert!((b.coefficients[1] * 1e4 - a.coefficients[1]).abs() < 1e-6);
    }

    #[test]
    fn ridge_shrinks_slope_monotonically() {
        let d = random_design(11, 200);
        let norms: Vec<f64> = [0.0, 0.1, 1.0]
            .iter()
            .map(|&ridge| {
                let m = fit_logistic(&d, &cols(), FitOptions { ridge, ..FitOptions::default() }).unwrap();
                assert!(m.converged);
                m.coefficients[1].abs()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    #[test]
    fn independent_treatment_gives_flat_scores() {
        let rows: Vec<(bool, f64, f64)> = (0..400).map(|i| (i % 2 == 0, (i / 2) as f64 % 5.0, 0.0)).collect();
        let d = toy(&rows);
        let m = fit_logistic(&d, &cols(), FitOptions::default()).unwrap();
        assert!(m.coefficients[1].abs() < 1e-6);
        let s = score_dataset(&m, &d).unwrap().values;
        assert!(s.iter().all(|p| (p - 0.5).abs() < 1e-6));
    }

    proptest::proptest! {
        #[test]
        fn first_order_conditions_hold(seed in proptest::prelude::any::<u64>(), n in 30usize..150) {
            let d = random_design(seed, n);
            proptest::prop_assume!(d.treated_count() > 0 && d.control_count() > 0);
            let opts = FitOptions { ridge: 0.0, ..FitOptions::default() };
            if let Ok(m) = fit_logistic(&d, &cols(), opts) {
                proptest::prop_assert!(m.converged);
                let s = score_dataset(&m, &d).unwrap().values;
                for j in 0..2 {
                    let g: f64 = d
                        .records()
                        .iter()
                        .zip(&s)
                        .map(|(u, e)| {
                            let z = if j == 0 { 1.0 } else { u.covariates[0] };
                            (f64::from(u8::from(u.treated)) - e) * z
                        })
                        .sum();
                    proptest::prop_assert!(g.abs() <= opts.tol * n as f64, "column {j}: {g}");
                }
            }
        }

        #[test]
        fn widening_trim_keeps_units(lo in 0.0f64..0.4, hi in 0.6f64..1.0, widen in 0.0f64..0.1) {
            let d = random_design(5, 80);
            let m = PropensityModel::from_coefficients(cols(), vec![0.2, 1.1]).unwrap();
            let narrow = trim(&d, &m, TrimRule::new(lo + widen, hi - widen).unwrap());
            let wide = trim(&d, &m, TrimRule::new(lo, hi).unwrap()).unwrap();
            if let Ok(narrow) = narrow {
                proptest::prop_assert!(narrow.data.unit_ids().is_subset(&wide.data.unit_ids()));
            }
        }
    }
}
