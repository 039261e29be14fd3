//! Binary potential-outcome population with outcome-dependent selection,
//! and a pair of data-generating processes with one observed law but
//! different ATTs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, SchemaSpec, UnitRecord};
use crate::estimators::naive_diff;
use crate::identification::{fixed_radius_sets, massi, Interval};
use crate::math;
use crate::rng::{stage, CounterRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub n: usize,
    /// Shares of types A, B, C, D.
    pub type_proportions: [f64; 4],
    pub treat_prob: f64,
    pub delta_grid: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            type_proportions: [0.3, 0.2, 0.4, 0.1],
            treat_prob: 0.5,
            delta_grid: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            epsilon: 0.3,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("n must be >= 1".into()));
        }
        let p = &self.type_proportions;
        if p.iter().any(|v| !(*v >= 0.0)) || math::abs(p.iter().sum::<f64>() - 1.0) > 1e-12 {
            return Err(Error::Domain(format!("type proportions {p:?} must be >= 0 and sum to 1")));
        }
        if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
            return Err(Error::Domain("treat_prob must lie in (0, 1)".into()));
        }
        if self.delta_grid.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Domain("delta grid must be >= 0".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Domain("epsilon must be >= 0".into()));
        }
        Ok(())
    }

    /// ATE implied by the type shares: `P(A) - P(B)`.
    pub fn expected_ate(&self) -> f64 {
        self.type_proportions[0] - self.type_proportions[1]
    }
}

/// Latent response type with its `(Y(1), Y(0))` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum LatentType {
    /// (1, 0)
    A,
    /// (0, 1)
    B,
    /// (1, 1)
    C,
    /// (0, 0)
    D,
}

impl LatentType {
    pub const ALL: [LatentType; 4] = [LatentType::A, LatentType::B, LatentType::C, LatentType::D];

    pub fn outcomes(self) -> (u8, u8) {
        match self {
            LatentType::A => (1, 0),
            LatentType::B => (0, 1),
            LatentType::C => (1, 1),
            LatentType::D => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimUnit {
    pub latent_type: LatentType,
    pub y1: u8,
    pub y0: u8,
    pub d: u8,
    pub y_observed: u8,
    pub selected: bool,
}

/// Index of the categorical draw `u` under cumulative shares of `probs`.
fn categorical(u: f64, probs: &[f64]) -> usize {
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding can leave u above the final cumulative sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn generate_population(config: &SimConfig) -> Result<Vec<SimUnit>> {
    config.validate()?;
    let mut types = CounterRng::new(config.seed, stage::LATENT_TYPE);
    let mut treat = CounterRng::new(config.seed, stage::TREATMENT);
    Ok((0..config.n as u64)
        .map(|i| {
            let latent_type = LatentType::ALL[categorical(types.uniform_at(i), &config.type_proportions)];
            let (y1, y0) = latent_type.outcomes();
            let d = u8::from(treat.uniform_at(i) < config.treat_prob);
            SimUnit {
                latent_type,
                y1,
                y0,
                d,
                y_observed: if d == 1 { y1 } else { y0 },
                selected: false,
            }
        })
        .collect())
}

/// Population mean of `Y(1) - Y(0)`.
pub fn population_ate(pop: &[SimUnit]) -> f64 {
    let s: i64 = pop.iter().map(|u| i64::from(u.y1) - i64::from(u.y0)).sum();
    s as f64 / pop.len() as f64
}

/// Marks each unit selected with probability `logistic(delta * Y)`.
pub fn mark_selection(pop: &[SimUnit], delta: f64, seed: u64) -> Result<Vec<SimUnit>> {
    if !(delta >= 0.0) {
        return Err(Error::Domain(format!("delta must be >= 0, got {delta}")));
    }
    let mut rng = CounterRng::new(seed, stage::SELECTION);
    Ok(pop
        .iter()
        .enumerate()
        .map(|(i, u)| SimUnit {
            selected: rng.uniform_at(i as u64) < math::logistic(delta * f64::from(u.y_observed)),
            ..*u
        })
        .collect())
}

/// The selected units as a `(d, y)` dataset.
pub fn apply_selection(pop: &[SimUnit], delta: f64, seed: u64) -> Result<Dataset> {
    let marked = mark_selection(pop, delta, seed)?;
    let records = marked
        .iter()
        .filter(|u| u.selected)
        .enumerate()
        .map(|(i, u)| UnitRecord {
            unit_id: i,
            treated: u.d == 1,
            outcome: f64::from(u.y_observed),
            covariates: alloc::vec![u.latent_type as usize as f64],
        })
        .collect();
    Dataset::new(
        records,
        SchemaSpec::simulated(),
        format!("simulation_delta_{delta}"),
    )
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimSweep {
    pub deltas: Vec<f64>,
    pub observed_ates: Vec<f64>,
    pub selected_counts: Vec<usize>,
    pub sets: Vec<Interval>,
    pub massi: f64,
    pub true_ate: f64,
    pub seed: u64,
}

/// Naive ATE on the selected sample at each grid `delta`, wrapped in
/// fixed-radius sets.
pub fn run_sweep(config: &SimConfig) -> Result<SimSweep> {
    let pop = generate_population(config)?;
    let mut observed_ates = Vec::with_capacity(config.delta_grid.len());
    let mut selected_counts = Vec::with_capacity(config.delta_grid.len());
    for &delta in &config.delta_grid {
        let sample = apply_selection(&pop, delta, config.seed)?;
        selected_counts.push(sample.len());
        observed_ates.push(naive_diff(&sample)?.tau_hat);
    }
    let sets = fixed_radius_sets(&observed_ates, config.epsilon)?;
    let wrapped: Vec<Option<Interval>> = sets.iter().copied().map(Some).collect();
    Ok(SimSweep {
        massi: massi(&config.delta_grid, &wrapped),
        deltas: config.delta_grid.clone(),
        observed_ates,
        selected_counts,
        sets,
        true_ate: population_ate(&pop),
        seed: config.seed,
    })
}

/// Joint frequencies of what is observed per unit: the arm, whether the unit
/// was sampled and, if so, its outcome.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrequencyTable {
    /// Outcome values indexing the sampled columns.
    pub outcomes: Vec<u8>,
    /// `counts[d][k]`: sampled units in arm `d` with outcome `outcomes[k]`;
    /// the final column counts unsampled units.
    pub counts: [Vec<usize>; 2],
    pub total: usize,
}

impl FrequencyTable {
    fn tally(outcomes: Vec<u8>, units: impl Iterator<Item = (u8, bool, u8)>) -> Self {
        let width = outcomes.len() + 1;
        let mut counts = [vec![0; width], vec![0; width]];
        let mut total = 0;
        for (d, selected, y) in units {
            let col = if selected {
                outcomes.iter().position(|v| *v == y).expect("outcome in table support")
            } else {
                width - 1
            };
            counts[usize::from(d)][col] += 1;
            total += 1;
        }
        Self {
            outcomes,
            counts,
            total,
        }
    }

    pub fn frequency(&self, d: usize, col: usize) -> f64 {
        self.counts[d][col] as f64 / self.total as f64
    }

    /// Total-variation distance between two tables on the same support.
    pub fn tv_distance(&self, other: &FrequencyTable) -> Result<f64> {
        if self.outcomes != other.outcomes || self.total == 0 || other.total == 0 {
            return Err(Error::Witness("tables have different supports".into()));
        }
        let mut s = 0.0;
        for d in 0..2 {
            for col in 0..self.counts[d].len() {
                s += math::abs(self.frequency(d, col) - other.frequency(d, col));
            }
        }
        Ok(0.5 * s)
    }
}

/// Parameters of the witness pair. Outcomes take values `0..k`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WitnessConfig {
    pub n: usize,
    pub y0_probs: Vec<f64>,
    pub y1_probs: Vec<f64>,
    pub treat_prob: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl WitnessConfig {
    pub fn new(threshold: f64, seed: u64) -> Self {
        Self {
            n: 100_000,
            y0_probs: vec![1.0 / 3.0; 3],
            y1_probs: vec![0.2, 0.3, 0.5],
            treat_prob: 0.5,
            threshold,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WitnessReport {
    /// Observed law under ignorable sampling.
    pub law_1: FrequencyTable,
    /// Observed law under sampling on `Y(0) > threshold`.
    pub law_2: FrequencyTable,
    pub att_1: f64,
    pub att_2: f64,
    pub tv_distance: f64,
    /// Per-arm sampling rates of the thresholded process, reused for the
    /// ignorable one.
    pub selection_rates: [f64; 2],
}

struct WitnessUnit {
    d: u8,
    y0: u8,
    y1: u8,
    selected: bool,
}

impl WitnessUnit {
    fn observed(&self) -> (u8, bool, u8) {
        (self.d, self.selected, if self.d == 1 { self.y1 } else { self.y0 })
    }
}

fn att(units: &[WitnessUnit]) -> f64 {
    let (s, n) = units
        .iter()
        .filter(|u| u.d == 1)
        .fold((0i64, 0usize), |(s, n), u| (s + i64::from(u.y1) - i64::from(u.y0), n + 1));
    s as f64 / n as f64
}

/// Two processes that agree on the observed law but not on the ATT.
///
/// The second samples exactly the units with `Y(0) > threshold`. The first
/// draws `Y(0)` from that truncated law for everyone and samples each arm
/// at random at the second's realised rates; `D` and `Y(1)` share random
/// numbers across the pair.
pub fn nonid_witness(threshold_c: f64, seed: u64) -> Result<WitnessReport> {
    nonid_witness_with(&WitnessConfig::new(threshold_c, seed))
}

pub fn nonid_witness_with(cfg: &WitnessConfig) -> Result<WitnessReport> {
    if cfg.n == 0 || !(cfg.treat_prob > 0.0 && cfg.treat_prob < 1.0) {
        return Err(Error::Witness("need n >= 1 and treat_prob in (0, 1)".into()));
    }
    if cfg.y0_probs.len() > 256 || cfg.y1_probs.len() > 256 {
        return Err(Error::Witness("outcome support exceeds 256 values".into()));
    }
    let truncated: Vec<f64> = cfg
        .y0_probs
        .iter()
        .enumerate()
        .map(|(y, p)| if y as f64 > cfg.threshold { *p } else { 0.0 })
        .collect();
    let mass: f64 = truncated.iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Witness(format!(
            "threshold {} leaves no Y(0) mass above it; support 0..{}",
            cfg.threshold,
            cfg.y0_probs.len()
        )));
    }
    let truncated: Vec<f64> = truncated.iter().map(|p| p / mass).collect();

    let mut rd = CounterRng::new(cfg.seed, stage::WITNESS_TREAT);
    let mut r0 = CounterRng::new(cfg.seed, stage::WITNESS_Y0);
    let mut r1 = CounterRng::new(cfg.seed, stage::WITNESS_Y1);
    let mut rs = CounterRng::new(cfg.seed, stage::WITNESS_SELECT);

    let mut second = Vec::with_capacity(cfg.n);
    let mut first = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n as u64 {
        let d = u8::from(rd.uniform_at(i) < cfg.treat_prob);
        let u0 = r0.uniform_at(i);
        let y1 = categorical(r1.uniform_at(i), &cfg.y1_probs) as u8;
        let y0 = categorical(u0, &cfg.y0_probs) as u8;
        second.push(WitnessUnit {
            d,
            y0,
            y1,
            selected: f64::from(y0) > cfg.threshold,
        });
        first.push(WitnessUnit {
            d,
            y0: categorical(u0, &truncated) as u8,
            y1,
            selected: false,
        });
    }

    let mut rates = [0.0; 2];
    for (d, rate) in rates.iter_mut().enumerate() {
        let (sel, tot) = second
            .iter()
            .filter(|u| usize::from(u.d) == d)
            .fold((0usize, 0usize), |(s, t), u| (s + usize::from(u.selected), t + 1));
        if tot == 0 {
            return Err(Error::Witness(format!("arm {d} is empty")));
        }
        *rate = sel as f64 / tot as f64;
    }
    for (i, u) in first.iter_mut().enumerate() {
        u.selected = rs.uniform_at(i as u64) < rates[usize::from(u.d)];
    }

    let support_len = cfg.y0_probs.len().max(cfg.y1_probs.len());
    let outcomes: Vec<u8> = (0..support_len as u16).map(|v| v as u8).collect();
    let law_1 = FrequencyTable::tally(outcomes.clone(), first.iter().map(WitnessUnit::observed));
    let law_2 = FrequencyTable::tally(outcomes, second.iter().map(WitnessUnit::observed));
    let tv_distance = law_1.tv_distance(&law_2)?;
    Ok(WitnessReport {
        att_1: att(&first),
        att_2: att(&second),
        law_1,
        law_2,
        tv_distance,
        selection_rates: rates,
    })
}
