//! Search over small families of age × education grids for the ones whose
//! support counts come closest to target counts.
//!
//! Family: age edges at a regular width of 4-6 years strictly inside the
//! observed range, with the outer bins extended to the sample minimum and
//! maximum; education edges at a regular integer width inside a window
//! `(lo, hi]`, also extended to the observed range.

use std::collections::BTreeMap;

use fragility_core::strata::{build_support_map, support_share, CellStatus};
use fragility_core::{BinSpec, Dataset};
use serde::Serialize;

use crate::config::BinConfig;
use crate::error::{Error, Result};

/// Target support counts for the fine grid: (both, control-only,
/// treated-only, empty).
pub const FINE_TARGET: (usize, usize, usize, usize) = (37, 27, 1, 7);
pub const FINE_CELLS: usize = 72;
pub const COARSE_CELLS: usize = 42;
pub const COARSE_TREATED_FREE: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCandidate {
    pub age_width: u32,
    pub age_edges: Vec<f64>,
    pub education_edges: Vec<f64>,
    pub both: usize,
    pub control_only: usize,
    pub treated_only: usize,
    pub empty: usize,
    /// L1 distance of the counts from the target.
    pub distance: usize,
}

impl GridCandidate {
    pub fn cells(&self) -> usize {
        (self.age_edges.len() - 1) * (self.education_edges.len() - 1)
    }

    pub fn treated_free(&self) -> usize {
        self.control_only + self.empty
    }

    pub fn bins(&self) -> Vec<BinConfig> {
        vec![
            BinConfig {
                dimension: "age".into(),
                edges: self.age_edges.clone(),
            },
            BinConfig {
                dimension: "education".into(),
                edges: self.education_edges.clone(),
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub controls: String,
    pub fine: GridCandidate,
    pub fine_exact: bool,
    pub coarse: GridCandidate,
    pub coarse_exact: bool,
    pub candidates_scanned: usize,
}

fn extended_edges(lo: f64, hi: f64, start: f64, width: f64, window: (f64, f64)) -> Vec<f64> {
    let mut edges = vec![lo];
    let mut x = start;
    while x < hi {
        if x > lo && x > window.0 && x <= window.1 {
            edges.push(x);
        }
        x += width;
    }
    edges.push(hi);
    edges
}

fn range(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
}

/// Counts per distinct (age, education) pair.
struct PointCounts {
    points: Vec<(f64, f64, usize, usize)>,
}

impl PointCounts {
    fn new(data: &Dataset) -> Result<Self> {
        let age = data.covariate("age")?;
        let edu = data.covariate("education")?;
        let mut map: BTreeMap<(u64, u64), (usize, usize)> = BTreeMap::new();
        for ((a, e), u) in age.iter().zip(&edu).zip(data.records()) {
            let c = map.entry((a.to_bits(), e.to_bits())).or_default();
            if u.treated {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        Ok(Self {
            points: map
                .into_iter()
                .map(|((a, e), (t, c))| (f64::from_bits(a), f64::from_bits(e), t, c))
                .collect(),
        })
    }

    fn classify(&self, age: &[f64], edu: &[f64]) -> (usize, usize, usize, usize) {
        let na = age.len() - 1;
        let ne = edu.len() - 1;
        let mut t = vec![0usize; na * ne];
        let mut c = vec![0usize; na * ne];
        let locate = |edges: &[f64], v: f64| (edges.partition_point(|e| *e <= v).max(1) - 1).min(edges.len() - 2);
        for &(a, e, nt, nc) in &self.points {
            let k = locate(age, a) * ne + locate(edu, e);
            t[k] += nt;
            c[k] += nc;
        }
        let mut out = (0, 0, 0, 0);
        for (t, c) in t.iter().zip(&c) {
            match CellStatus::from_counts(*t, *c) {
                CellStatus::Both => out.0 += 1,
                CellStatus::ControlOnly => out.1 += 1,
                CellStatus::TreatedOnly => out.2 += 1,
                CellStatus::Empty => out.3 += 1,
            }
        }
        out
    }
}

fn l1(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> usize {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) + a.2.abs_diff(b.2) + a.3.abs_diff(b.3)
}

/// Scans the grid family on `data` for the two targets.
pub fn calibrate(data: &Dataset, controls: &str) -> Result<Calibration> {
    let counts = PointCounts::new(data)?;
    let (amin, amax) = range(&data.covariate("age")?);
    let (emin, emax) = range(&data.covariate("education")?);

    let mut ages = Vec::new();
    for width in 4..=6u32 {
        for offset in 0..width {
            let start = amin.floor() - f64::from(width) + 1.0 + f64::from(offset);
            let edges = extended_edges(amin, amax, start, f64::from(width), (f64::NEG_INFINITY, f64::INFINITY));
            if !ages.iter().any(|(_, e): &(u32, Vec<f64>)| *e == edges) {
                ages.push((width, edges));
            }
        }
    }
    let mut edus: Vec<Vec<f64>> = Vec::new();
    for width in 1..=6u32 {
        for offset in 0..width {
            for lo in 0..10 {
                for hi in 10..18 {
                    let edges = extended_edges(
                        emin,
                        emax,
                        f64::from(offset),
                        f64::from(width),
                        (f64::from(lo), f64::from(hi)),
                    );
                    if !edus.contains(&edges) {
                        edus.push(edges);
                    }
                }
            }
        }
    }

    let mut best_fine: Option<GridCandidate> = None;
    let mut best_coarse: Option<GridCandidate> = None;
    let mut scanned = 0;
    for (width, age) in &ages {
        for edu in &edus {
            let cells = (age.len() - 1) * (edu.len() - 1);
            if cells != FINE_CELLS && cells != COARSE_CELLS {
                continue;
            }
            scanned += 1;
            let k = counts.classify(age, edu);
            let make = |distance| GridCandidate {
                age_width: *width,
                age_edges: age.clone(),
                education_edges: edu.clone(),
                both: k.0,
                control_only: k.1,
                treated_only: k.2,
                empty: k.3,
                distance,
            };
            // the stated five-year width wins ties
            let rank = |c: &GridCandidate| (c.distance, c.age_width != 5);
            if cells == FINE_CELLS {
                let cand = make(l1(k, FINE_TARGET));
                if best_fine.as_ref().is_none_or(|b| rank(&cand) < rank(b)) {
                    best_fine = Some(cand);
                }
            } else {
                let cand = make((k.1 + k.3).abs_diff(COARSE_TREATED_FREE));
                if best_coarse.as_ref().is_none_or(|b| rank(&cand) < rank(b)) {
                    best_coarse = Some(cand);
                }
            }
        }
    }
    let fine = best_fine.ok_or_else(|| Error::Output("no 72-cell grid in the family".into()))?;
    let coarse = best_coarse.ok_or_else(|| Error::Output("no 42-cell grid in the family".into()))?;
    verify(data, &fine)?;
    verify(data, &coarse)?;
    Ok(Calibration {
        controls: controls.into(),
        fine_exact: fine.distance == 0,
        coarse_exact: coarse.distance == 0,
        fine,
        coarse,
        candidates_scanned: scanned,
    })
}

/// Rebuilds the support map through the library path and checks the counts.
fn verify(data: &Dataset, cand: &GridCandidate) -> Result<()> {
    let bins = vec![
        BinSpec::new("age", cand.age_edges.clone())?,
        BinSpec::new("education", cand.education_edges.clone())?,
    ];
    let map = build_support_map(data, &bins)?;
    let got = (
        map.count_status(CellStatus::Both),
        map.count_status(CellStatus::ControlOnly),
        map.count_status(CellStatus::TreatedOnly),
        map.count_status(CellStatus::Empty),
    );
    let want = (cand.both, cand.control_only, cand.treated_only, cand.empty);
    if got != want {
        return Err(Error::Output(format!("calibration counts {want:?} disagree with support map {got:?}")));
    }
    let _ = support_share(&map);
    Ok(())
}

/// TOML `[support]` section freezing the calibrated grids.
pub fn support_toml(cal: &Calibration) -> String {
    let fmt = |edges: &[f64]| {
        edges.iter().map(|e| format!("{e}")).collect::<Vec<_>>().join(", ")
    };
    let section = |name: &str, c: &GridCandidate| {
        format!(
            "{name} = [\n  {{ dimension = \"age\", edges = [{}] }},\n  {{ dimension = \"education\", edges = [{}] }},\n]\n",
            fmt(&c.age_edges),
            fmt(&c.education_edges)
        )
    };
    format!(
        "[support]\n# calibrated on nsw_treated + {}: fine {:?} ({} cells), coarse {} treated-free of {}\n{}{}",
        cal.controls,
        (cal.fine.both, cal.fine.control_only, cal.fine.treated_only, cal.fine.empty),
        cal.fine.cells(),
        cal.coarse.treated_free(),
        cal.coarse.cells(),
        section("fine", &cal.fine),
        section("coarse", &cal.coarse)
    )
}
