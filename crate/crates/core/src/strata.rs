//! Covariate stratification and the empirical support region.
//!
//! Bins are closed on the left and open on the right, except the last bin
//! of each dimension which is closed on both ends. Cells are stored in
//! row-major order over the grid, first dimension slowest.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, UnitRecord};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BinSpec {
    pub dimension: String,
    pub edges: Vec<f64>,
}

impl BinSpec {
    pub fn new(dimension: impl Into<String>, edges: Vec<f64>) -> Result<Self> {
        let spec = Self {
            dimension: dimension.into(),
            edges,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Bins of constant `width` starting at `start`, extended until `end` is covered.
    pub fn regular(dimension: impl Into<String>, start: f64, width: f64, end: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Validation("bin width must be positive".into()));
        }
        let mut edges = vec![start];
        while *edges.last().unwrap() < end {
            let next = start + width * edges.len() as f64;
            edges.push(next);
        }
        if edges.len() < 2 {
            edges.push(start + width);
        }
        Self::new(dimension, edges)
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() < 2 {
            return Err(Error::Validation(format!(
                "bins for `{}` need at least two edges",
                self.dimension
            )));
        }
        if self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::Validation(format!("non-finite edge for `{}`", self.dimension)));
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Validation(format!(
                "edges for `{}` must be strictly increasing",
                self.dimension
            )));
        }
        Ok(())
    }

    pub fn bin_count(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin holding `v`, or `None` outside `[first edge, last edge]`.
    pub fn locate(&self, v: f64) -> Option<usize> {
        let first = self.edges[0];
        let last = *self.edges.last().unwrap();
        if !(v >= first && v <= last) {
            return None;
        }
        let idx = self.edges.partition_point(|e| *e <= v) - 1;
        Some(idx.min(self.bin_count() - 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CellStatus {
    Both,
    TreatedOnly,
    ControlOnly,
    Empty,
}

impl CellStatus {
    pub fn from_counts(treated: usize, control: usize) -> Self {
        match (treated > 0, control > 0) {
            (true, true) => CellStatus::Both,
            (true, false) => CellStatus::TreatedOnly,
            (false, true) => CellStatus::ControlOnly,
            (false, false) => CellStatus::Empty,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Both => "both",
            CellStatus::TreatedOnly => "treated_only",
            CellStatus::ControlOnly => "control_only",
            CellStatus::Empty => "empty",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cell {
    pub index: Vec<usize>,
    pub treated: usize,
    pub control: usize,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupportMap {
    pub grid: Vec<BinSpec>,
    pub cells: Vec<Cell>,
}

impl SupportMap {
    pub fn total_cells(&self) -> usize {
        self.cells.len()
    }

    /// Multi-indices of cells holding both arms (the region X*).
    pub fn support_region(&self) -> impl Iterator<Item = &[usize]> {
        self.cells
            .iter()
            .filter(|c| c.status == CellStatus::Both)
            .map(|c| c.index.as_slice())
    }

    pub fn count_status(&self, status: CellStatus) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }

    pub fn treated_total(&self) -> usize {
        self.cells.iter().map(|c| c.treated).sum()
    }

    pub fn control_total(&self) -> usize {
        self.cells.iter().map(|c| c.control).sum()
    }

    /// Flat cell index of a unit under this map's grid.
    pub fn cell_of(&self, data: &Dataset, unit: &UnitRecord) -> Result<usize> {
        let columns = bind_grid(data, &self.grid)?;
        locate_unit(&self.grid, &columns, unit)
    }
}

fn bind_grid(data: &Dataset, bins: &[BinSpec]) -> Result<Vec<usize>> {
    bins.iter()
        .map(|b| {
            b.validate()?;
            data.schema().covariate_index(&b.dimension).ok_or_else(|| {
                Error::Validation(format!("stratified dimension `{}` is not a covariate", b.dimension))
            })
        })
        .collect()
}

fn locate_unit(bins: &[BinSpec], columns: &[usize], unit: &UnitRecord) -> Result<usize> {
    let mut flat = 0;
    for (b, &col) in bins.iter().zip(columns) {
        let v = unit.covariates[col];
        let i = b.locate(v).ok_or_else(|| Error::Binning {
            unit_id: unit.unit_id,
            dimension: b.dimension.clone(),
            value: v,
        })?;
        flat = flat * b.bin_count() + i;
    }
    Ok(flat)
}

fn unflatten(bins: &[BinSpec], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; bins.len()];
    for (slot, b) in idx.iter_mut().zip(bins).rev() {
        *slot = flat % b.bin_count();
        flat /= b.bin_count();
    }
    idx
}

pub fn build_support_map(data: &Dataset, bins: &[BinSpec]) -> Result<SupportMap> {
    if bins.is_empty() {
        return Err(Error::Validation("empty grid".into()));
    }
    let columns = bind_grid(data, bins)?;
    let total: usize = bins.iter().map(BinSpec::bin_count).product();
    let mut treated = vec![0usize; total];
    let mut control = vec![0usize; total];
    for unit in data.records() {
        let k = locate_unit(bins, &columns, unit)?;
        if unit.treated {
            treated[k] += 1;
        } else {
            control[k] += 1;
        }
    }
    let cells = (0..total)
        .map(|k| Cell {
            index: unflatten(bins, k),
            treated: treated[k],
            control: control[k],
            status: CellStatus::from_counts(treated[k], control[k]),
        })
        .collect();
    Ok(SupportMap {
        grid: bins.to_vec(),
        cells,
    })
}

/// Fractions of cells in each status; they sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SupportShare {
    pub both: f64,
    pub control_only: f64,
    pub treated_only: f64,
    pub empty: f64,
}

pub fn support_share(map: &SupportMap) -> SupportShare {
    let n = map.total_cells() as f64;
    let frac = |s| map.count_status(s) as f64 / n;
    SupportShare {
        both: frac(CellStatus::Both),
        control_only: frac(CellStatus::ControlOnly),
        treated_only: frac(CellStatus::TreatedOnly),
        empty: frac(CellStatus::Empty),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridAudit {
    pub total_cells: usize,
    pub cells_without_treated: usize,
}

pub fn coarse_grid_audit(data: &Dataset, bins: &[BinSpec]) -> Result<GridAudit> {
    let map = build_support_map(data, bins)?;
    Ok(GridAudit {
        total_cells: map.total_cells(),
        cells_without_treated: map.count_status(CellStatus::ControlOnly)
            + map.count_status(CellStatus::Empty),
    })
}

/// Units whose cell holds both arms.
pub fn restrict_to_overlap(data: &Dataset, map: &SupportMap) -> Result<Dataset> {
    if map.treated_total() != data.treated_count() || map.control_total() != data.control_count() {
        return Err(Error::Validation(
            "support map was not built from this dataset".into(),
        ));
    }
    let columns = bind_grid(data, &map.grid)?;
    let mut keep = Vec::with_capacity(data.len());
    for unit in data.records() {
        let k = locate_unit(&map.grid, &columns, unit)?;
        keep.push(map.cells[k].status == CellStatus::Both);
    }
    let mut it = keep.into_iter();
    let restricted = data.filter(|_| it.next().unwrap_or(false));
    if restricted.treated_count() == 0 || restricted.control_count() == 0 {
        return Err(Error::Restriction("no overlap region".into()));
    }
    Ok(restricted)
}
