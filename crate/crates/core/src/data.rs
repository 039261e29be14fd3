//! Canonical in-memory observational table.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Field separator of a delimited text table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Delimiter {
    Whitespace,
    Comma,
}

/// Column layout of a delimited table and the roles of its columns.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SchemaSpec {
    pub column_names: Vec<String>,
    pub treatment_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
    pub delimiter: Delimiter,
}

/// Column order of the public NSW / PSID / CPS files.
pub const LALONDE_COLUMNS: [&str; 10] = [
    "treat", "age", "education", "black", "hispanic", "married", "nodegree", "re74", "re75", "re78",
];

/// Pre-treatment covariates used for the propensity model.
pub const LALONDE_COVARIATES: [&str; 8] = [
    "age", "education", "black", "hispanic", "married", "nodegree", "re74", "re75",
];

impl SchemaSpec {
    pub fn new(
        column_names: Vec<String>,
        treatment_column: impl Into<String>,
        outcome_column: impl Into<String>,
        covariate_columns: Vec<String>,
        delimiter: Delimiter,
    ) -> Result<Self> {
        let schema = Self {
            column_names,
            treatment_column: treatment_column.into(),
            outcome_column: outcome_column.into(),
            covariate_columns,
            delimiter,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// The Dehejia-Wahba layout: `treat age education black hispanic married
    /// nodegree re74 re75 re78`, outcome `re78`.
    pub fn lalonde() -> Self {
        Self {
            column_names: LALONDE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            treatment_column: "treat".into(),
            outcome_column: "re78".into(),
            covariate_columns: LALONDE_COVARIATES.iter().map(|s| s.to_string()).collect(),
            delimiter: Delimiter::Whitespace,
        }
    }

    /// `(d, y, latent_type)` layout for simulated samples; the latent type
    /// index is carried as the single covariate.
    pub fn simulated() -> Self {
        Self {
            column_names: alloc::vec!["d".into(), "y".into(), "latent_type".into()],
            treatment_column: "d".into(),
            outcome_column: "y".into(),
            covariate_columns: alloc::vec!["latent_type".into()],
            delimiter: Delimiter::Comma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in &self.column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate column `{name}`")));
            }
        }
        for role in [&self.treatment_column, &self.outcome_column] {
            if !seen.contains(role.as_str()) {
                return Err(Error::Validation(format!("column `{role}` missing from layout")));
            }
        }
        if self.covariate_columns.is_empty() {
            return Err(Error::Validation("no covariate columns".into()));
        }
        for c in &self.covariate_columns {
            if !seen.contains(c.as_str()) {
                return Err(Error::Validation(format!("covariate `{c}` missing from layout")));
            }
            if c == &self.treatment_column || c == &self.outcome_column {
                return Err(Error::Validation(format!("`{c}` cannot be a covariate")));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Position of a covariate inside `UnitRecord::covariates`.
    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_columns.iter().position(|c| c == name)
    }

    /// Schemas are interchangeable when every role matches; the delimiter
    /// is a property of the file, not of the table.
    pub fn compatible_with(&self, other: &Self) -> bool {
        self.column_names == other.column_names
            && self.treatment_column == other.treatment_column
            && self.outcome_column == other.outcome_column
            && self.covariate_columns == other.covariate_columns
    }
}

/// One observed unit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct UnitRecord {
    pub unit_id: usize,
    pub treated: bool,
    pub outcome: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    records: Vec<UnitRecord>,
    schema: SchemaSpec,
    provenance: String,
}

impl Dataset {
    /// Validates ids, outcome finiteness and covariate arity.
    pub fn new(
        records: Vec<UnitRecord>,
        schema: SchemaSpec,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let arity = schema.covariate_columns.len();
        let mut ids = BTreeSet::new();
        for r in &records {
            if !ids.insert(r.unit_id) {
                return Err(Error::Validation(format!("duplicate unit_id {}", r.unit_id)));
            }
            if !r.outcome.is_finite() {
                return Err(Error::Validation(format!(
                    "unit {} has non-finite outcome",
                    r.unit_id
                )));
            }
            if r.covariates.len() != arity {
                return Err(Error::Validation(format!(
                    "unit {} has {} covariates, schema declares {arity}",
                    r.unit_id,
                    r.covariates.len()
                )));
            }
            if r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "unit {} has a missing covariate",
                    r.unit_id
                )));
            }
        }
        Ok(Self {
            records,
            schema,
            provenance: provenance.into(),
        })
    }

    /// Keeps the records that satisfy `keep`, preserving their ids.
    pub fn filter(&self, mut keep: impl FnMut(&UnitRecord) -> bool) -> Self {
        Self {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            schema: self.schema.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Rebuilds from already-validated records, renumbering ids `0..n`.
    pub fn renumbered(records: Vec<UnitRecord>, schema: SchemaSpec, provenance: String) -> Self {
        let records = records
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.unit_id = i;
                r
            })
            .collect();
        Self {
            records,
            schema,
            provenance,
        }
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn schema(&self) -> &SchemaSpec {
        &self.schema
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn treated_count(&self) -> usize {
        self.records.iter().filter(|r| r.treated).count()
    }

    pub fn control_count(&self) -> usize {
        self.len() - self.treated_count()
    }

    pub fn treated(&self) -> impl Iterator<Item = &UnitRecord> {
        self.records.iter().filter(|r| r.treated)
    }

    pub fn controls(&self) -> impl Iterator<Item = &UnitRecord> {
        self.records.iter().filter(|r| !r.treated)
    }

    pub fn treated_outcomes(&self) -> Vec<f64> {
        self.treated().map(|r| r.outcome).collect()
    }

    pub fn control_outcomes(&self) -> Vec<f64> {
        self.controls().map(|r| r.outcome).collect()
    }

    /// Fails unless both treatment arms are represented.
    pub fn require_both_arms(&self) -> Result<()> {
        let t = self.treated_count();
        if t == 0 || t == self.len() {
            return Err(Error::Validation(format!(
                "estimation needs both arms: {t} treated, {} control",
                self.len() - t
            )));
        }
        Ok(())
    }

    /// Column of one covariate across all units.
    pub fn covariate(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .schema
            .covariate_index(name)
            .ok_or_else(|| Error::Validation(format!("unknown covariate `{name}`")))?;
        Ok(self.records.iter().map(|r| r.covariates[j]).collect())
    }

    pub fn unit_ids(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.unit_id).collect()
    }
}

/// Which rows [`merge`] retains from each source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MergeKeep {
    /// Treated rows of the first source, control rows of the second.
    TreatedOnly,
    /// Control rows of the first source, treated rows of the second.
    ControlOnly,
    /// Every row of both sources.
    All,
}

/// Concatenates two sources with fresh ids `0..n`.
pub fn merge(first: &Dataset, second: &Dataset, keep: MergeKeep) -> Result<Dataset> {
    if !first.schema.compatible_with(&second.schema) {
        return Err(Error::Merge("schemas differ".into()));
    }
    if second.is_empty() && keep == MergeKeep::All {
        return Ok(first.clone());
    }
    let take = |r: &UnitRecord, from_first: bool| match keep {
        MergeKeep::All => true,
        MergeKeep::TreatedOnly => r.treated == from_first,
        MergeKeep::ControlOnly => r.treated != from_first,
    };
    let records: Vec<UnitRecord> = first
        .records
        .iter()
        .filter(|r| take(r, true))
        .chain(second.records.iter().filter(|r| take(r, false)))
        .cloned()
        .collect();
    let provenance = match keep {
        MergeKeep::All => format!("{}+{}", first.provenance, second.provenance),
        MergeKeep::TreatedOnly => format!("{}_treated+{}_controls", first.provenance, second.provenance),
        MergeKeep::ControlOnly => format!("{}_controls+{}_treated", first.provenance, second.provenance),
    };
    Ok(Dataset::renumbered(records, first.schema.clone(), provenance))
}
