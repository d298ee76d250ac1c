//! Data model shared by every stage: variable registries, census constraint
//! tables, survey microdata and the pre-fit consistency checks.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Zone totals agreeing to this relative difference are treated as consistent.
pub const CONSISTENT_TOLERANCE: f64 = 1e-9;

/// Relative zone-total disagreement above which the pipeline refuses to run
/// without an explicit override.
pub const OVERRIDE_THRESHOLD: f64 = 0.05;

/// A categorical variable and its ordered category labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableDef {
    pub name: String,
    pub categories: Vec<String>,
}

impl VariableDef {
    pub fn new<N, I, S>(name: N, categories: I) -> Result<Self>
    where
        N: Into<String>,
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let name = name.into();
        let categories: Vec<String> = categories.into_iter().map(Into::into).collect();
        if name.is_empty() {
            return Err(Error::Schema("variable name is empty".into()));
        }
        if categories.len() < 2 {
            return Err(Error::Schema(format!(
                "variable '{name}' needs at least two categories"
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &categories {
            if c.is_empty() {
                return Err(Error::Schema(format!("variable '{name}' has an empty label")));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "variable '{name}' repeats category '{c}'"
                )));
            }
        }
        Ok(Self { name, categories })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

/// Declarative description of a census/survey pairing.
///
/// `constraint_vars` is ordered: the order is the IPF fitting order and the
/// first variable is the reference for zone populations.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub constraint_vars: Vec<VariableDef>,
    pub external_vars: Vec<VariableDef>,
    pub income_field: String,
    pub deprivation_fields: Vec<String>,
    pub numeric_fields: Vec<String>,
    pub household_field: String,
}

impl Schema {
    pub fn new(
        constraint_vars: Vec<VariableDef>,
        external_vars: Vec<VariableDef>,
        income_field: impl Into<String>,
        deprivation_fields: Vec<String>,
        numeric_fields: Vec<String>,
        household_field: impl Into<String>,
    ) -> Result<Self> {
        if constraint_vars.is_empty() {
            return Err(Error::Schema("no constraint variables".into()));
        }
        let mut names = BTreeSet::new();
        for v in constraint_vars.iter().chain(&external_vars) {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("variable '{}' declared twice", v.name)));
            }
        }
        let mut fields = BTreeSet::new();
        for f in deprivation_fields.iter().chain(&numeric_fields) {
            if f.is_empty() || !fields.insert(f.as_str()) {
                return Err(Error::Schema(format!("field '{f}' is empty or declared twice")));
            }
        }
        Ok(Self {
            constraint_vars,
            external_vars,
            income_field: income_field.into(),
            deprivation_fields,
            numeric_fields,
            household_field: household_field.into(),
        })
    }

    pub fn constraint_index(&self, name: &str) -> Option<usize> {
        self.constraint_vars.iter().position(|v| v.name == name)
    }

    pub fn external_index(&self, name: &str) -> Option<usize> {
        self.external_vars.iter().position(|v| v.name == name)
    }

    pub fn numeric_index(&self, name: &str) -> Option<usize> {
        self.numeric_fields.iter().position(|f| f == name)
    }

    pub fn deprivation_index(&self, name: &str) -> Option<usize> {
        self.deprivation_fields.iter().position(|f| f == name)
    }

    /// Resolves a variable name against constraint variables first, then
    /// external ones.
    pub fn variable(&self, name: &str) -> Option<VariableRef> {
        self.constraint_index(name)
            .map(VariableRef::Constraint)
            .or_else(|| self.external_index(name).map(VariableRef::External))
    }

    pub fn variable_def(&self, var: VariableRef) -> &VariableDef {
        match var {
            VariableRef::Constraint(i) => &self.constraint_vars[i],
            VariableRef::External(i) => &self.external_vars[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariableRef {
    Constraint(usize),
    External(usize),
}

/// Zone × category census counts for one constraint variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTable {
    pub variable: String,
    pub zones: Vec<String>,
    pub categories: Vec<String>,
    /// `counts[zone][category]`
    pub counts: Vec<Vec<f64>>,
}

impl ConstraintTable {
    pub fn new(
        variable: impl Into<String>,
        zones: Vec<String>,
        categories: Vec<String>,
        counts: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let variable = variable.into();
        if counts.len() != zones.len() {
            return Err(Error::Dimension(format!(
                "table '{variable}': {} rows for {} zones",
                counts.len(),
                zones.len()
            )));
        }
        if let Some(row) = counts.iter().find(|r| r.len() != categories.len()) {
            return Err(Error::Dimension(format!(
                "table '{variable}': row of {} cells for {} categories",
                row.len(),
                categories.len()
            )));
        }
        Ok(Self {
            variable,
            zones,
            categories,
            counts,
        })
    }

    pub fn zone_total(&self, zone: usize) -> f64 {
        self.counts[zone].iter().sum()
    }

    pub fn n_zones(&self) -> usize {
        self.zones.len()
    }
}

/// One person-level survey record. Categorical attributes are stored as
/// indices into the schema's category lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub record_id: String,
    pub household_id: String,
    /// One index per constraint variable, in schema order.
    pub categories: Vec<usize>,
    /// One entry per external variable; `None` when not applicable.
    pub external: Vec<Option<usize>>,
    pub income: Option<f64>,
    /// One entry per deprivation field; `None` when the cell was empty.
    pub deprivation: Vec<Option<bool>>,
    /// One entry per numeric field.
    pub numeric: Vec<Option<f64>>,
}

impl SurveyRecord {
    /// Number of deprivation items this person lacks. Missing items count as
    /// not lacking.
    pub fn lacked_items(&self) -> usize {
        self.deprivation.iter().filter(|d| **d == Some(true)).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurveyDataset {
    pub records: Vec<SurveyRecord>,
}

impl SurveyDataset {
    /// Checks every record against `schema`.
    pub fn new(schema: &Schema, records: Vec<SurveyRecord>) -> Result<Self> {
        for r in &records {
            if r.household_id.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "record '{}' has no household id",
                    r.record_id
                )));
            }
            if r.categories.len() != schema.constraint_vars.len()
                || r.external.len() != schema.external_vars.len()
                || r.deprivation.len() != schema.deprivation_fields.len()
                || r.numeric.len() != schema.numeric_fields.len()
            {
                return Err(Error::Dimension(format!(
                    "record '{}' does not match the schema layout",
                    r.record_id
                )));
            }
            for (var, &c) in schema.constraint_vars.iter().zip(&r.categories) {
                if c >= var.len() {
                    return Err(Error::UnknownCategory {
                        variable: var.name.clone(),
                        category: c.to_string(),
                    });
                }
            }
            for (var, c) in schema.external_vars.iter().zip(&r.external) {
                if matches!(c, Some(c) if *c >= var.len()) {
                    return Err(Error::UnknownCategory {
                        variable: var.name.clone(),
                        category: c.unwrap().to_string(),
                    });
                }
            }
            if matches!(r.income, Some(x) if !x.is_finite() || x < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "record '{}' has an invalid income",
                    r.record_id
                )));
            }
        }
        Ok(Self { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Many-to-one grouping of a variable's fine categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crosswalk {
    pub variable: String,
    /// `(fine, group)` pairs in declaration order.
    pub mapping: Vec<(String, String)>,
}

impl Crosswalk {
    pub fn new(variable: impl Into<String>, mapping: Vec<(String, String)>) -> Result<Self> {
        let variable = variable.into();
        let mut seen = BTreeSet::new();
        for (fine, _) in &mapping {
            if !seen.insert(fine.as_str()) {
                return Err(Error::Schema(format!(
                    "crosswalk for '{variable}' maps '{fine}' more than once"
                )));
            }
        }
        Ok(Self { variable, mapping })
    }

    pub fn group_of(&self, fine: &str) -> Option<&str> {
        self.mapping
            .iter()
            .find(|(f, _)| f == fine)
            .map(|(_, g)| g.as_str())
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, g) in &self.mapping {
            if !out.contains(g) {
                out.push(g.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvalidCount {
    pub variable: String,
    pub zone: String,
    pub category: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub zones: Vec<String>,
    pub variables: Vec<String>,
    /// `zone_totals[zone][variable]`
    pub zone_totals: Vec<Vec<f64>>,
    /// Relative spread `(max - min) / max` of each zone's totals across variables.
    pub zone_disagreement: Vec<f64>,
    pub max_disagreement: f64,
    /// `(variable, category)` pairs with census mass but no survey record.
    pub empty_cells: Vec<(String, String)>,
    pub invalid_counts: Vec<InvalidCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CheckStatus {
    Clean,
    Warnings,
    Errors,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.max_disagreement <= CONSISTENT_TOLERANCE
    }

    /// True when zone totals disagree badly enough that proceeding needs an
    /// explicit override.
    pub fn needs_override(&self) -> bool {
        self.max_disagreement > OVERRIDE_THRESHOLD
    }

    pub fn inconsistent_zones(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.zone_disagreement
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, d)| *d > CONSISTENT_TOLERANCE)
    }

    pub fn status(&self) -> CheckStatus {
        if !self.invalid_counts.is_empty() {
            CheckStatus::Errors
        } else if !self.is_consistent() || !self.empty_cells.is_empty() {
            CheckStatus::Warnings
        } else {
            CheckStatus::Clean
        }
    }
}

/// Orders `tables` by the schema's constraint variables and verifies their
/// category lists and zone lists.
pub fn align_tables<'a>(
    schema: &Schema,
    tables: &'a [ConstraintTable],
) -> Result<Vec<&'a ConstraintTable>> {
    for t in tables {
        if schema.constraint_index(&t.variable).is_none() {
            return Err(Error::UnknownVariable(t.variable.clone()));
        }
    }
    let mut out = Vec::with_capacity(schema.constraint_vars.len());
    for var in &schema.constraint_vars {
        let table = tables
            .iter()
            .find(|t| t.variable == var.name)
            .ok_or_else(|| Error::MissingTable(var.name.clone()))?;
        if let Some(c) = table.categories.iter().find(|c| var.index_of(c).is_none()) {
            return Err(Error::UnknownCategory {
                variable: var.name.clone(),
                category: c.clone(),
            });
        }
        if table.categories != var.categories {
            return Err(Error::Dimension(format!(
                "table '{}' categories are not in schema order",
                var.name
            )));
        }
        out.push(table);
    }
    let first = out[0];
    if let Some(t) = out.iter().find(|t| t.zones != first.zones) {
        return Err(Error::ZoneMismatch {
            reference: first.variable.clone(),
            other: t.variable.clone(),
        });
    }
    Ok(out)
}

/// Reports zone-total disagreement across tables, census categories the
/// survey cannot populate, and negative or non-finite counts.
pub fn check_consistency(
    schema: &Schema,
    tables: &[ConstraintTable],
    survey: &SurveyDataset,
) -> Result<ConsistencyReport> {
    let tables = align_tables(schema, tables)?;
    let zones = tables[0].zones.clone();

    let mut invalid_counts = Vec::new();
    for t in &tables {
        for (z, row) in t.counts.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    invalid_counts.push(InvalidCount {
                        variable: t.variable.clone(),
                        zone: zones[z].clone(),
                        category: t.categories[c].clone(),
                        value: v,
                    });
                }
            }
        }
    }

    let zone_totals: Vec<Vec<f64>> = (0..zones.len())
        .map(|z| tables.iter().map(|t| t.zone_total(z)).collect())
        .collect();
    let zone_disagreement: Vec<f64> = zone_totals
        .iter()
        .map(|totals| relative_spread(totals))
        .collect();
    let max_disagreement = zone_disagreement.iter().copied().fold(0.0, f64::max);

    let mut empty_cells = Vec::new();
    for (v, t) in tables.iter().enumerate() {
        let mut supported = alloc::vec![false; t.categories.len()];
        for r in &survey.records {
            supported[r.categories[v]] = true;
        }
        for (c, label) in t.categories.iter().enumerate() {
            let census: f64 = t.counts.iter().map(|row| row[c]).sum();
            if census > 0.0 && !supported[c] {
                empty_cells.push((t.variable.clone(), label.clone()));
            }
        }
    }

    Ok(ConsistencyReport {
        zones,
        variables: tables.iter().map(|t| t.variable.clone()).collect(),
        zone_totals,
        zone_disagreement,
        max_disagreement,
        empty_cells,
        invalid_counts,
    })
}

fn relative_spread(totals: &[f64]) -> f64 {
    let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) {
        0.0
    } else {
        (max - min) / max
    }
}

/// Scales every table's zone rows so each zone total matches the reference
/// table, preserving within-row proportions.
pub fn rescale_constraints(
    tables: &[ConstraintTable],
    reference_variable: &str,
) -> Result<Vec<ConstraintTable>> {
    let reference = tables
        .iter()
        .find(|t| t.variable == reference_variable)
        .ok_or_else(|| Error::UnknownVariable(reference_variable.into()))?;
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        if t.zones != reference.zones {
            return Err(Error::ZoneMismatch {
                reference: reference.variable.clone(),
                other: t.variable.clone(),
            });
        }
        if t.variable == reference.variable {
            out.push(t.clone());
            continue;
        }
        let mut scaled = t.clone();
        for (z, row) in scaled.counts.iter_mut().enumerate() {
            let target = reference.zone_total(z);
            let total: f64 = row.iter().sum();
            if total == target {
                continue;
            }
            if total == 0.0 || target == 0.0 {
                return Err(Error::Rescale {
                    zone: t.zones[z].clone(),
                    variable: t.variable.clone(),
                    reference: target,
                    total,
                });
            }
            let factor = target / total;
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
        out.push(scaled);
    }
    Ok(out)
}
