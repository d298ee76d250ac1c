//! Goodness of fit between synthetic aggregates and reference tables.
//!
//! Internal validation compares constrained variables with the census tables
//! the population was fitted to; external validation compares variables that
//! were not used in fitting (industry, occupation) with independent tables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::integerize::SyntheticPopulation;
use crate::schema::{align_tables, ConstraintTable, Crosswalk, Schema, SurveyDataset, VariableRef};
use crate::special::student_t_two_tailed;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sum_sq_dev(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Squared Pearson correlation of the two vectors. `None` when fewer than 3
/// points, lengths differ, or either vector is constant.
pub fn r_squared(actual: &[f64], simulated: &[f64]) -> Option<f64> {
    if actual.len() != simulated.len() || actual.len() < 3 {
        return None;
    }
    let ma = mean(actual);
    let ms = mean(simulated);
    let sxx = sum_sq_dev(actual, ma);
    let syy = sum_sq_dev(simulated, ms);
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let sxy: f64 = actual
        .iter()
        .zip(simulated)
        .map(|(a, s)| (a - ma) * (s - ms))
        .sum();
    Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

/// Standard error about identity: `1 − Σ(sim − act)² / Σ(act − mean(act))²`.
///
/// Measured about the 45° line, so unlike R² it penalises bias and scale
/// errors. Unbounded below. `None` when fewer than 3 points, lengths differ,
/// or `actual` is constant.
pub fn sei(actual: &[f64], simulated: &[f64]) -> Option<f64> {
    if actual.len() != simulated.len() || actual.len() < 3 {
        return None;
    }
    let sst = sum_sq_dev(actual, mean(actual));
    if sst == 0.0 {
        return None;
    }
    let sse: f64 = actual
        .iter()
        .zip(simulated)
        .map(|(a, s)| (s - a) * (s - a))
        .sum();
    Some(1.0 - sse / sst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
    /// Zero pooled variance with unequal means.
    pub degenerate: bool,
}

/// Two independent equal-variance samples, two-tailed.
pub fn t_test_equal_variance(actual: &[f64], simulated: &[f64]) -> Option<TTest> {
    let n = actual.len();
    if n != simulated.len() || n < 2 {
        return None;
    }
    let nf = n as f64;
    let ma = mean(actual);
    let ms = mean(simulated);
    let df = 2.0 * nf - 2.0;
    let pooled = (sum_sq_dev(actual, ma) + sum_sq_dev(simulated, ms)) / df;
    let diff = ms - ma;
    if pooled == 0.0 {
        return Some(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df, degenerate: false }
        } else {
            TTest {
                t: if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                df,
                degenerate: true,
            }
        });
    }
    let t = diff / (libm::sqrt(pooled) * libm::sqrt(2.0 / nf));
    Some(TTest {
        t,
        p: student_t_two_tailed(t, df),
        df,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationMetrics {
    pub r_squared: Option<f64>,
    pub sei: Option<f64>,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub n_zones: usize,
}

impl ValidationMetrics {
    pub fn compute(actual: &[f64], simulated: &[f64]) -> Self {
        let tt = t_test_equal_variance(actual, simulated);
        Self {
            r_squared: r_squared(actual, simulated),
            sei: sei(actual, simulated),
            t_stat: tt.map(|t| t.t),
            p_value: tt.map(|t| t.p),
            n_zones: actual.len(),
        }
    }
}

/// Zone × group counts of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub variable: String,
    pub zones: Vec<String>,
    pub groups: Vec<String>,
    /// `counts[zone][group]`
    pub counts: Vec<Vec<f64>>,
}

impl AggregateTable {
    pub fn column(&self, group: usize) -> Vec<f64> {
        self.counts.iter().map(|row| row[group]).collect()
    }

    pub fn group_totals(&self) -> Vec<f64> {
        (0..self.groups.len())
            .map(|g| self.counts.iter().map(|row| row[g]).sum())
            .collect()
    }

    pub fn group_index(&self, label: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == label)
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones.iter().position(|z| z == id)
    }
}

impl From<&ConstraintTable> for AggregateTable {
    fn from(t: &ConstraintTable) -> Self {
        Self {
            variable: t.variable.clone(),
            zones: t.zones.clone(),
            groups: t.categories.clone(),
            counts: t.counts.clone(),
        }
    }
}

/// Sums replication counts per category (or crosswalk group) of `variable`.
/// Records with no value for an external variable are skipped.
pub fn aggregate(
    population: &SyntheticPopulation,
    survey: &SurveyDataset,
    schema: &Schema,
    variable: &str,
    crosswalk: Option<&Crosswalk>,
) -> Result<AggregateTable> {
    let var = schema
        .variable(variable)
        .ok_or_else(|| Error::UnknownVariable(variable.into()))?;
    if population.n_records() != survey.len() {
        return Err(Error::Dimension(format!(
            "population has {} records, survey {}",
            population.n_records(),
            survey.len()
        )));
    }
    let def = schema.variable_def(var);
    let (groups, group_of_category): (Vec<String>, Vec<usize>) = match crosswalk {
        None => (def.categories.clone(), (0..def.len()).collect()),
        Some(cw) => {
            let groups = cw.groups();
            let map = def
                .categories
                .iter()
                .map(|c| {
                    let g = cw.group_of(c).ok_or_else(|| Error::CrosswalkGap {
                        variable: def.name.clone(),
                        category: c.clone(),
                    })?;
                    Ok(groups.iter().position(|x| x == g).unwrap())
                })
                .collect::<Result<Vec<_>>>()?;
            (groups, map)
        }
    };
    let record_group: Vec<Option<usize>> = survey
        .records
        .iter()
        .map(|r| {
            let c = match var {
                VariableRef::Constraint(i) => Some(r.categories[i]),
                VariableRef::External(i) => r.external[i],
            };
            c.map(|c| group_of_category[c])
        })
        .collect();
    let counts = population
        .counts
        .iter()
        .map(|zone| {
            let mut row = vec![0.0; groups.len()];
            for (c, g) in zone.iter().zip(&record_group) {
                if let Some(g) = g {
                    row[*g] += *c as f64;
                }
            }
            row
        })
        .collect();
    Ok(AggregateTable {
        variable: def.name.clone(),
        zones: population.zone_ids.clone(),
        groups,
        counts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryMetrics {
    pub variable: String,
    pub category: String,
    pub metrics: ValidationMetrics,
}

/// One row of a metro-level share comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareRow {
    pub variable: String,
    pub group: String,
    pub census_pct: f64,
    pub simulated_pct: f64,
    /// `simulated_pct − census_pct`
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub variable: String,
    pub zone: String,
    pub category: String,
    pub actual: f64,
    pub simulated: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub metrics: Vec<CategoryMetrics>,
    pub shares: Vec<ShareRow>,
    pub scatter: Vec<ScatterPoint>,
}

impl ValidationReport {
    pub fn extend(&mut self, other: ValidationReport) {
        self.metrics.extend(other.metrics);
        self.shares.extend(other.shares);
        self.scatter.extend(other.scatter);
    }
}

/// Share rows from percentages that are already computed.
pub fn share_rows_from_pct(
    variable: &str,
    groups: &[String],
    census_pct: &[f64],
    simulated_pct: &[f64],
) -> Vec<ShareRow> {
    groups
        .iter()
        .zip(census_pct.iter().zip(simulated_pct))
        .map(|(g, (&c, &s))| ShareRow {
            variable: variable.into(),
            group: g.clone(),
            census_pct: c,
            simulated_pct: s,
            diff: s - c,
        })
        .collect()
}

/// Share rows from metro-level counts, each column normalised to 100%.
pub fn share_rows(variable: &str, groups: &[String], census: &[f64], simulated: &[f64]) -> Vec<ShareRow> {
    let pct = |v: &[f64]| {
        let total: f64 = v.iter().sum();
        v.iter()
            .map(|x| if total > 0.0 { 100.0 * x / total } else { 0.0 })
            .collect::<Vec<_>>()
    };
    share_rows_from_pct(variable, groups, &pct(census), &pct(simulated))
}

/// Compares two zone × group tables with identical zone and group sets.
/// `simulated` is reordered to match `actual`.
pub fn compare_tables(actual: &AggregateTable, simulated: &AggregateTable) -> Result<ValidationReport> {
    if actual.zones.len() != simulated.zones.len() {
        return Err(Error::ZoneMismatch {
            reference: actual.variable.clone(),
            other: simulated.variable.clone(),
        });
    }
    let zone_map = actual
        .zones
        .iter()
        .map(|z| {
            simulated.zone_index(z).ok_or_else(|| Error::ZoneMismatch {
                reference: actual.variable.clone(),
                other: format!("{} (zone '{z}')", simulated.variable),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if actual.groups.len() != simulated.groups.len() {
        return Err(Error::Dimension(format!(
            "'{}': {} reference groups vs {} simulated",
            actual.variable,
            actual.groups.len(),
            simulated.groups.len()
        )));
    }
    let group_map = actual
        .groups
        .iter()
        .map(|g| {
            simulated.group_index(g).ok_or_else(|| Error::UnknownCategory {
                variable: actual.variable.clone(),
                category: g.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ValidationReport::default();
    let mut census_totals = Vec::with_capacity(actual.groups.len());
    let mut sim_totals = Vec::with_capacity(actual.groups.len());
    for (g, label) in actual.groups.iter().enumerate() {
        let act = actual.column(g);
        let sim: Vec<f64> = zone_map
            .iter()
            .map(|&z| simulated.counts[z][group_map[g]])
            .collect();
        report.metrics.push(CategoryMetrics {
            variable: actual.variable.clone(),
            category: label.clone(),
            metrics: ValidationMetrics::compute(&act, &sim),
        });
        for (z, (a, s)) in act.iter().zip(&sim).enumerate() {
            report.scatter.push(ScatterPoint {
                variable: actual.variable.clone(),
                zone: actual.zones[z].clone(),
                category: label.clone(),
                actual: *a,
                simulated: *s,
            });
        }
        census_totals.push(act.iter().sum());
        sim_totals.push(sim.iter().sum());
    }
    report.shares = share_rows(&actual.variable, &actual.groups, &census_totals, &sim_totals);
    Ok(report)
}

/// Fit of every constrained category across zones, plus scatter pairs and
/// metro-level shares.
pub fn internal_validation(
    population: &SyntheticPopulation,
    survey: &SurveyDataset,
    schema: &Schema,
    tables: &[ConstraintTable],
) -> Result<ValidationReport> {
    let tables = align_tables(schema, tables)?;
    let mut report = ValidationReport::default();
    for t in tables {
        let simulated = aggregate(population, survey, schema, &t.variable, None)?;
        report.extend(compare_tables(&AggregateTable::from(t), &simulated)?);
    }
    Ok(report)
}

/// Fit of a variable that was not used as a constraint against an independent
/// zone-level table, grouped through `crosswalk` when given.
pub fn external_validation(
    population: &SyntheticPopulation,
    survey: &SurveyDataset,
    schema: &Schema,
    external_actual: &AggregateTable,
    crosswalk: Option<&Crosswalk>,
) -> Result<ValidationReport> {
    if schema.constraint_index(&external_actual.variable).is_some() {
        return Err(Error::InvalidInput(format!(
            "'{}' is a constraint variable; external validation needs an unconstrained one",
            external_actual.variable
        )));
    }
    let simulated = aggregate(population, survey, schema, &external_actual.variable, crosswalk)?;
    compare_tables(external_actual, &simulated)
}
