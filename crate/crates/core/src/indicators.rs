//! Zone-level income and poverty measures over a synthetic population.
//!
//! Every measure is a weighted statistic where a survey record's weight in a
//! zone is its replication count there. Metro-level figures pool all zones.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::integerize::SyntheticPopulation;
use crate::schema::{Schema, SurveyDataset};

/// Tolerance used when comparing a deprivation score with the poverty cutoff,
/// so that sums of equal fractional weights meet a cutoff they equal.
const SCORE_EPS: f64 = 1e-12;

/// Modified-OECD equivalised income: the first adult weighs 1, further adults
/// 0.5 and children 0.3.
pub fn equivalize(household_income: f64, n_adults: u32, n_children: u32) -> Result<f64> {
    if n_adults == 0 {
        return Err(Error::InvalidInput("a household needs at least one adult".into()));
    }
    if !household_income.is_finite() {
        return Err(Error::InvalidInput("household income is not finite".into()));
    }
    let scale = 1.0 + 0.5 * (n_adults - 1) as f64 + 0.3 * n_children as f64;
    Ok(household_income / scale)
}

/// Median of `values` replicated by `counts`.
///
/// Returns the smallest value whose cumulative count reaches half the total.
/// When the half-total lands exactly on the boundary between two distinct
/// values, their mean is returned.
pub fn weighted_median(values: &[f64], counts: &[u64]) -> Result<f64> {
    if values.len() != counts.len() {
        return Err(Error::Dimension(format!(
            "{} values with {} counts",
            values.len(),
            counts.len()
        )));
    }
    let mut pairs: Vec<(f64, u64)> = values
        .iter()
        .zip(counts)
        .filter(|(_, c)| **c > 0)
        .map(|(v, c)| (*v, *c))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    if pairs.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::InvalidInput("NaN value".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|next, prev| {
        if next.0 == prev.0 {
            prev.1 += next.1;
            true
        } else {
            false
        }
    });
    let total: u64 = pairs.iter().map(|p| p.1).sum();
    let mut cumulative = 0u64;
    for (i, &(v, c)) in pairs.iter().enumerate() {
        cumulative += c;
        if 2 * cumulative >= total {
            if 2 * cumulative == total {
                if let Some(&(next, _)) = pairs[i + 1..].iter().find(|p| p.0 != v) {
                    return Ok(0.5 * (v + next));
                }
            }
            return Ok(v);
        }
    }
    unreachable!("cumulative count reaches the total")
}

/// Per-zone values with a pooled metro value. `None` marks a zone with no
/// counted persons.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneValues {
    pub zones: Vec<Option<f64>>,
    pub metro: Option<f64>,
}

fn share(hit: u64, total: u64) -> Option<f64> {
    (total > 0).then(|| hit as f64 / total as f64)
}

/// Counts of persons with a known income, per zone and pooled.
fn income_counts(population: &SyntheticPopulation, incomes: &[Option<f64>]) -> Result<Vec<Vec<u64>>> {
    if incomes.len() != population.n_records() {
        return Err(Error::Dimension(format!(
            "{} incomes for {} records",
            incomes.len(),
            population.n_records()
        )));
    }
    Ok(population
        .counts
        .iter()
        .map(|zone| {
            zone.iter()
                .zip(incomes)
                .map(|(c, inc)| if inc.is_some() { *c } else { 0 })
                .collect()
        })
        .collect())
}

/// Persons per zone whose income is missing.
pub fn excluded_missing_income(population: &SyntheticPopulation, incomes: &[Option<f64>]) -> Vec<u64> {
    population
        .counts
        .iter()
        .map(|zone| {
            zone.iter()
                .zip(incomes)
                .filter(|(_, inc)| inc.is_none())
                .map(|(c, _)| *c)
                .sum()
        })
        .collect()
}

fn values(incomes: &[Option<f64>]) -> Vec<f64> {
    incomes.iter().map(|i| i.unwrap_or(0.0)).collect()
}

fn rate_below(counts: &[u64], incomes: &[Option<f64>], line: f64) -> Option<f64> {
    let mut below = 0;
    let mut total = 0;
    for (c, inc) in counts.iter().zip(incomes) {
        if let Some(x) = inc {
            total += c;
            if *x < line {
                below += c;
            }
        }
    }
    share(below, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AropAbsolute {
    pub median: f64,
    pub line: f64,
    pub rates: ZoneValues,
    pub excluded: Vec<u64>,
}

/// At-risk-of-poverty rates against one line: `fraction` of the metro-wide
/// median. Persons with missing income are left out of both numerator and
/// denominator.
pub fn arop_absolute(
    population: &SyntheticPopulation,
    incomes: &[Option<f64>],
    fraction: f64,
) -> Result<AropAbsolute> {
    check_fraction(fraction)?;
    let counted = income_counts(population, incomes)?;
    let pooled = pool(&counted, population.n_records());
    let median = weighted_median(&values(incomes), &pooled)?;
    let line = fraction * median;
    let zones = counted.iter().map(|c| rate_below(c, incomes, line)).collect();
    Ok(AropAbsolute {
        median,
        line,
        rates: ZoneValues {
            zones,
            metro: rate_below(&pooled, incomes, line),
        },
        excluded: excluded_missing_income(population, incomes),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AropRelative {
    pub lines: Vec<Option<f64>>,
    pub rates: Vec<Option<f64>>,
}

/// At-risk-of-poverty rates where each zone uses `fraction` of its own median.
pub fn arop_relative(
    population: &SyntheticPopulation,
    incomes: &[Option<f64>],
    fraction: f64,
) -> Result<AropRelative> {
    check_fraction(fraction)?;
    let counted = income_counts(population, incomes)?;
    let vals = values(incomes);
    let mut lines = Vec::with_capacity(counted.len());
    let mut rates = Vec::with_capacity(counted.len());
    for c in &counted {
        match weighted_median(&vals, c) {
            Ok(m) => {
                let line = fraction * m;
                lines.push(Some(line));
                rates.push(rate_below(c, incomes, line));
            }
            Err(Error::EmptyPopulation) => {
                lines.push(None);
                rates.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AropRelative { lines, rates })
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("poverty-line fraction {fraction} is outside (0, 1)")))
    }
}

fn pool(zones: &[Vec<u64>], n: usize) -> Vec<u64> {
    let mut out = vec![0; n];
    for z in zones {
        for (o, c) in out.iter_mut().zip(z) {
            *o += c;
        }
    }
    out
}

/// Share of persons lacking at least `threshold` deprivation items.
pub fn md_rate(population: &SyntheticPopulation, survey: &SurveyDataset, threshold: usize) -> Result<ZoneValues> {
    if survey.len() != population.n_records() {
        return Err(Error::Dimension("population and survey differ in length".into()));
    }
    let deprived: Vec<bool> = survey
        .records
        .iter()
        .map(|r| r.lacked_items() >= threshold)
        .collect();
    let rate = |counts: &[u64]| {
        let total: u64 = counts.iter().sum();
        let hit: u64 = counts
            .iter()
            .zip(&deprived)
            .filter(|(_, d)| **d)
            .map(|(c, _)| *c)
            .sum();
        share(hit, total)
    };
    Ok(ZoneValues {
        zones: population.counts.iter().map(|c| rate(c)).collect(),
        metro: rate(&population.pooled()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneIncome {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub persons: u64,
    pub excluded_missing_income: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeSummary {
    pub zones: Vec<ZoneIncome>,
    pub metro: ZoneIncome,
}

fn zone_income(counts: &[u64], all_counts: &[u64], incomes: &[Option<f64>]) -> Result<ZoneIncome> {
    let persons: u64 = counts.iter().sum();
    let mut sum = 0.0;
    for (c, inc) in counts.iter().zip(incomes) {
        if let Some(x) = inc {
            sum += *c as f64 * x;
        }
    }
    let median = match weighted_median(&values(incomes), counts) {
        Ok(m) => Some(m),
        Err(Error::EmptyPopulation) => None,
        Err(e) => return Err(e),
    };
    let all: u64 = all_counts.iter().sum();
    Ok(ZoneIncome {
        mean: (persons > 0).then(|| sum / persons as f64),
        median,
        persons,
        excluded_missing_income: all - persons,
    })
}

/// Weighted mean and median income per zone and for the pooled metro area.
pub fn income_summary(population: &SyntheticPopulation, incomes: &[Option<f64>]) -> Result<IncomeSummary> {
    let counted = income_counts(population, incomes)?;
    let zones = counted
        .iter()
        .zip(&population.counts)
        .map(|(c, all)| zone_income(c, all, incomes))
        .collect::<Result<Vec<_>>>()?;
    let pooled = pool(&counted, population.n_records());
    let metro = zone_income(&pooled, &population.pooled(), incomes)?;
    Ok(IncomeSummary { zones, metro })
}

/// `100 · (later − earlier) / earlier`.
pub fn percent_change(earlier: f64, later: f64) -> Result<f64> {
    if !(earlier > 0.0) {
        return Err(Error::InvalidInput(format!("earlier value {earlier} must be positive")));
    }
    Ok(100.0 * (later - earlier) / earlier)
}

/// How one MPI indicator decides whether a person is deprived.
#[derive(Debug, Clone, PartialEq)]
pub enum IndicatorKind {
    /// A deprivation item or numeric field flagged non-zero.
    Flag { field: String },
    /// A numeric field strictly below a threshold.
    Below { field: String, threshold: f64 },
    /// Income below the metro-wide (absolute) poverty line.
    IncomePoor,
    /// Lacking at least `min` of the schema's deprivation items.
    LacksItems { min: usize },
    /// A categorical attribute in one of the listed categories.
    Category { variable: String, categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpiIndicator {
    pub kind: IndicatorKind,
    /// Share of the dimension weight; equal shares when every indicator of
    /// the dimension leaves this unset.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpiDimension {
    pub name: String,
    pub weight: f64,
    pub indicators: Vec<MpiIndicator>,
}

/// Alkire-Foster dimension structure and poverty cutoff `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MpiSpec {
    pub dimensions: Vec<MpiDimension>,
    pub cutoff: f64,
}

impl MpiSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.cutoff <= 1.0) {
            return Err(Error::InvalidInput(format!("MPI cutoff {} is outside (0, 1]", self.cutoff)));
        }
        let total: f64 = self.dimensions.iter().map(|d| d.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::MpiWeights(total));
        }
        for d in &self.dimensions {
            if d.indicators.is_empty() || !(d.weight > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "MPI dimension '{}' needs a positive weight and at least one indicator",
                    d.name
                )));
            }
            let given = d.indicators.iter().filter(|i| i.share.is_some()).count();
            if given != 0 && given != d.indicators.len() {
                return Err(Error::InvalidInput(format!(
                    "MPI dimension '{}' sets shares on some indicators only",
                    d.name
                )));
            }
            if given > 0 {
                let s: f64 = d.indicators.iter().filter_map(|i| i.share).sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::MpiWeights(s));
                }
            }
        }
        Ok(())
    }

    /// Absolute weight of every indicator, dimensions flattened in order.
    pub fn indicator_weights(&self) -> Vec<f64> {
        self.dimensions
            .iter()
            .flat_map(|d| {
                let n = d.indicators.len() as f64;
                d.indicators
                    .iter()
                    .map(move |i| d.weight * i.share.unwrap_or(1.0 / n))
            })
            .collect()
    }

    /// Evaluates every indicator on every record.
    ///
    /// `income_line` is the absolute poverty line used by
    /// [`IndicatorKind::IncomePoor`]; missing incomes and missing items count
    /// as not deprived.
    pub fn resolve(
        &self,
        schema: &Schema,
        survey: &SurveyDataset,
        incomes: &[Option<f64>],
        income_line: Option<f64>,
    ) -> Result<DeprivationMatrix> {
        self.validate()?;
        let indicators: Vec<&IndicatorKind> = self
            .dimensions
            .iter()
            .flat_map(|d| d.indicators.iter().map(|i| &i.kind))
            .collect();
        let mut tests: Vec<alloc::boxed::Box<dyn Fn(usize) -> bool + '_>> = Vec::new();
        for kind in indicators {
            let test: alloc::boxed::Box<dyn Fn(usize) -> bool> = match kind {
                IndicatorKind::Flag { field } => {
                    if let Some(i) = schema.deprivation_index(field) {
                        alloc::boxed::Box::new(move |r| survey.records[r].deprivation[i] == Some(true))
                    } else if let Some(i) = schema.numeric_index(field) {
                        alloc::boxed::Box::new(move |r| matches!(survey.records[r].numeric[i], Some(x) if x != 0.0))
                    } else {
                        return Err(Error::InvalidInput(format!("unknown MPI field '{field}'")));
                    }
                }
                IndicatorKind::Below { field, threshold } => {
                    let t = *threshold;
                    if *field == schema.income_field {
                        alloc::boxed::Box::new(move |r| matches!(incomes[r], Some(x) if x < t))
                    } else if let Some(i) = schema.numeric_index(field) {
                        alloc::boxed::Box::new(move |r| matches!(survey.records[r].numeric[i], Some(x) if x < t))
                    } else {
                        return Err(Error::InvalidInput(format!("unknown MPI field '{field}'")));
                    }
                }
                IndicatorKind::IncomePoor => {
                    let line = income_line.ok_or_else(|| {
                        Error::InvalidInput("income-poverty indicator needs a poverty line".into())
                    })?;
                    alloc::boxed::Box::new(move |r| matches!(incomes[r], Some(x) if x < line))
                }
                IndicatorKind::LacksItems { min } => {
                    let m = *min;
                    alloc::boxed::Box::new(move |r| survey.records[r].lacked_items() >= m)
                }
                IndicatorKind::Category { variable, categories } => {
                    let var = schema
                        .variable(variable)
                        .ok_or_else(|| Error::UnknownVariable(variable.clone()))?;
                    let def = schema.variable_def(var);
                    let mut hit = vec![false; def.len()];
                    for c in categories {
                        let i = def.index_of(c).ok_or_else(|| Error::UnknownCategory {
                            variable: variable.clone(),
                            category: c.clone(),
                        })?;
                        hit[i] = true;
                    }
                    alloc::boxed::Box::new(move |r| {
                        let rec = &survey.records[r];
                        let c = match var {
                            crate::schema::VariableRef::Constraint(i) => Some(rec.categories[i]),
                            crate::schema::VariableRef::External(i) => rec.external[i],
                        };
                        c.is_some_and(|c| hit[c])
                    })
                }
            };
            tests.push(test);
        }
        if incomes.len() != survey.len() {
            return Err(Error::Dimension("incomes and survey differ in length".into()));
        }
        let n_indicators = tests.len();
        let mut cells = Vec::with_capacity(n_indicators * survey.len());
        for r in 0..survey.len() {
            cells.extend(tests.iter().map(|t| t(r)));
        }
        Ok(DeprivationMatrix { n_indicators, cells })
    }
}

/// Records × indicators deprivation flags, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DeprivationMatrix {
    pub n_indicators: usize,
    pub cells: Vec<bool>,
}

impl DeprivationMatrix {
    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n_indicators = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_indicators) {
            return Err(Error::Dimension("ragged deprivation rows".into()));
        }
        Ok(Self {
            n_indicators,
            cells: rows.concat(),
        })
    }

    pub fn row(&self, record: usize) -> &[bool] {
        &self.cells[record * self.n_indicators..(record + 1) * self.n_indicators]
    }

    pub fn n_records(&self) -> usize {
        if self.n_indicators == 0 {
            0
        } else {
            self.cells.len() / self.n_indicators
        }
    }

    /// Weighted deprivation score of every record.
    pub fn scores(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.n_records())
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(weights)
                    .filter(|(d, _)| **d)
                    .map(|(_, w)| *w)
                    .sum()
            })
            .collect()
    }
}

/// Headcount ratio `h`, intensity `a` and adjusted headcount `m0 = h · a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpiResult {
    pub h: f64,
    pub a: f64,
    pub m0: f64,
    pub persons: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpiReport {
    pub zones: Vec<Option<MpiResult>>,
    pub metro: Option<MpiResult>,
}

fn mpi_of(counts: &[u64], scores: &[f64], cutoff: f64) -> Option<MpiResult> {
    let persons: u64 = counts.iter().sum();
    if persons == 0 {
        return None;
    }
    let mut poor = 0u64;
    let mut score_sum = 0.0;
    for (c, s) in counts.iter().zip(scores) {
        if *c > 0 && *s >= cutoff - SCORE_EPS {
            poor += c;
            score_sum += *c as f64 * s;
        }
    }
    let h = poor as f64 / persons as f64;
    let a = if poor > 0 { score_sum / poor as f64 } else { 0.0 };
    Some(MpiResult { h, a, m0: h * a, persons })
}

/// Alkire-Foster adjusted headcount ratio per zone and for the metro area.
pub fn mpi(
    population: &SyntheticPopulation,
    deprivation: &DeprivationMatrix,
    weights: &[f64],
    cutoff: f64,
) -> Result<MpiReport> {
    if deprivation.n_records() != population.n_records() {
        return Err(Error::Dimension("deprivation matrix and population differ".into()));
    }
    if weights.len() != deprivation.n_indicators {
        return Err(Error::Dimension(format!(
            "{} weights for {} indicators",
            weights.len(),
            deprivation.n_indicators
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::MpiWeights(total));
    }
    let scores = deprivation.scores(weights);
    Ok(MpiReport {
        zones: population
            .counts
            .iter()
            .map(|c| mpi_of(c, &scores, cutoff))
            .collect(),
        metro: mpi_of(&population.pooled(), &scores, cutoff),
    })
}
