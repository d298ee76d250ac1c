//! Iterative proportional fitting of survey weights to zone constraints.
//!
//! One sweep visits the constraint variables in schema order. For each
//! variable, every record's weight is multiplied by the ratio of its
//! category's census count to the category's current weighted total. Sweeps
//! repeat until the total absolute error over all constrained categories is at
//! most `tolerance × zone population`, or the sweep budget runs out.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::schema::{ConstraintTable, SurveyDataset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfOptions {
    pub max_iterations: usize,
    /// Stopping threshold on TAE as a fraction of the zone population.
    pub tolerance: f64,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

impl IpfOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Stopping diagnostics for one zone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneFit {
    pub iterations: usize,
    /// Total absolute error in persons.
    pub tae: f64,
    /// TAE divided by the zone population (0 for empty zones).
    pub relative_tae: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceInfo {
    pub zone_ids: Vec<String>,
    pub zones: Vec<ZoneFit>,
}

impl ConvergenceInfo {
    pub fn all_converged(&self) -> bool {
        self.zones.iter().all(|z| z.converged)
    }

    pub fn non_converged(&self) -> impl Iterator<Item = &str> {
        self.zone_ids
            .iter()
            .zip(&self.zones)
            .filter(|(_, f)| !f.converged)
            .map(|(id, _)| id.as_str())
    }
}

/// Fractional weights, one column per zone.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub zone_ids: Vec<String>,
    pub record_ids: Vec<String>,
    /// `columns[zone][record]`
    pub columns: Vec<Vec<f64>>,
}

impl WeightMatrix {
    pub fn get(&self, record: usize, zone: usize) -> f64 {
        self.columns[zone][record]
    }

    pub fn column(&self, zone: usize) -> &[f64] {
        &self.columns[zone]
    }

    pub fn n_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }
}

/// Census counts for one zone: `constraints[variable][category]`, variables in
/// fitting order.
pub fn zone_constraints(tables: &[&ConstraintTable], zone: usize) -> Vec<Vec<f64>> {
    tables.iter().map(|t| t.counts[zone].clone()).collect()
}

/// Weighted survey total of every category of constraint variable `var`.
pub fn fitted_totals(
    weights: &[f64],
    survey: &SurveyDataset,
    var: usize,
    n_categories: usize,
) -> Vec<f64> {
    let mut totals = vec![0.0; n_categories];
    for (w, r) in weights.iter().zip(&survey.records) {
        totals[r.categories[var]] += w;
    }
    totals
}

/// Σ over variables and categories of |weighted survey total − census count|.
pub fn tae(weights: &[f64], constraints: &[Vec<f64>], survey: &SurveyDataset) -> f64 {
    constraints
        .iter()
        .enumerate()
        .map(|(v, census)| {
            fitted_totals(weights, survey, v, census.len())
                .iter()
                .zip(census)
                .map(|(f, c)| (f - c).abs())
                .sum::<f64>()
        })
        .sum()
}

/// One pass over all constraint variables, in order.
///
/// A category with no current weighted mass is left untouched whatever its
/// census count: with census 0 there is nothing to fit, and with census > 0
/// the records cannot be scaled up from zero (the residual shows in the TAE).
pub fn ipf_sweep(weights: &mut [f64], constraints: &[Vec<f64>], survey: &SurveyDataset) {
    for (v, census) in constraints.iter().enumerate() {
        let fitted = fitted_totals(weights, survey, v, census.len());
        let factors: Vec<f64> = fitted
            .iter()
            .zip(census)
            .map(|(&f, &c)| if f > 0.0 { c / f } else { 1.0 })
            .collect();
        for (w, r) in weights.iter_mut().zip(&survey.records) {
            *w *= factors[r.categories[v]];
        }
    }
}

/// Fits one zone starting from `init` (all entries must be positive).
pub fn ipf_zone(
    survey: &SurveyDataset,
    constraints: &[Vec<f64>],
    init: &[f64],
    opts: &IpfOptions,
) -> Result<(Vec<f64>, ZoneFit)> {
    opts.validate()?;
    if init.len() != survey.len() {
        return Err(Error::Dimension(format!(
            "{} initial weights for {} records",
            init.len(),
            survey.len()
        )));
    }
    if let Some(w) = init.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!("initial weight {w} is not positive")));
    }
    if let Some(r) = survey.records.first() {
        if r.categories.len() != constraints.len() {
            return Err(Error::Dimension(format!(
                "{} constraint variables for records with {}",
                constraints.len(),
                r.categories.len()
            )));
        }
    }
    if constraints
        .iter()
        .flatten()
        .any(|c| !c.is_finite() || *c < 0.0)
    {
        return Err(Error::InvalidInput("constraint counts must be finite and >= 0".into()));
    }

    let population: f64 = constraints.first().map_or(0.0, |c| c.iter().sum());
    if constraints.iter().flatten().all(|c| *c == 0.0) {
        let fit = ZoneFit {
            iterations: 0,
            tae: 0.0,
            relative_tae: 0.0,
            converged: true,
        };
        return Ok((vec![0.0; init.len()], fit));
    }

    let mut weights = init.to_vec();
    let threshold = opts.tolerance * population;
    let mut fit = ZoneFit {
        iterations: 0,
        tae: f64::INFINITY,
        relative_tae: f64::INFINITY,
        converged: false,
    };
    for it in 1..=opts.max_iterations {
        ipf_sweep(&mut weights, constraints, survey);
        let err = tae(&weights, constraints, survey);
        fit.iterations = it;
        fit.tae = err;
        if err <= threshold {
            fit.converged = true;
            break;
        }
    }
    fit.relative_tae = if population > 0.0 {
        fit.tae / population
    } else {
        fit.tae
    };
    Ok((weights, fit))
}

/// Fits zone `zone` of `tables` from unit initial weights.
pub fn ipf_table_zone(
    survey: &SurveyDataset,
    tables: &[&ConstraintTable],
    zone: usize,
    opts: &IpfOptions,
) -> Result<(Vec<f64>, ZoneFit)> {
    let constraints = zone_constraints(tables, zone);
    let init = vec![1.0; survey.len()];
    ipf_zone(survey, &constraints, &init, opts).map_err(|e| e.in_zone(&tables[0].zones[zone]))
}

/// Fits every zone independently. `tables` must be in fitting order with
/// identical zone lists (see [`crate::schema::align_tables`]).
pub fn ipf_all(
    survey: &SurveyDataset,
    tables: &[&ConstraintTable],
    opts: &IpfOptions,
) -> Result<(WeightMatrix, ConvergenceInfo)> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("no constraint tables".into()))?;
    let fits = (0..first.n_zones())
        .map(|z| ipf_table_zone(survey, tables, z, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(survey, &first.zones, fits))
}

/// Builds the weight matrix and diagnostics from per-zone results given in
/// zone order.
pub fn assemble(
    survey: &SurveyDataset,
    zone_ids: &[String],
    fits: Vec<(Vec<f64>, ZoneFit)>,
) -> (WeightMatrix, ConvergenceInfo) {
    let (columns, zones): (Vec<_>, Vec<_>) = fits.into_iter().unzip();
    let matrix = WeightMatrix {
        zone_ids: zone_ids.to_vec(),
        record_ids: survey.records.iter().map(|r| r.record_id.clone()).collect(),
        columns,
    };
    let info = ConvergenceInfo {
        zone_ids: zone_ids.to_vec(),
        zones,
    };
    (matrix, info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Schema, SurveyRecord, VariableDef};

    pub(crate) fn survey_of(schema: &Schema, cats: &[&[usize]]) -> SurveyDataset {
        let records = cats
            .iter()
            .enumerate()
            .map(|(i, c)| SurveyRecord {
                record_id: format!("r{i}"),
                household_id: format!("h{i}"),
                categories: c.to_vec(),
                external: vec![],
                income: None,
                deprivation: vec![],
                numeric: vec![],
            })
            .collect();
        SurveyDataset::new(schema, records).unwrap()
    }

    fn schema(vars: &[(&str, &[&str])]) -> Schema {
        let vars = vars
            .iter()
            .map(|(n, c)| VariableDef::new(*n, c.iter().copied()).unwrap())
            .collect();
        Schema::new(vars, vec![], "income", vec![], vec![], "hh").unwrap()
    }

    #[test]
    fn single_constraint_closed_form() {
        let s = schema(&[("x", &["A", "B"])]);
        let survey = survey_of(&s, &[&[0], &[1]]);
        let (w, fit) = ipf_zone(&survey, &[vec![3.0, 1.0]], &[1.0, 1.0], &IpfOptions::default()).unwrap();
        assert_eq!(w, vec![3.0, 1.0]);
        assert_eq!(fit.tae, 0.0);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn two_constraints_hand_iterated() {
        let s = schema(&[("sex", &["M", "F"]), ("age", &["Y", "O"])]);
        let survey = survey_of(&s, &[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        let cons = [vec![2.0, 2.0], vec![3.0, 1.0]];
        let (w, fit) = ipf_zone(&survey, &cons, &[1.0; 4], &IpfOptions::default()).unwrap();
        for (a, b) in w.iter().zip([1.5, 0.5, 1.5, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn satisfied_constraints_leave_weights_unchanged() {
        let s = schema(&[("sex", &["M", "F"]), ("age", &["Y", "O"])]);
        let survey = survey_of(&s, &[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        let init = [1.5, 0.5, 1.5, 0.5];
        let (w, fit) = ipf_zone(&survey, &[vec![2.0, 2.0], vec![3.0, 1.0]], &init, &IpfOptions::default()).unwrap();
        assert_eq!(w, init.to_vec());
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn empty_zone_is_trivially_converged() {
        let s = schema(&[("x", &["A", "B"])]);
        let survey = survey_of(&s, &[&[0], &[1]]);
        let (w, fit) = ipf_zone(&survey, &[vec![0.0, 0.0]], &[1.0, 1.0], &IpfOptions::default()).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        assert!(fit.converged);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn unsupported_category_flags_non_convergence() {
        let s = schema(&[("x", &["A", "B", "C"])]);
        let survey = survey_of(&s, &[&[0], &[1]]);
        let (w, fit) = ipf_zone(&survey, &[vec![2.0, 2.0, 5.0]], &[1.0, 1.0], &IpfOptions::default()).unwrap();
        assert_eq!(w, vec![2.0, 2.0]);
        assert!(!fit.converged);
        assert_eq!(fit.tae, 5.0);
        assert_eq!(fit.iterations, 100);
    }

    #[test]
    fn tae_examples() {
        let s = schema(&[("x", &["A", "B"])]);
        let survey = survey_of(&s, &[&[0], &[1]]);
        assert_eq!(tae(&[3.0, 1.0], &[vec![3.0, 1.0]], &survey), 0.0);
        assert_eq!(tae(&[2.5, 1.0], &[vec![3.0, 1.0]], &survey), 0.5);
        let s2 = schema(&[("x", &["A", "B"]), ("y", &["P", "Q"])]);
        let survey2 = survey_of(&s2, &[&[0, 0], &[1, 1]]);
        assert_eq!(tae(&[0.0, 0.0], &[vec![60.0, 40.0], vec![30.0, 70.0]], &survey2), 200.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = schema(&[("x", &["A", "B"])]);
        let survey = survey_of(&s, &[&[0], &[1]]);
        let opts = IpfOptions::default();
        assert!(ipf_zone(&survey, &[vec![1.0, 1.0]], &[0.0, 1.0], &opts).is_err());
        assert!(ipf_zone(&survey, &[vec![1.0, 1.0]], &[1.0], &opts).is_err());
        assert!(ipf_zone(&survey, &[vec![-1.0, 1.0]], &[1.0, 1.0], &opts).is_err());
        let bad = IpfOptions { max_iterations: 0, tolerance: 1e-6 };
        assert!(ipf_zone(&survey, &[vec![1.0, 1.0]], &[1.0, 1.0], &bad).is_err());
        let bad = IpfOptions { max_iterations: 5, tolerance: -1.0 };
        assert!(ipf_zone(&survey, &[vec![1.0, 1.0]], &[1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn ipf_all_matches_ipf_zone_and_handles_empty_zones() {
        let s = schema(&[("sex", &["M", "F"]), ("age", &["Y", "O"])]);
        let survey = survey_of(&s, &[&[0, 0], &[0, 1], &[1, 0], &[1, 1], &[0, 0]]);
        let zones = vec!["A".to_string(), "B".to_string()];
        let t1 = ConstraintTable::new("sex", zones.clone(), vec!["M".into(), "F".into()], vec![vec![6.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let t2 = ConstraintTable::new("age", zones.clone(), vec!["Y".into(), "O".into()], vec![vec![7.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let (m, info) = ipf_all(&survey, &[&t1, &t2], &IpfOptions::default()).unwrap();
        let (w, fit) = ipf_zone(&survey, &[vec![6.0, 4.0], vec![7.0, 3.0]], &[1.0; 5], &IpfOptions::default()).unwrap();
        assert_eq!(m.column(0), &w[..]);
        assert_eq!(info.zones[0], fit);
        assert_eq!(m.column(1), &[0.0; 5][..]);
        assert!(info.all_converged());
        assert_eq!(m.get(4, 0), w[4]);
    }
}
