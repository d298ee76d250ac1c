//! Synthetic ground-truth generator for recovery runs.
//!
//! Builds a population of adults grouped into households across zones whose
//! affluence and age profile differ, aggregates it into census-style constraint
//! and external tables, and samples a survey from it. The files written are a
//! complete pipeline input set.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};

use microsim_core::indicators::equivalize;

pub const SEX_AGE: [&str; 14] = [
    "M20-29", "M30-39", "M40-49", "M50-59", "M60-69", "M70-79", "M80+", "F20-29", "F30-39", "F40-49",
    "F50-59", "F60-69", "F70-79", "F80+",
];
pub const MARITAL: [&str; 4] = ["not_married", "married", "widowed", "divorced"];
pub const ACTIVITY: [&str; 8] = [
    "emp_primary",
    "emp_secondary",
    "emp_tertiary",
    "unemployed",
    "student",
    "retired",
    "housework",
    "other",
];
pub const EDUCATION: [&str; 3] = ["tertiary", "secondary", "primary"];
pub const NACE: [&str; 17] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P", "Q",
];
pub const ISCO: [&str; 9] = ["1", "2", "3", "4", "5", "6", "7", "8", "9"];

const NACE_GROUPS: [(&str, &[&str]); 12] = [
    ("A+B", &["A", "B"]),
    ("C+D+E", &["C", "D", "E"]),
    ("F", &["F"]),
    ("G", &["G"]),
    ("H", &["H"]),
    ("I", &["I"]),
    ("J", &["J"]),
    ("K", &["K"]),
    ("L", &["L"]),
    ("M", &["M"]),
    ("N", &["N"]),
    ("O+P+Q", &["O", "P", "Q"]),
];
const ISCO_GROUPS: [(&str, &[&str]); 7] = [
    ("Managers & Professionals", &["1", "2"]),
    ("Technicians", &["3"]),
    ("Clerks & Service", &["4", "5"]),
    ("Skilled agri", &["6"]),
    ("Craft", &["7"]),
    ("Plant", &["8"]),
    ("Elementary", &["9"]),
];
const DEPRIVATION_ITEMS: usize = 9;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub zones: usize,
    pub persons: usize,
    pub survey: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            zones: 59,
            persons: 300_000,
            survey: 3000,
            seed: 2011,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub zone_ids: Vec<String>,
    pub persons: usize,
    /// Mean equivalised income per zone in the ground truth.
    pub truth_mean_income: Vec<f64>,
}

struct Person {
    zone: usize,
    household: usize,
    sex_age: usize,
    marital: usize,
    activity: usize,
    education: usize,
    nace: Option<usize>,
    isco: Option<usize>,
}

struct Household {
    adults: u32,
    children: u32,
    income: f64,
    deprived: [bool; DEPRIVATION_ITEMS],
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    WeightedIndex::new(weights).expect("positive weights").sample(rng)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn marital_weights(age: usize) -> [f64; 4] {
    match age {
        0 => [0.80, 0.17, 0.005, 0.025],
        1 => [0.38, 0.56, 0.005, 0.055],
        2 => [0.18, 0.71, 0.02, 0.09],
        3 => [0.11, 0.72, 0.06, 0.11],
        4 => [0.08, 0.70, 0.14, 0.08],
        5 => [0.06, 0.55, 0.33, 0.06],
        _ => [0.05, 0.30, 0.60, 0.05],
    }
}

fn activity_weights(age: usize, female: bool, education: usize, affluence: f64) -> [f64; 8] {
    let employed: f64;
    let mut w = match age {
        0 => {
            employed = 0.50;
            [0.0, 0.0, 0.0, 0.17, 0.25, 0.0, 0.03, 0.05]
        }
        1..=3 => {
            employed = 0.70;
            [0.0, 0.0, 0.0, 0.10, 0.01, 0.01, if female { 0.16 } else { 0.02 }, 0.05]
        }
        4 => {
            employed = 0.33;
            [0.0, 0.0, 0.0, 0.04, 0.0, 0.45, if female { 0.15 } else { 0.03 }, 0.05]
        }
        _ => {
            employed = 0.03;
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.85, if female { 0.10 } else { 0.02 }, 0.05]
        }
    };
    let tertiary_share = logistic(1.0 + 0.8 * affluence - 0.6 * education as f64);
    w[0] = employed * 0.08;
    w[1] = employed * (1.0 - tertiary_share) * 0.92;
    w[2] = employed * tertiary_share * 0.92;
    w[3] *= (1.0 - 0.5 * affluence).clamp(0.3, 2.5) * (0.7 + 0.3 * education as f64);
    w
}

fn isco_weights(activity: usize, education: usize) -> [f64; 9] {
    if activity == 0 {
        return [0.02, 0.01, 0.03, 0.02, 0.04, 0.60, 0.08, 0.10, 0.10];
    }
    match education {
        0 => [0.12, 0.40, 0.20, 0.12, 0.08, 0.005, 0.03, 0.02, 0.025],
        1 => [0.08, 0.05, 0.15, 0.20, 0.22, 0.01, 0.14, 0.08, 0.07],
        _ => [0.04, 0.01, 0.03, 0.08, 0.17, 0.03, 0.28, 0.16, 0.20],
    }
}

fn nace_weights(activity: usize) -> [f64; 17] {
    match activity {
        0 => [0.8, 0.2, 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
        1 => [0., 0., 0.1, 0.55, 0.05, 0.3, 0., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.],
        _ => [
            0., 0., 0., 0., 0., 0., 0.25, 0.08, 0.10, 0.06, 0.12, 0.10, 0.10, 0.08, 0.05, 0.03, 0.03,
        ],
    }
}

fn table_csv(zone_ids: &[String], variable: &str, categories: &[&str], counts: &[Vec<u64>]) -> String {
    let mut out = String::new();
    for (z, zone) in zone_ids.iter().enumerate() {
        for (c, cat) in categories.iter().enumerate() {
            let _ = writeln!(out, "{zone},{variable},{cat},{}", counts[z][c]);
        }
    }
    out
}

fn labels<'a>(groups: &[(&'a str, &[&str])]) -> Vec<&'a str> {
    groups.iter().map(|(g, _)| *g).collect()
}

fn toml_list(items: &[&str]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("\"{s}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

fn config_text() -> String {
    let var = |name: &str, cats: &[&str], external: bool| {
        let table = if external { "external_vars" } else { "constraint_vars" };
        format!("[[schema.{table}]]\nname = \"{name}\"\ncategories = {}\n\n", toml_list(cats))
    };
    let mut text = String::from(
        "seed = 2011\nequivalize = true\n\n\
         [paths]\nconstraints = \"constraints.csv\"\nsurvey = \"survey.csv\"\n\
         external = \"external.csv\"\ncrosswalks = \"crosswalk.csv\"\noutput_dir = \"out\"\n\n\
         [ipf]\nmax_iterations = 100\ntolerance = 1e-6\n\n\
         [poverty]\narop_fraction = 0.6\nmd_threshold = 3\n\n\
         [poverty.mpi]\ncutoff = 0.3333333333333333\n\n\
         [[poverty.mpi.dimensions]]\nname = \"income\"\nweight = 0.3333333333333333\n\
         indicators = [{ kind = \"income_poor\" }]\n\n\
         [[poverty.mpi.dimensions]]\nname = \"living_standard\"\nweight = 0.3333333333333333\n\
         indicators = [{ kind = \"lacks_items\", min = 3 }]\n\n\
         [[poverty.mpi.dimensions]]\nname = \"work_education\"\nweight = 0.3333333333333334\n\
         indicators = [\n  { kind = \"category\", variable = \"activity\", categories = [\"unemployed\"] },\n\
         \x20 { kind = \"category\", variable = \"education\", categories = [\"primary\"] },\n]\n\n\
         [schema]\nincome_field = \"income\"\nhousehold_field = \"household_id\"\n\
         numeric_fields = [\"hh_adults\", \"hh_children\"]\n\n",
    );
    text.push_str(&var("sex_age", &SEX_AGE, false));
    text.push_str(&var("marital", &MARITAL, false));
    text.push_str(&var("activity", &ACTIVITY, false));
    text.push_str(&var("education", &EDUCATION, false));
    text.push_str(&var("nace", &NACE, true));
    text.push_str(&var("isco", &ISCO, true));
    text
}

/// Writes `constraints.csv`, `survey.csv`, `external.csv`, `crosswalk.csv` and
/// `config.toml` into `dir`.
pub fn generate(dir: &Path, spec: &FixtureSpec) -> Result<Fixture> {
    anyhow::ensure!(spec.zones > 0 && spec.persons >= spec.zones, "need at least one person per zone");
    anyhow::ensure!(spec.survey > 0 && spec.survey <= spec.persons, "survey size must be in 1..=persons");
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zone_ids: Vec<String> = (1..=spec.zones).map(|z| format!("Z{z:02}")).collect();

    // Log-uniform zone sizes give the spread seen across municipalities.
    let raw: Vec<f64> = (0..spec.zones).map(|_| (rng.random_range(0.0..1.0) * 50f64.ln()).exp()).collect();
    let scale = spec.persons as f64 / raw.iter().sum::<f64>();
    let sizes: Vec<usize> = raw.iter().map(|r| ((r * scale).round() as usize).max(1)).collect();

    let zone_affluence = Normal::new(0.0, 0.6)?;
    let household_noise = Normal::new(0.0, 0.5)?;
    let tilt = Normal::new(0.0, 0.3)?;
    let wage = LogNormal::new(0.0, 0.35)?;

    let mut people: Vec<Person> = Vec::with_capacity(spec.persons + 8 * spec.zones);
    let mut households: Vec<Household> = Vec::new();
    for (z, &size) in sizes.iter().enumerate() {
        let alpha = zone_affluence.sample(&mut rng);
        let tau = tilt.sample(&mut rng);
        let age_weights: Vec<f64> = [0.17, 0.19, 0.18, 0.16, 0.13, 0.11, 0.06]
            .iter()
            .enumerate()
            .map(|(a, w)| w * (tau * (a as f64 - 3.0) / 3.0).exp())
            .collect();
        let mut placed = 0;
        while placed < size {
            let affluence = alpha + household_noise.sample(&mut rng);
            let adults = 1 + pick(&mut rng, &[0.28, 0.42, 0.18, 0.12]) as u32;
            let head_age = pick(&mut rng, &age_weights);
            let children = if head_age <= 3 {
                pick(&mut rng, &[0.45, 0.25, 0.22, 0.08]) as u32
            } else {
                0
            };
            let h = households.len();
            let mut income = 0.0;
            for k in 0..adults {
                let age = if k == 0 { head_age } else { pick(&mut rng, &age_weights) };
                let female = rng.random_bool(0.52);
                let sex_age = age + if female { 7 } else { 0 };
                let marital = pick(&mut rng, &marital_weights(age));
                let edu_score = affluence + 0.5 * household_noise.sample(&mut rng) - 0.25 * age as f64;
                let education = if edu_score > 0.1 {
                    0
                } else if edu_score > -1.2 {
                    1
                } else {
                    2
                };
                let activity = pick(&mut rng, &activity_weights(age, female, education, affluence));
                let (nace, isco) = if activity <= 2 {
                    (
                        Some(pick(&mut rng, &nace_weights(activity))),
                        Some(pick(&mut rng, &isco_weights(activity, education))),
                    )
                } else {
                    (None, None)
                };
                let base = match activity {
                    0..=2 => (9.5 + 0.3 * (2 - education) as f64 + 0.25 * affluence).exp(),
                    5 => (9.1 + 0.15 * (2 - education) as f64 + 0.15 * affluence).exp(),
                    3 => 1800.0,
                    _ => 0.0,
                };
                income += base * wage.sample(&mut rng);
                people.push(Person {
                    zone: z,
                    household: h,
                    sex_age,
                    marital,
                    activity,
                    education,
                    nace,
                    isco,
                });
            }
            income = income.round();
            let eq = equivalize(income, adults, children)?;
            let pressure = 1.3 * (9.6 - eq.max(500.0).ln());
            let mut deprived = [false; DEPRIVATION_ITEMS];
            for (j, d) in deprived.iter_mut().enumerate() {
                *d = rng.random_bool(logistic(pressure - 2.7 + 0.35 * j as f64 - 0.25 * j as f64 * (j % 2) as f64));
            }
            households.push(Household {
                adults,
                children,
                income,
                deprived,
            });
            placed += adults as usize;
        }
    }

    let n_zones = spec.zones;
    let count = |f: &dyn Fn(&Person) -> Option<usize>, k: usize| {
        let mut c = vec![vec![0u64; k]; n_zones];
        for p in &people {
            if let Some(i) = f(p) {
                c[p.zone][i] += 1;
            }
        }
        c
    };
    let mut constraints = String::from("zone_id,variable,category,count\n");
    constraints.push_str(&table_csv(&zone_ids, "sex_age", &SEX_AGE, &count(&|p| Some(p.sex_age), 14)));
    constraints.push_str(&table_csv(&zone_ids, "marital", &MARITAL, &count(&|p| Some(p.marital), 4)));
    constraints.push_str(&table_csv(&zone_ids, "activity", &ACTIVITY, &count(&|p| Some(p.activity), 8)));
    constraints.push_str(&table_csv(&zone_ids, "education", &EDUCATION, &count(&|p| Some(p.education), 3)));
    fs::write(dir.join("constraints.csv"), constraints)?;

    let group_of = |groups: &[(&str, &[&str])], fine: &[&str], i: usize| {
        groups.iter().position(|(_, members)| members.contains(&fine[i])).unwrap()
    };
    let mut external = String::from("zone_id,variable,category,count\n");
    let nace = count(&|p| p.nace.map(|i| group_of(&NACE_GROUPS, &NACE, i)), NACE_GROUPS.len());
    let isco = count(&|p| p.isco.map(|i| group_of(&ISCO_GROUPS, &ISCO, i)), ISCO_GROUPS.len());
    external.push_str(&table_csv(&zone_ids, "nace", &labels(&NACE_GROUPS), &nace));
    external.push_str(&table_csv(&zone_ids, "isco", &labels(&ISCO_GROUPS), &isco));
    fs::write(dir.join("external.csv"), external)?;

    let mut crosswalk = String::from("variable,fine_category,group_category\n");
    for (variable, groups) in [("nace", &NACE_GROUPS[..]), ("isco", &ISCO_GROUPS[..])] {
        for (group, members) in groups {
            for m in *members {
                let _ = writeln!(crosswalk, "{variable},{m},{group}");
            }
        }
    }
    fs::write(dir.join("crosswalk.csv"), crosswalk)?;

    let mut survey = String::from("record_id,household_id,sex_age,marital,activity,education,nace,isco,income");
    for j in 1..=DEPRIVATION_ITEMS {
        let _ = write!(survey, ",md{j}");
    }
    survey.push_str(",hh_adults,hh_children\n");
    let sample = rand::seq::index::sample(&mut rng, people.len(), spec.survey);
    for (n, i) in sample.iter().enumerate() {
        let p = &people[i];
        let h = &households[p.household];
        let _ = write!(
            survey,
            "R{:05},H{:06},{},{},{},{},{},{},{}",
            n + 1,
            p.household,
            SEX_AGE[p.sex_age],
            MARITAL[p.marital],
            ACTIVITY[p.activity],
            EDUCATION[p.education],
            p.nace.map(|i| NACE[i]).unwrap_or(""),
            p.isco.map(|i| ISCO[i]).unwrap_or(""),
            h.income
        );
        for d in h.deprived {
            let _ = write!(survey, ",{}", d as u8);
        }
        let _ = writeln!(survey, ",{},{}", h.adults, h.children);
    }
    fs::write(dir.join("survey.csv"), survey)?;

    let config = dir.join("config.toml");
    fs::write(&config, config_text())?;

    let mut sums = vec![(0.0, 0usize); n_zones];
    for p in &people {
        let h = &households[p.household];
        sums[p.zone].0 += equivalize(h.income, h.adults, h.children)?;
        sums[p.zone].1 += 1;
    }
    Ok(Fixture {
        dir: dir.to_path_buf(),
        config,
        zone_ids,
        persons: people.len(),
        truth_mean_income: sums.iter().map(|(s, n)| s / *n as f64).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;
    use crate::ingest;

    #[test]
    fn small_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            zones: 4,
            persons: 2000,
            survey: 300,
            seed: 7,
        };
        let fx = generate(dir.path(), &spec).unwrap();
        let (config, warnings) = load_config(&fx.config).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        let schema = config.schema.build().unwrap();
        let tables = ingest::load_constraints(&config.paths.constraints, &schema).unwrap();
        assert_eq!(tables.len(), 4);
        for t in &tables {
            let total: f64 = (0..4).map(|z| t.zone_total(z)).sum();
            assert_eq!(total as usize, fx.persons);
        }
        let survey = ingest::load_survey(&config.paths.survey, &schema).unwrap();
        assert_eq!(survey.len(), 300);
        let cw = ingest::load_crosswalks(config.paths.crosswalks.as_ref().unwrap()).unwrap();
        let external = ingest::load_external(config.paths.external.as_ref().unwrap(), &schema, &cw).unwrap();
        assert_eq!(external.len(), 2);
        assert_eq!(external[0].groups.len(), 12);
        assert_eq!(external[1].groups.len(), 7);
    }
}
