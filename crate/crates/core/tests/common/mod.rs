#![allow(dead_code)]

use microsim_core::{Schema, SurveyDataset, SurveyRecord, SyntheticPopulation, VariableDef};
use rand_core::{impls, RngCore};

pub fn schema(vars: &[(&str, usize)]) -> Schema {
    let defs = vars
        .iter()
        .map(|(n, k)| VariableDef::new(*n, (0..*k).map(|c| format!("c{c}"))).unwrap())
        .collect();
    Schema::new(defs, vec![], "income", vec![], vec![], "hh").unwrap()
}

pub fn survey(schema: &Schema, cats: &[Vec<usize>]) -> SurveyDataset {
    let records = cats
        .iter()
        .enumerate()
        .map(|(i, c)| SurveyRecord {
            record_id: format!("r{i}"),
            household_id: format!("h{i}"),
            categories: c.clone(),
            external: vec![],
            income: None,
            deprivation: vec![],
            numeric: vec![],
        })
        .collect();
    SurveyDataset::new(schema, records).unwrap()
}

pub fn population(counts: Vec<Vec<u64>>) -> SyntheticPopulation {
    let n = counts.first().map_or(0, Vec::len);
    SyntheticPopulation::new(
        (0..counts.len()).map(|z| format!("z{z}")).collect(),
        (0..n).map(|r| format!("r{r}")).collect(),
        counts,
    )
    .unwrap()
}

/// Replays a fixed uniform on every draw; `u` must be in `[0, 1)`.
pub struct FixedUniform(pub u64);

impl FixedUniform {
    pub fn new(u: f64) -> Self {
        Self(((u * (1u64 << 53) as f64) as u64) << 11)
    }
}

impl RngCore for FixedUniform {
    fn next_u32(&mut self) -> u32 {
        (self.0 >> 32) as u32
    }
    fn next_u64(&mut self) -> u64 {
        self.0
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
