//! Report writers. Every file is rendered in memory and moved into place with
//! a rename, so a failed run never leaves a half-written output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use microsim_core::indicators::{AropAbsolute, AropRelative, IncomeSummary, MpiReport, ZoneValues};
use microsim_core::schema::ConsistencyReport;
use microsim_core::validate::{CategoryMetrics, ScatterPoint, ShareRow};
use microsim_core::{ConvergenceInfo, SyntheticPopulation, WeightMatrix};

/// Row label used for the pooled metro area in zone-keyed outputs.
pub const METRO_ROW: &str = "_metro";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks the files written during a run, with their digests.
#[derive(Debug, Default)]
pub struct OutputSet {
    pub dir: PathBuf,
    pub files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `name` atomically and records its digest.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write_atomic(&self.path(name), contents.as_bytes())?;
        let digest = sha256_hex(contents.as_bytes());
        match self.files.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = digest,
            None => self.files.push((name.to_string(), digest)),
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn population_csv(pop: &SyntheticPopulation) -> String {
    let mut out = String::from("zone_id,record_id,count\n");
    for (zone, counts) in pop.zone_ids.iter().zip(&pop.counts) {
        for (record, &c) in pop.record_ids.iter().zip(counts) {
            if c > 0 {
                let _ = writeln!(out, "{zone},{record},{c}");
            }
        }
    }
    out
}

pub fn weights_csv(weights: &WeightMatrix) -> String {
    let mut out = String::from("record_id,zone_id,weight\n");
    for (z, zone) in weights.zone_ids.iter().enumerate() {
        for (r, record) in weights.record_ids.iter().enumerate() {
            let _ = writeln!(out, "{record},{zone},{}", weights.get(r, z));
        }
    }
    out
}

pub fn convergence_csv(info: &ConvergenceInfo) -> String {
    let mut out = String::from("zone_id,iterations,tae,relative_tae,converged\n");
    for (id, z) in info.zone_ids.iter().zip(&info.zones) {
        let _ = writeln!(out, "{id},{},{},{},{}", z.iterations, z.tae, z.relative_tae, z.converged);
    }
    out
}

pub fn consistency_csv(report: &ConsistencyReport) -> String {
    let mut out = String::from("zone_id");
    for v in &report.variables {
        let _ = write!(out, ",{v}");
    }
    out.push_str(",disagreement\n");
    for (z, zone) in report.zones.iter().enumerate() {
        out.push_str(zone);
        for t in &report.zone_totals[z] {
            let _ = write!(out, ",{t}");
        }
        let _ = writeln!(out, ",{}", report.zone_disagreement[z]);
    }
    out
}

pub fn consistency_issues_csv(report: &ConsistencyReport) -> String {
    let mut out = String::from("kind,variable,category,zone_id,value\n");
    for (z, d) in report.inconsistent_zones() {
        let _ = writeln!(out, "zone_total_disagreement,,,{},{d}", report.zones[z]);
    }
    for (v, c) in &report.empty_cells {
        let _ = writeln!(out, "empty_cell,{v},{c},,");
    }
    for bad in &report.invalid_counts {
        let _ = writeln!(out, "invalid_count,{},{},{},{}", bad.variable, bad.category, bad.zone, bad.value);
    }
    out
}

pub fn metrics_csv(rows: &[CategoryMetrics]) -> String {
    let mut out = String::from("variable,category,r2,sei,t,p\n");
    for m in rows {
        let x = &m.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.variable,
            m.category,
            opt(x.r_squared),
            opt(x.sei),
            opt(x.t_stat),
            opt(x.p_value)
        );
    }
    out
}

pub fn shares_csv(rows: &[ShareRow]) -> String {
    let mut out = String::from("variable,group,census_pct,simulated_pct,diff\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.variable, r.group, r.census_pct, r.simulated_pct, r.diff);
    }
    out
}

pub fn scatter_csv(points: &[&ScatterPoint]) -> String {
    let mut out = String::from("zone_id,category,actual,simulated\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.zone, p.category, p.actual, p.simulated);
    }
    out
}

/// Zone-level measures gathered for `indicators.csv`.
pub struct IndicatorTable<'a> {
    pub zone_ids: &'a [String],
    pub income: &'a IncomeSummary,
    pub arop_abs: &'a AropAbsolute,
    pub arop_rel: &'a AropRelative,
    pub md: &'a ZoneValues,
    pub mpi: &'a MpiReport,
}

pub const INDICATOR_HEADER: &str =
    "zone_id,mean_income,median_income,arop_abs,arop_rel,md_rate,mpi_h,mpi_a,mpi_m0,excluded_missing_income";

impl IndicatorTable<'_> {
    pub fn csv(&self) -> String {
        let mut out = String::from(INDICATOR_HEADER);
        out.push('\n');
        for (z, zone) in self.zone_ids.iter().enumerate() {
            let inc = &self.income.zones[z];
            let m = self.mpi.zones[z];
            let _ = writeln!(
                out,
                "{zone},{},{},{},{},{},{},{},{},{}",
                opt(inc.mean),
                opt(inc.median),
                opt(self.arop_abs.rates.zones[z]),
                opt(self.arop_rel.rates[z]),
                opt(self.md.zones[z]),
                opt(m.map(|m| m.h)),
                opt(m.map(|m| m.a)),
                opt(m.map(|m| m.m0)),
                inc.excluded_missing_income
            );
        }
        let inc = &self.income.metro;
        let m = self.mpi.metro;
        let _ = writeln!(
            out,
            "{METRO_ROW},{},{},{},,{},{},{},{},{}",
            opt(inc.mean),
            opt(inc.median),
            opt(self.arop_abs.rates.metro),
            opt(self.md.metro),
            opt(m.map(|m| m.h)),
            opt(m.map(|m| m.a)),
            opt(m.map(|m| m.m0)),
            inc.excluded_missing_income
        );
        out
    }
}
