//! `manifest.txt`: key-value record of everything needed to reproduce a run.
//! Lines starting with `timing.` are the only ones that vary between
//! identical runs.

use std::fmt::Write as _;
use std::time::Duration;

use microsim_core::{ConvergenceInfo, RngSpec};

use crate::config::PipelineConfig;

pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a PipelineConfig,
    pub seed: u64,
    pub inputs: &'a [(String, String, String)],
    pub flags: &'a [(&'static str, String)],
    pub convergence: Option<&'a ConvergenceInfo>,
    pub outputs: &'a [(String, String)],
    pub timings: &'a [(String, Duration)],
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut String) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        toml::Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), v, out);
            }
        }
        toml::Value::String(s) => {
            let _ = writeln!(out, "{prefix} = {s}");
        }
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}

impl Manifest<'_> {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "engine = microsim {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "generator = {}", RngSpec::GENERATOR);
        for (name, value) in self.flags {
            let _ = writeln!(out, "flag.{name} = {value}");
        }
        if let Ok(v) = toml::Value::try_from(self.config) {
            flatten("config", &v, &mut out);
        }
        for (name, path, digest) in self.inputs {
            let _ = writeln!(out, "input.{name} = {path}");
            let _ = writeln!(out, "input.{name}.sha256 = {digest}");
        }
        if let Some(info) = self.convergence {
            let converged = info.zones.iter().filter(|z| z.converged).count();
            let max_iter = info.zones.iter().map(|z| z.iterations).max().unwrap_or(0);
            let max_rel = info.zones.iter().map(|z| z.relative_tae).fold(0.0, f64::max);
            let _ = writeln!(out, "convergence.zones = {}", info.zones.len());
            let _ = writeln!(out, "convergence.converged = {converged}");
            let _ = writeln!(out, "convergence.max_iterations_used = {max_iter}");
            let _ = writeln!(out, "convergence.max_relative_tae = {max_rel}");
        }
        for (name, digest) in self.outputs {
            let _ = writeln!(out, "output.{name}.sha256 = {digest}");
        }
        for (stage, t) in self.timings {
            let _ = writeln!(out, "timing.{stage}_ms = {:.3}", t.as_secs_f64() * 1e3);
        }
        out
    }
}

/// Drops `timing.` lines, leaving what must match between identical runs.
pub fn without_timings(manifest: &str) -> String {
    manifest
        .lines()
        .filter(|l| !l.starts_with("timing."))
        .map(|l| format!("{l}\n"))
        .collect()
}
