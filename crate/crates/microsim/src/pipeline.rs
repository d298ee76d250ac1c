//! Orchestration: ingest → consistency → IPF → TRS → validation → indicators.
//!
//! Each `cmd_*` function backs one CLI subcommand and returns the process exit
//! status: 0 success, 1 hard error, 2 completed with warnings.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;

use microsim_core::indicators::{
    arop_absolute, arop_relative, equivalize, income_summary, md_rate, mpi, percent_change,
};
use microsim_core::integerize::{synthesize_zone, zone_populations};
use microsim_core::ipf::{assemble, ipf_table_zone};
use microsim_core::schema::{align_tables, check_consistency, rescale_constraints, CheckStatus};
use microsim_core::validate::{external_validation, internal_validation, ValidationReport};
use microsim_core::{
    AggregateTable, ConstraintTable, ConvergenceInfo, Crosswalk, RngSpec, Schema, SurveyDataset,
    SyntheticPopulation,
};

use crate::config::{load_config, PipelineConfig};
use crate::ingest;
use crate::manifest::Manifest;
use crate::output::{self, IndicatorTable, OutputSet, INDICATOR_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Success = 0,
    Error = 1,
    Warnings = 2,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub allow_inconsistent: bool,
    pub strict: bool,
    pub dump_weights: bool,
    pub compare: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub max_iters: Option<usize>,
    /// Worker threads for per-zone stages; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Suppresses the stdout summaries; warnings still go to stderr.
    pub quiet: bool,
}

impl RunOptions {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            ..Self::default()
        }
    }
}

struct Inputs {
    config: PipelineConfig,
    schema: Schema,
    tables: Vec<ConstraintTable>,
    survey: SurveyDataset,
    crosswalks: Vec<Crosswalk>,
    external: Vec<AggregateTable>,
    digests: Vec<(String, String, String)>,
}

fn digest_file(name: &str, path: &Path) -> Result<(String, String, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((name.into(), path.display().to_string(), output::sha256_hex(&bytes)))
}

impl Inputs {
    fn load(opts: &RunOptions) -> Result<(Self, Vec<String>)> {
        let (mut config, warnings) = load_config(&opts.config)?;
        if let Some(seed) = opts.seed {
            config.seed = seed;
        }
        if let Some(out) = &opts.out {
            config.paths.output_dir = out.clone();
        }
        if let Some(n) = opts.max_iters {
            if n == 0 {
                bail!("--max-iters must be at least 1");
            }
            config.ipf.max_iterations = n;
        }
        let schema = config.schema.build()?;
        let tables = ingest::load_constraints(&config.paths.constraints, &schema)?;
        let survey = ingest::load_survey(&config.paths.survey, &schema)?;
        let mut digests = vec![
            digest_file("config", &opts.config)?,
            digest_file("constraints", &config.paths.constraints)?,
            digest_file("survey", &config.paths.survey)?,
        ];
        let crosswalks = match &config.paths.crosswalks {
            Some(p) => {
                digests.push(digest_file("crosswalks", p)?);
                ingest::load_crosswalks(p)?
            }
            None => Vec::new(),
        };
        let external = match &config.paths.external {
            Some(p) => {
                digests.push(digest_file("external", p)?);
                ingest::load_external(p, &schema, &crosswalks)?
            }
            None => Vec::new(),
        };
        Ok((
            Self {
                config,
                schema,
                tables,
                survey,
                crosswalks,
                external,
                digests,
            },
            warnings,
        ))
    }
}

struct Run {
    command: &'static str,
    opts: RunOptions,
    inputs: Inputs,
    outputs: OutputSet,
    timings: Vec<(String, Duration)>,
    convergence: Option<ConvergenceInfo>,
    status: Exit,
    pool: Option<rayon::ThreadPool>,
}

impl Run {
    fn start(command: &'static str, opts: &RunOptions) -> Result<Self> {
        let t = Instant::now();
        let (inputs, warnings) = Inputs::load(opts)?;
        let outputs = OutputSet::new(&inputs.config.paths.output_dir)?;
        let pool = match opts.threads {
            Some(n) => Some(rayon::ThreadPoolBuilder::new().num_threads(n).build()?),
            None => None,
        };
        let mut run = Self {
            command,
            opts: opts.clone(),
            inputs,
            outputs,
            timings: Vec::new(),
            convergence: None,
            status: Exit::Success,
            pool,
        };
        for w in warnings {
            run.warn(w);
        }
        run.timings.push(("ingest".into(), t.elapsed()));
        Ok(run)
    }

    fn warn(&mut self, message: impl AsRef<str>) {
        eprintln!("warning: {}", message.as_ref());
        self.status = self.status.max(Exit::Warnings);
    }

    fn say(&self, text: impl AsRef<str>) {
        if !self.opts.quiet {
            println!("{}", text.as_ref());
        }
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self)?;
        self.timings.push((stage.into(), t.elapsed()));
        Ok(out)
    }

    /// Consistency check. Returns the tables to fit (rescaled to the first
    /// constraint variable when totals disagree), or `None` when the run must
    /// stop.
    fn check(&mut self, enforce: bool) -> Result<Option<Vec<ConstraintTable>>> {
        self.timed("check", |run| {
            let report = check_consistency(&run.inputs.schema, &run.inputs.tables, &run.inputs.survey)?;
            run.outputs.write("consistency.csv", &output::consistency_csv(&report))?;
            run.outputs.write("consistency_issues.csv", &output::consistency_issues_csv(&report))?;
            run.say(format!(
                "consistency: {} zones, {} variables, max zone-total disagreement {:.3}%",
                report.zones.len(),
                report.variables.len(),
                100.0 * report.max_disagreement
            ));
            for bad in &report.invalid_counts {
                run.say(format!(
                    "  invalid count {} in {}/{} zone {}",
                    bad.value, bad.variable, bad.category, bad.zone
                ));
            }
            if report.status() == CheckStatus::Errors {
                run.status = Exit::Error;
                return Ok(None);
            }
            for (v, c) in report.empty_cells.clone() {
                run.warn(format!("census category {v}/{c} has no survey records; IPF cannot populate it"));
            }
            if !report.is_consistent() {
                let n = report.inconsistent_zones().count();
                run.warn(format!(
                    "{n} zones have disagreeing totals across constraint tables (max {:.4}%)",
                    100.0 * report.max_disagreement
                ));
                if enforce && report.needs_override() && !run.opts.allow_inconsistent {
                    run.say("zone totals disagree by more than 5%; rerun with --allow-inconsistent to proceed");
                    run.status = Exit::Error;
                    return Ok(None);
                }
                let reference = run.inputs.schema.constraint_vars[0].name.clone();
                return Ok(Some(rescale_constraints(&run.inputs.tables, &reference)?));
            }
            Ok(Some(run.inputs.tables.clone()))
        })
    }

    fn synthesize(&mut self, tables: &[ConstraintTable]) -> Result<SyntheticPopulation> {
        let aligned = align_tables(&self.inputs.schema, tables)?;
        let opts = self.inputs.config.ipf.options();
        let survey = &self.inputs.survey;
        let t = Instant::now();
        let fits = self.install(|| {
            (0..aligned[0].n_zones())
                .into_par_iter()
                .map(|z| ipf_table_zone(survey, &aligned, z, &opts))
                .collect::<microsim_core::Result<Vec<_>>>()
        })?;
        let (weights, info) = assemble(survey, &aligned[0].zones, fits);
        self.timings.push(("ipf".into(), t.elapsed()));

        let t = Instant::now();
        let targets = zone_populations(aligned[0]);
        let rng = RngSpec::new(self.inputs.config.seed);
        let counts = self.install(|| {
            targets
                .par_iter()
                .enumerate()
                .map(|(z, &target)| synthesize_zone(&weights, z, target, &rng))
                .collect::<microsim_core::Result<Vec<_>>>()
        })?;
        let population = SyntheticPopulation::new(weights.zone_ids.clone(), weights.record_ids.clone(), counts)?;
        self.timings.push(("trs".into(), t.elapsed()));

        let converged = info.zones.iter().filter(|z| z.converged).count();
        self.say(format!(
            "ipf: {converged}/{} zones converged, max relative TAE {:.3e}",
            info.zones.len(),
            info.zones.iter().map(|z| z.relative_tae).fold(0.0, f64::max)
        ));
        self.say(format!(
            "trs: {} persons over {} zones",
            population.totals.iter().sum::<u64>(),
            population.n_zones()
        ));

        self.outputs.write("population.csv", &output::population_csv(&population))?;
        self.outputs.write("convergence.csv", &output::convergence_csv(&info))?;
        if self.opts.dump_weights {
            self.outputs.write("weights.csv", &output::weights_csv(&weights))?;
        }
        if !info.all_converged() {
            let ids: Vec<&str> = info.non_converged().collect();
            let message = format!("IPF did not converge in {} zones: {}", ids.len(), ids.join(" "));
            if self.opts.strict {
                self.say(&message);
                self.status = Exit::Error;
            } else {
                self.warn(message);
            }
        }
        self.convergence = Some(info);
        Ok(population)
    }

    fn validate(&mut self, tables: &[ConstraintTable], population: &SyntheticPopulation) -> Result<()> {
        self.timed("validate", |run| {
            let inputs = &run.inputs;
            let internal = internal_validation(population, &inputs.survey, &inputs.schema, tables)?;
            let mut external = ValidationReport::default();
            for actual in &inputs.external {
                let cw = inputs.crosswalks.iter().find(|c| c.variable == actual.variable);
                external.extend(external_validation(population, &inputs.survey, &inputs.schema, actual, cw)?);
            }

            run.outputs.write("validation_internal.csv", &output::metrics_csv(&internal.metrics))?;
            write_scatter(&mut run.outputs, &internal)?;
            if !run.inputs.external.is_empty() {
                run.outputs.write("validation_external.csv", &output::metrics_csv(&external.metrics))?;
                run.outputs.write("validation_shares.csv", &output::shares_csv(&external.shares))?;
                write_scatter(&mut run.outputs, &external)?;
            }

            run.say(metrics_table("internal validation", &internal));
            if !external.metrics.is_empty() {
                run.say(metrics_table("external validation", &external));
                let mut text = format!("{:<28} {:>10} {:>10} {:>8}", "group", "census %", "sim %", "diff");
                for r in &external.shares {
                    text.push_str(&format!(
                        "\n{:<28} {:>10.3} {:>10.3} {:>8.3}",
                        format!("{}/{}", r.variable, r.group),
                        r.census_pct,
                        r.simulated_pct,
                        r.diff
                    ));
                }
                run.say(text);
            }
            Ok(())
        })
    }

    fn incomes(&self) -> Result<Vec<Option<f64>>> {
        let schema = &self.inputs.schema;
        let cfg = &self.inputs.config;
        if !cfg.equivalize {
            return Ok(self.inputs.survey.records.iter().map(|r| r.income).collect());
        }
        let adults = schema
            .numeric_index(&cfg.schema.adults_field)
            .ok_or_else(|| anyhow!("numeric field '{}' not in schema", cfg.schema.adults_field))?;
        let children = schema
            .numeric_index(&cfg.schema.children_field)
            .ok_or_else(|| anyhow!("numeric field '{}' not in schema", cfg.schema.children_field))?;
        self.inputs
            .survey
            .records
            .iter()
            .map(|r| {
                let (Some(inc), Some(a), Some(c)) = (r.income, r.numeric[adults], r.numeric[children]) else {
                    return Ok(None);
                };
                if a < 1.0 || a.fract() != 0.0 || c < 0.0 || c.fract() != 0.0 {
                    bail!("record '{}': household composition must be whole numbers with at least one adult", r.record_id);
                }
                Ok(Some(equivalize(inc, a as u32, c as u32)?))
            })
            .collect()
    }

    fn indicators(&mut self, population: &SyntheticPopulation) -> Result<()> {
        self.timed("indicators", |run| {
            let incomes = run.incomes()?;
            let cfg = &run.inputs.config;
            let fraction = cfg.poverty.arop_fraction;
            let income = income_summary(population, &incomes)?;
            let arop_abs = arop_absolute(population, &incomes, fraction)?;
            let arop_rel = arop_relative(population, &incomes, fraction)?;
            let md = md_rate(population, &run.inputs.survey, cfg.poverty.md_threshold)?;
            let spec = cfg.mpi_spec();
            let matrix = spec.resolve(&run.inputs.schema, &run.inputs.survey, &incomes, Some(arop_abs.line))?;
            let mpi_report = mpi(population, &matrix, &spec.indicator_weights(), spec.cutoff)?;

            let table = IndicatorTable {
                zone_ids: &population.zone_ids,
                income: &income,
                arop_abs: &arop_abs,
                arop_rel: &arop_rel,
                md: &md,
                mpi: &mpi_report,
            };
            let csv = table.csv();

            let missing_items = run
                .inputs
                .survey
                .records
                .iter()
                .filter(|r| r.deprivation.iter().any(Option::is_none))
                .count();
            let excluded = income.metro.excluded_missing_income;
            run.outputs.write("indicators.csv", &csv)?;
            run.say(indicator_summary(&csv, arop_abs.line));
            if missing_items > 0 {
                run.warn(format!(
                    "{missing_items} survey records have missing deprivation items (treated as not deprived)"
                ));
            }
            if excluded > 0 {
                run.say(format!("{excluded} synthetic persons have no income and are excluded from income measures"));
            }
            if let Some(dir) = run.opts.compare.clone() {
                let earlier = fs::read_to_string(dir.join("indicators.csv"))
                    .with_context(|| format!("reading {}", dir.join("indicators.csv").display()))?;
                let diff = indicators_diff(&earlier, &csv)?;
                run.outputs.write("indicators_diff.csv", &diff)?;
            }
            Ok(())
        })
    }

    fn load_population(&self) -> Result<SyntheticPopulation> {
        let path = self
            .opts
            .population
            .clone()
            .unwrap_or_else(|| self.outputs.path("population.csv"));
        Ok(ingest::load_population(&path, &self.inputs.tables[0].zones, &self.inputs.survey)?)
    }

    fn finish(mut self) -> Result<Exit> {
        for (stage, t) in &self.timings {
            info!("{stage}: {:.1} ms", t.as_secs_f64() * 1e3);
        }
        let flags = [
            ("allow_inconsistent", self.opts.allow_inconsistent.to_string()),
            ("strict", self.opts.strict.to_string()),
            ("dump_weights", self.opts.dump_weights.to_string()),
        ];
        let manifest = Manifest {
            command: self.command,
            config: &self.inputs.config,
            seed: self.inputs.config.seed,
            inputs: &self.inputs.digests,
            flags: &flags,
            convergence: self.convergence.as_ref(),
            outputs: &self.outputs.files,
            timings: &self.timings,
        }
        .render();
        self.outputs.write("manifest.txt", &manifest)?;
        Ok(self.status)
    }
}

fn write_scatter(outputs: &mut OutputSet, report: &ValidationReport) -> Result<()> {
    let mut variables: Vec<&str> = Vec::new();
    for p in &report.scatter {
        if !variables.contains(&p.variable.as_str()) {
            variables.push(&p.variable);
        }
    }
    for v in variables {
        let points: Vec<_> = report.scatter.iter().filter(|p| p.variable == v).collect();
        outputs.write(&format!("scatter_{v}.csv"), &output::scatter_csv(&points))?;
    }
    Ok(())
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn metrics_table(title: &str, report: &ValidationReport) -> String {
    let mut text = format!("{title}\n{:<32} {:>7} {:>7} {:>8} {:>7}", "category", "R2", "SEI", "t", "p");
    for m in &report.metrics {
        let x = &m.metrics;
        text.push_str(&format!(
            "\n{:<32} {:>7} {:>7} {:>8} {:>7}",
            format!("{}/{}", m.variable, m.category),
            fmt3(x.r_squared),
            fmt3(x.sei),
            fmt3(x.t_stat),
            fmt3(x.p_value)
        ));
    }
    text
}

fn indicator_summary(csv: &str, line: f64) -> String {
    let mut text = format!("indicators (absolute poverty line {line:.3})\n");
    for row in csv.lines() {
        let cells: Vec<String> = row
            .split(',')
            .map(|c| match c.parse::<f64>() {
                Ok(x) if c.contains('.') => format!("{x:.3}"),
                _ => c.to_string(),
            })
            .collect();
        text.push_str(&cells.join("  "));
        text.push('\n');
    }
    text
}

const DIFF_METRICS: [&str; 6] = ["mean_income", "median_income", "arop_abs", "arop_rel", "md_rate", "mpi_m0"];

/// Two-run comparison of `indicators.csv` files, matched by zone id.
pub fn indicators_diff(earlier: &str, later: &str) -> Result<String> {
    fn parse(text: &str) -> Result<(Vec<String>, HashMap<String, Vec<String>>)> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != INDICATOR_HEADER {
            bail!("not an indicators file (header '{header}')");
        }
        let cols: Vec<String> = header.split(',').map(String::from).collect();
        let mut order = Vec::new();
        let mut rows = HashMap::new();
        for l in lines {
            let cells: Vec<String> = l.split(',').map(String::from).collect();
            order.push(cells[0].clone());
            rows.insert(cells[0].clone(), cells);
        }
        let _ = cols;
        Ok((order, rows))
    }
    let (_, before) = parse(earlier)?;
    let (order, after) = parse(later)?;
    let cols: Vec<&str> = INDICATOR_HEADER.split(',').collect();
    let mut out = String::from("zone_id,metric,earlier,later,pct_change\n");
    for zone in &order {
        let Some(b) = before.get(zone) else { continue };
        let a = &after[zone];
        for metric in DIFF_METRICS {
            let i = cols.iter().position(|c| *c == metric).unwrap();
            let e = b[i].parse::<f64>().ok();
            let l = a[i].parse::<f64>().ok();
            let pct = match (e, l) {
                (Some(e), Some(l)) => percent_change(e, l).ok(),
                _ => None,
            };
            out.push_str(&format!(
                "{zone},{metric},{},{},{}\n",
                b[i],
                a[i],
                pct.map(|p| p.to_string()).unwrap_or_default()
            ));
        }
    }
    Ok(out)
}

pub fn cmd_check(opts: &RunOptions) -> Result<Exit> {
    let mut run = Run::start("check", opts)?;
    run.check(false)?;
    run.finish()
}

pub fn cmd_synthesize(opts: &RunOptions) -> Result<Exit> {
    let mut run = Run::start("synthesize", opts)?;
    if let Some(tables) = run.check(true)? {
        run.synthesize(&tables)?;
    }
    run.finish()
}

pub fn cmd_validate(opts: &RunOptions) -> Result<Exit> {
    let mut run = Run::start("validate", opts)?;
    if let Some(tables) = run.check(false)? {
        let population = run.load_population()?;
        run.validate(&tables, &population)?;
    }
    run.finish()
}

pub fn cmd_indicators(opts: &RunOptions) -> Result<Exit> {
    let mut run = Run::start("indicators", opts)?;
    let population = run.load_population()?;
    run.indicators(&population)?;
    run.finish()
}

pub fn cmd_pipeline(opts: &RunOptions) -> Result<Exit> {
    let mut run = Run::start("pipeline", opts)?;
    if let Some(tables) = run.check(true)? {
        let population = run.synthesize(&tables)?;
        if run.status != Exit::Error {
            run.validate(&tables, &population)?;
            run.indicators(&population)?;
        }
    }
    run.finish()
}
