//! Pipeline configuration, read from TOML.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Unknown keys are reported as warnings; invalid values are errors.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use microsim_core::indicators::{IndicatorKind, MpiDimension, MpiIndicator, MpiSpec};
use microsim_core::{IpfOptions, Schema, VariableDef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub ipf: IpfConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub poverty: PovertyConfig,
    #[serde(default)]
    pub equivalize: bool,
    pub schema: SchemaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub constraints: PathBuf,
    pub survey: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crosswalks: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpfConfig {
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iterations() -> usize {
    100
}

fn default_tolerance() -> f64 {
    1e-6
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }
}

impl IpfConfig {
    pub fn options(&self) -> IpfOptions {
        IpfOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PovertyConfig {
    #[serde(default = "default_arop_fraction")]
    pub arop_fraction: f64,
    #[serde(default = "default_md_threshold")]
    pub md_threshold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpi: Option<MpiConfig>,
}

fn default_arop_fraction() -> f64 {
    0.6
}

fn default_md_threshold() -> usize {
    3
}

impl Default for PovertyConfig {
    fn default() -> Self {
        Self {
            arop_fraction: default_arop_fraction(),
            md_threshold: default_md_threshold(),
            mpi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpiConfig {
    pub cutoff: f64,
    pub dimensions: Vec<DimensionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionConfig {
    pub name: String,
    pub weight: f64,
    pub indicators: Vec<IndicatorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    #[serde(flatten)]
    pub kind: IndicatorKindConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndicatorKindConfig {
    Flag { field: String },
    Below { field: String, threshold: f64 },
    IncomePoor,
    LacksItems { min: usize },
    Category { variable: String, categories: Vec<String> },
}

impl From<&IndicatorKindConfig> for IndicatorKind {
    fn from(k: &IndicatorKindConfig) -> Self {
        match k {
            IndicatorKindConfig::Flag { field } => IndicatorKind::Flag { field: field.clone() },
            IndicatorKindConfig::Below { field, threshold } => IndicatorKind::Below {
                field: field.clone(),
                threshold: *threshold,
            },
            IndicatorKindConfig::IncomePoor => IndicatorKind::IncomePoor,
            IndicatorKindConfig::LacksItems { min } => IndicatorKind::LacksItems { min: *min },
            IndicatorKindConfig::Category { variable, categories } => IndicatorKind::Category {
                variable: variable.clone(),
                categories: categories.clone(),
            },
        }
    }
}

impl MpiConfig {
    pub fn to_spec(&self) -> MpiSpec {
        MpiSpec {
            cutoff: self.cutoff,
            dimensions: self
                .dimensions
                .iter()
                .map(|d| MpiDimension {
                    name: d.name.clone(),
                    weight: d.weight,
                    indicators: d
                        .indicators
                        .iter()
                        .map(|i| MpiIndicator {
                            kind: (&i.kind).into(),
                            share: i.share,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableConfig {
    pub name: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub constraint_vars: Vec<VariableConfig>,
    #[serde(default)]
    pub external_vars: Vec<VariableConfig>,
    #[serde(default = "default_income_field")]
    pub income_field: String,
    #[serde(default = "default_deprivation_fields")]
    pub deprivation_fields: Vec<String>,
    #[serde(default)]
    pub numeric_fields: Vec<String>,
    #[serde(default = "default_household_field")]
    pub household_field: String,
    /// Numeric field with the number of adults in the household (used when
    /// `equivalize = true`).
    #[serde(default = "default_adults_field")]
    pub adults_field: String,
    #[serde(default = "default_children_field")]
    pub children_field: String,
}

fn default_income_field() -> String {
    "income".into()
}

fn default_deprivation_fields() -> Vec<String> {
    (1..=9).map(|i| format!("md{i}")).collect()
}

fn default_household_field() -> String {
    "household_id".into()
}

fn default_adults_field() -> String {
    "hh_adults".into()
}

fn default_children_field() -> String {
    "hh_children".into()
}

impl SchemaConfig {
    pub fn build(&self) -> Result<Schema> {
        let vars = |list: &[VariableConfig]| {
            list.iter()
                .map(|v| VariableDef::new(v.name.clone(), v.categories.iter().cloned()))
                .collect::<microsim_core::Result<Vec<_>>>()
        };
        Ok(Schema::new(
            vars(&self.constraint_vars)?,
            vars(&self.external_vars)?,
            self.income_field.clone(),
            self.deprivation_fields.clone(),
            self.numeric_fields.clone(),
            self.household_field.clone(),
        )?)
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ipf.tolerance > 0.0) || !self.ipf.tolerance.is_finite() {
            bail!("ipf.tolerance must be positive, got {}", self.ipf.tolerance);
        }
        if self.ipf.max_iterations < 1 {
            bail!("ipf.max_iterations must be at least 1");
        }
        let f = self.poverty.arop_fraction;
        if !(f > 0.0 && f < 1.0) {
            bail!("poverty.arop_fraction must lie in (0, 1), got {f}");
        }
        if self.poverty.md_threshold < 1 {
            bail!("poverty.md_threshold must be a positive integer");
        }
        self.schema.build()?;
        self.mpi_spec().validate()?;
        if self.equivalize {
            for f in [&self.schema.adults_field, &self.schema.children_field] {
                if !self.schema.numeric_fields.contains(f) {
                    bail!("equivalize = true needs numeric field '{f}' in schema.numeric_fields");
                }
            }
        }
        Ok(())
    }

    /// The configured MPI, or two equally weighted dimensions (income poverty
    /// and material deprivation) with `k = 1/2` when none is given.
    pub fn mpi_spec(&self) -> MpiSpec {
        match &self.poverty.mpi {
            Some(m) => m.to_spec(),
            None => MpiSpec {
                cutoff: 0.5,
                dimensions: vec![
                    MpiDimension {
                        name: "income".into(),
                        weight: 0.5,
                        indicators: vec![MpiIndicator {
                            kind: IndicatorKind::IncomePoor,
                            share: None,
                        }],
                    },
                    MpiDimension {
                        name: "material_deprivation".into(),
                        weight: 0.5,
                        indicators: vec![MpiIndicator {
                            kind: IndicatorKind::LacksItems {
                                min: self.poverty.md_threshold,
                            },
                            share: None,
                        }],
                    },
                ],
            },
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.constraints);
        fix(&mut self.paths.survey);
        fix(&mut self.paths.output_dir);
        if let Some(p) = self.paths.external.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paths.crosswalks.as_mut() {
            fix(p);
        }
    }
}

/// Parses config text. Returns the config (paths unresolved) and warnings for
/// unknown keys.
pub fn parse_config(text: &str) -> Result<(PipelineConfig, Vec<String>)> {
    let raw: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
    let config: PipelineConfig = toml::Value::Table(raw.clone()).try_into().context("invalid config")?;
    config.validate()?;
    let known = toml::Value::try_from(&config).context("re-encoding config")?;
    let mut warnings = Vec::new();
    unknown_keys(&toml::Value::Table(raw), &known, "", &mut warnings);
    Ok((config, warnings))
}

fn unknown_keys(given: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (given, known) {
        (toml::Value::Table(g), toml::Value::Table(k)) => {
            for (key, value) in g {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                match k.get(key) {
                    Some(kv) => unknown_keys(value, kv, &path, out),
                    None => out.push(format!("unknown config key '{path}'")),
                }
            }
        }
        (toml::Value::Array(g), toml::Value::Array(k)) => {
            for (i, (gv, kv)) in g.iter().zip(k).enumerate() {
                unknown_keys(gv, kv, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Reads, validates and path-resolves a config file.
pub fn load_config(path: &Path) -> Result<(PipelineConfig, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (mut config, warnings) =
        parse_config(&text).with_context(|| format!("in config {}", path.display()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config.resolve_paths(base);
    Ok((config, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
constraints = "c.csv"
survey = "s.csv"

[schema]
[[schema.constraint_vars]]
name = "sex"
categories = ["M", "F"]
"#;

    #[test]
    fn defaults_fill_in() {
        let (c, warnings) = parse_config(MINIMAL).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        assert_eq!(c.poverty.arop_fraction, 0.6);
        assert_eq!(c.poverty.md_threshold, 3);
        assert_eq!(c.ipf.max_iterations, 100);
        assert_eq!(c.ipf.tolerance, 1e-6);
        assert_eq!(c.schema.deprivation_fields.len(), 9);
        assert!(!c.equivalize);
    }

    #[test]
    fn invalid_values_are_errors() {
        let bad = format!("{MINIMAL}\n[ipf]\ntolerance = -1\n");
        assert!(parse_config(&bad).is_err());
        let bad = format!("{MINIMAL}\n[poverty]\narop_fraction = 1.5\n");
        assert!(parse_config(&bad).is_err());
        let bad = format!("{MINIMAL}\n[ipf]\nmax_iterations = 0\n");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn unknown_keys_warn() {
        let text = format!("colour = \"red\"\n{MINIMAL}\nflavour = 1\n");
        let (_, warnings) = parse_config(&text).unwrap();
        assert_eq!(
            warnings,
            vec![
                "unknown config key 'colour'".to_string(),
                "unknown config key 'schema.constraint_vars[0].flavour'".to_string()
            ]
        );
    }

    #[test]
    fn mpi_section_round_trips() {
        let text = format!(
            "{MINIMAL}\n[poverty.mpi]\ncutoff = 0.5\n\
             [[poverty.mpi.dimensions]]\nname = \"inc\"\nweight = 0.5\nindicators = [{{ kind = \"income_poor\" }}]\n\
             [[poverty.mpi.dimensions]]\nname = \"md\"\nweight = 0.5\nindicators = [{{ kind = \"lacks_items\", min = 3, share = 1.0 }}]\n"
        );
        let (c, warnings) = parse_config(&text).unwrap();
        assert!(warnings.is_empty(), "{warnings:?}");
        let spec = c.mpi_spec();
        assert_eq!(spec.indicator_weights(), vec![0.5, 0.5]);
        let bad = text.replace("weight = 0.5\nindicators = [{ kind = \"income_poor\"", "weight = 0.4\nindicators = [{ kind = \"income_poor\"");
        assert!(parse_config(&bad).is_err());
    }
}
