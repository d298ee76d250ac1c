//! Readers for the plain-text inputs: long-format constraint and external
//! tables, wide-format survey microdata, crosswalks and synthetic populations.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use microsim_core::schema::SurveyRecord;
use microsim_core::{
    AggregateTable, ConstraintTable, Crosswalk, Schema, SurveyDataset, SyntheticPopulation,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: expected header '{expected}', found '{found}'")]
    Header {
        path: String,
        expected: String,
        found: String,
    },

    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },

    #[error("{path}: unknown variable '{variable}' at line {line}")]
    UnknownVariable {
        path: String,
        variable: String,
        line: u64,
    },

    #[error("{path}: unknown category '{category}' at line {line}")]
    UnknownCategory {
        path: String,
        category: String,
        line: u64,
    },

    #[error("{path}: {message} at line {line}")]
    Invalid {
        path: String,
        message: String,
        line: u64,
    },

    #[error("{path}: no rows for constraint variable '{variable}'")]
    MissingVariable { path: String, variable: String },

    #[error(transparent)]
    Model(#[from] microsim_core::Error),
}

type Result<T> = std::result::Result<T, IngestError>;

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file))
}

struct Rows {
    path: String,
    reader: csv::Reader<File>,
    header: Vec<String>,
}

impl Rows {
    fn new(path: &Path) -> Result<Self> {
        let mut reader = open(path)?;
        let path = path.display().to_string();
        let header = reader
            .headers()
            .map_err(|source| IngestError::Csv {
                path: path.clone(),
                source,
            })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        Ok(Self { path, reader, header })
    }

    fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header != expected {
            return Err(IngestError::Header {
                path: self.path.clone(),
                expected: expected.join(","),
                found: self.header.join(","),
            });
        }
        Ok(())
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn {
                path: self.path.clone(),
                column: name.into(),
            })
    }

    /// Calls `f` with every data row and its 1-based line number.
    fn each(&mut self, mut f: impl FnMut(&str, &csv::StringRecord, u64) -> Result<()>) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|source| IngestError::Csv {
                    path: self.path.clone(),
                    source,
                })?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            record.trim();
            f(&self.path, &record, line)?;
        }
    }
}

fn invalid(path: &str, line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Invalid {
        path: path.into(),
        message: message.into(),
        line,
    }
}

fn parse_count(path: &str, line: u64, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| invalid(path, line, format!("count '{cell}' is not a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(invalid(path, line, format!("count '{cell}' must be finite and >= 0")));
    }
    Ok(v)
}

const LONG_HEADER: [&str; 4] = ["zone_id", "variable", "category", "count"];

/// `variable -> (category label -> index)` for the long-format readers.
type CategoryIndex = HashMap<String, (usize, Vec<String>)>;

/// Reads a long-format `zone_id,variable,category,count` file into one table
/// per variable in `index` order. Zones are ordered by first appearance and
/// missing cells are 0.
fn read_long(path: &Path, index: &CategoryIndex, order: &[String]) -> Result<Vec<ConstraintTable>> {
    let mut rows = Rows::new(path)?;
    rows.expect_header(&LONG_HEADER)?;
    let mut zones: Vec<String> = Vec::new();
    let mut zone_pos: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); order.len()];
    let mut seen: HashMap<(usize, usize, usize), u64> = HashMap::new();
    rows.each(|path, rec, line| {
        let zone = &rec[0];
        if zone.is_empty() {
            return Err(invalid(path, line, "empty zone id"));
        }
        let (v, cats) = index
            .get(&rec[1])
            .ok_or_else(|| IngestError::UnknownVariable {
                path: path.into(),
                variable: rec[1].into(),
                line,
            })?;
        let c = cats
            .iter()
            .position(|c| c == &rec[2])
            .ok_or_else(|| IngestError::UnknownCategory {
                path: path.into(),
                category: rec[2].into(),
                line,
            })?;
        let count = parse_count(path, line, &rec[3])?;
        let z = *zone_pos.entry(zone.to_string()).or_insert_with(|| {
            zones.push(zone.to_string());
            zones.len() - 1
        });
        if let Some(first) = seen.insert((*v, z, c), line) {
            return Err(invalid(path, line, format!("duplicate cell (first at line {first})")));
        }
        cells[*v].push((z, c, count));
        Ok(())
    })?;

    let mut tables = Vec::with_capacity(order.len());
    for (v, name) in order.iter().enumerate() {
        if cells[v].is_empty() {
            return Err(IngestError::MissingVariable {
                path: path.display().to_string(),
                variable: name.clone(),
            });
        }
        let categories = index[name].1.clone();
        let mut counts = vec![vec![0.0; categories.len()]; zones.len()];
        for &(z, c, x) in &cells[v] {
            counts[z][c] = x;
        }
        tables.push(ConstraintTable::new(name.clone(), zones.clone(), categories, counts)?);
    }
    Ok(tables)
}

/// One table per constraint variable, in schema order.
pub fn load_constraints(path: &Path, schema: &Schema) -> Result<Vec<ConstraintTable>> {
    let index: CategoryIndex = schema
        .constraint_vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.name.clone(), (i, v.categories.clone())))
        .collect();
    let order: Vec<String> = schema.constraint_vars.iter().map(|v| v.name.clone()).collect();
    read_long(path, &index, &order)
}

/// Zone-level reference tables for external variables. A variable with a
/// crosswalk is expected at group level, otherwise at category level. Only the
/// variables present in the file are returned, in schema order.
pub fn load_external(path: &Path, schema: &Schema, crosswalks: &[Crosswalk]) -> Result<Vec<AggregateTable>> {
    let mut rows = Rows::new(path)?;
    rows.expect_header(&LONG_HEADER)?;
    let mut present = Vec::new();
    rows.each(|_, rec, _| {
        if !present.iter().any(|p: &String| p == &rec[1]) {
            present.push(rec[1].to_string());
        }
        Ok(())
    })?;
    let order: Vec<String> = schema
        .external_vars
        .iter()
        .map(|v| v.name.clone())
        .filter(|n| present.contains(n))
        .collect();
    let index: CategoryIndex = order
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let cats = match crosswalks.iter().find(|c| &c.variable == name) {
                Some(cw) => cw.groups(),
                None => schema.external_vars[schema.external_index(name).unwrap()]
                    .categories
                    .clone(),
            };
            (name.clone(), (i, cats))
        })
        .collect();
    Ok(read_long(path, &index, &order)?
        .iter()
        .map(AggregateTable::from)
        .collect())
}

/// Writes tables in the long format read by [`load_constraints`].
pub fn constraints_csv(tables: &[ConstraintTable]) -> String {
    let mut out = String::from("zone_id,variable,category,count\n");
    for t in tables {
        for (z, zone) in t.zones.iter().enumerate() {
            for (c, cat) in t.categories.iter().enumerate() {
                out.push_str(&format!("{zone},{},{cat},{}\n", t.variable, t.counts[z][c]));
            }
        }
    }
    out
}

fn parse_flag(path: &str, line: u64, cell: &str) -> Result<Option<bool>> {
    match cell {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        _ => Err(invalid(path, line, "deprivation field must be 0/1")),
    }
}

fn parse_optional_number(path: &str, line: u64, field: &str, cell: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| invalid(path, line, format!("'{field}' value '{cell}' is not a number")))?;
    if !v.is_finite() {
        return Err(invalid(path, line, format!("'{field}' value '{cell}' is not finite")));
    }
    Ok(Some(v))
}

/// Wide per-person survey file. Records keep file order.
pub fn load_survey(path: &Path, schema: &Schema) -> Result<SurveyDataset> {
    let mut rows = Rows::new(path)?;
    let id_col = rows.column("record_id")?;
    let hh_col = rows.column(&schema.household_field)?;
    let constraint_cols = schema
        .constraint_vars
        .iter()
        .map(|v| rows.column(&v.name))
        .collect::<Result<Vec<_>>>()?;
    let external_cols = schema
        .external_vars
        .iter()
        .map(|v| rows.column(&v.name))
        .collect::<Result<Vec<_>>>()?;
    let income_col = rows.column(&schema.income_field)?;
    let deprivation_cols = schema
        .deprivation_fields
        .iter()
        .map(|f| rows.column(f))
        .collect::<Result<Vec<_>>>()?;
    let numeric_cols = schema
        .numeric_fields
        .iter()
        .map(|f| rows.column(f))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut ids: HashMap<String, u64> = HashMap::new();
    rows.each(|path, rec, line| {
        let record_id = rec[id_col].to_string();
        if record_id.is_empty() {
            return Err(invalid(path, line, "empty record_id"));
        }
        if let Some(first) = ids.insert(record_id.clone(), line) {
            return Err(invalid(path, line, format!("duplicate record_id (first at line {first})")));
        }
        let household_id = rec[hh_col].to_string();
        if household_id.is_empty() {
            return Err(invalid(path, line, "empty household id"));
        }
        let category = |def: &microsim_core::VariableDef, cell: &str| {
            def.index_of(cell).ok_or_else(|| IngestError::UnknownCategory {
                path: path.into(),
                category: cell.into(),
                line,
            })
        };
        let categories = schema
            .constraint_vars
            .iter()
            .zip(&constraint_cols)
            .map(|(def, &col)| category(def, &rec[col]))
            .collect::<Result<Vec<_>>>()?;
        let external = schema
            .external_vars
            .iter()
            .zip(&external_cols)
            .map(|(def, &col)| match &rec[col] {
                "" => Ok(None),
                cell => category(def, cell).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        let income = parse_optional_number(path, line, &schema.income_field, &rec[income_col])?;
        if matches!(income, Some(x) if x < 0.0) {
            return Err(invalid(path, line, "income must be >= 0"));
        }
        let deprivation = deprivation_cols
            .iter()
            .map(|&col| parse_flag(path, line, &rec[col]))
            .collect::<Result<Vec<_>>>()?;
        let numeric = schema
            .numeric_fields
            .iter()
            .zip(&numeric_cols)
            .map(|(f, &col)| parse_optional_number(path, line, f, &rec[col]))
            .collect::<Result<Vec<_>>>()?;
        records.push(SurveyRecord {
            record_id,
            household_id,
            categories,
            external,
            income,
            deprivation,
            numeric,
        });
        Ok(())
    })?;
    Ok(SurveyDataset::new(schema, records)?)
}

/// `variable,fine_category,group_category`; one crosswalk per variable in
/// order of first appearance.
pub fn load_crosswalks(path: &Path) -> Result<Vec<Crosswalk>> {
    let mut rows = Rows::new(path)?;
    rows.expect_header(&["variable", "fine_category", "group_category"])?;
    let mut grouped: Vec<(String, Vec<(String, String)>)> = Vec::new();
    rows.each(|path, rec, line| {
        if rec.iter().any(str::is_empty) {
            return Err(invalid(path, line, "empty crosswalk cell"));
        }
        let pair = (rec[1].to_string(), rec[2].to_string());
        match grouped.iter_mut().find(|(v, _)| v == &rec[0]) {
            Some((_, m)) => m.push(pair),
            None => grouped.push((rec[0].to_string(), vec![pair])),
        }
        Ok(())
    })?;
    grouped
        .into_iter()
        .map(|(v, m)| Crosswalk::new(v, m).map_err(IngestError::from))
        .collect()
}

/// Reads a `zone_id,record_id,count` population file against known zones and
/// survey records. Absent pairs are 0.
pub fn load_population(path: &Path, zones: &[String], survey: &SurveyDataset) -> Result<SyntheticPopulation> {
    let mut rows = Rows::new(path)?;
    rows.expect_header(&["zone_id", "record_id", "count"])?;
    let zone_pos: HashMap<&str, usize> = zones.iter().enumerate().map(|(i, z)| (z.as_str(), i)).collect();
    let record_pos: HashMap<&str, usize> = survey
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.record_id.as_str(), i))
        .collect();
    let mut counts = vec![vec![0u64; survey.len()]; zones.len()];
    rows.each(|path, rec, line| {
        let z = *zone_pos
            .get(&rec[0])
            .ok_or_else(|| invalid(path, line, format!("unknown zone '{}'", &rec[0])))?;
        let r = *record_pos
            .get(&rec[1])
            .ok_or_else(|| invalid(path, line, format!("unknown record '{}'", &rec[1])))?;
        let c: u64 = rec[2]
            .parse()
            .map_err(|_| invalid(path, line, format!("count '{}' is not a non-negative integer", &rec[2])))?;
        counts[z][r] += c;
        Ok(())
    })?;
    Ok(SyntheticPopulation::new(
        zones.to_vec(),
        survey.records.iter().map(|r| r.record_id.clone()).collect(),
        counts,
    )?)
}
