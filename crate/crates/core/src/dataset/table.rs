//! Delimiter-separated table ingestion and export.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, MatchRecord};
use crate::error::{Error, Result};

/// Where the treatment-cohort indicator comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentSource {
    /// A 0/1 column.
    Column(String),
    /// `intensity > median(intensity)`. At load time the median of the whole
    /// file is used; experiment pipelines re-derive it from the training
    /// split.
    IntensityMedian,
}

/// Column mapping for a match table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSchema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    pub subject_id: String,
    pub candidate_id: String,
    pub subject_features: Vec<String>,
    pub candidate_features: Vec<String>,
    pub treatment: TreatmentSource,
    pub intensity: String,
    /// Outcome columns; each becomes an outcome dimension of the same name.
    pub outcomes: Vec<String>,
}

fn default_delimiter() -> char {
    ','
}

impl TableSchema {
    /// The layout [`write_table`] uses for a dataset by default.
    pub fn for_dataset(ds: &Dataset) -> Self {
        TableSchema {
            delimiter: ',',
            subject_id: "subject_id".into(),
            candidate_id: "candidate_id".into(),
            subject_features: ds.subject_features.clone(),
            candidate_features: ds.candidate_features.clone(),
            treatment: TreatmentSource::Column("treatment".into()),
            intensity: "intensity".into(),
            outcomes: ds.outcome_names.clone(),
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|b| b.is_ascii())
            .ok_or_else(|| Error::Schema(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }
}

const INTENSITY_SLACK: f64 = 1e-9;

pub fn load_table(path: impl AsRef<Path>, schema: &TableSchema) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    load_table_from(file, schema)
}

pub fn load_table_from<R: Read>(reader: R, schema: &TableSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let column = |name: &str, role: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}' for {role}")))
    };

    let sid = column(&schema.subject_id, "subject_id")?;
    let cid = column(&schema.candidate_id, "candidate_id")?;
    let xs = schema
        .subject_features
        .iter()
        .map(|n| column(n, "subject feature"))
        .collect::<Result<Vec<_>>>()?;
    let ys = schema
        .candidate_features
        .iter()
        .map(|n| column(n, "candidate feature"))
        .collect::<Result<Vec<_>>>()?;
    let t_col = match &schema.treatment {
        TreatmentSource::Column(n) => Some(column(n, "treatment")?),
        TreatmentSource::IntensityMedian => None,
    };
    let p_col = column(&schema.intensity, "intensity")?;
    let outs = schema
        .outcomes
        .iter()
        .map(|n| column(n, "outcome"))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // 1-based, counting the header as line 1
        let line = i + 2;
        let row = row?;
        let bad = |message: String| Error::Row { row: line, message };
        let num = |idx: usize| -> Result<f64> {
            let raw = row.get(idx).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| bad(format!("cannot parse '{raw}' in column '{}'", &header[idx])))?;
            if !v.is_finite() {
                return Err(bad(format!(
                    "non-finite value in column '{}'",
                    &header[idx]
                )));
            }
            Ok(v)
        };

        let mut intensity = num(p_col)?;
        if !(0.0..=1.0).contains(&intensity) {
            if (-INTENSITY_SLACK..=1.0 + INTENSITY_SLACK).contains(&intensity) {
                intensity = intensity.clamp(0.0, 1.0);
            } else {
                return Err(bad(format!("intensity {intensity} outside [0, 1]")));
            }
        }
        let treatment = match t_col {
            Some(idx) => match row.get(idx).unwrap_or("").trim() {
                "1" | "true" | "True" | "TRUE" => true,
                "0" | "false" | "False" | "FALSE" => false,
                other => return Err(bad(format!("treatment value '{other}' is not 0/1"))),
            },
            None => false,
        };
        records.push(MatchRecord {
            subject_id: row.get(sid).unwrap_or("").to_string(),
            candidate_id: row.get(cid).unwrap_or("").to_string(),
            x: xs.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            y: ys.iter().map(|&c| num(c)).collect::<Result<_>>()?,
            treatment,
            intensity,
            outcomes: outs.iter().map(|&c| num(c)).collect::<Result<_>>()?,
        });
    }
    if records.is_empty() {
        return Err(Error::Data("table has no data rows".into()));
    }

    let mut ds = Dataset::new(
        records,
        schema.subject_features.clone(),
        schema.candidate_features.clone(),
        schema.outcomes.clone(),
    )?;
    if t_col.is_none() {
        let m = ds.intensity_median().expect("non-empty");
        ds.assign_treatment_by_threshold(m);
    }
    Ok(ds)
}

/// Writes `ds` using the column names of `schema`, which must take the
/// treatment from a column.
pub fn write_table(ds: &Dataset, schema: &TableSchema, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_table_to(ds, schema, file)
}

pub fn write_table_to<W: Write>(ds: &Dataset, schema: &TableSchema, writer: W) -> Result<()> {
    let TreatmentSource::Column(t_name) = &schema.treatment else {
        return Err(Error::Schema(
            "writing requires a treatment column name".into(),
        ));
    };
    if schema.subject_features.len() != ds.subject_dim()
        || schema.candidate_features.len() != ds.candidate_dim()
        || schema.outcomes.len() != ds.outcome_names.len()
    {
        return Err(Error::Schema("schema does not match dataset shape".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .from_writer(writer);
    let mut header: Vec<&str> = vec![&schema.subject_id, &schema.candidate_id];
    header.extend(schema.subject_features.iter().map(String::as_str));
    header.extend(schema.candidate_features.iter().map(String::as_str));
    header.push(t_name);
    header.push(&schema.intensity);
    header.extend(schema.outcomes.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &ds.records {
        let mut row: Vec<String> = vec![r.subject_id.clone(), r.candidate_id.clone()];
        row.extend(r.x.iter().chain(&r.y).map(|v| v.to_string()));
        row.push(if r.treatment { "1" } else { "0" }.to_string());
        row.push(r.intensity.to_string());
        row.extend(r.outcomes.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
