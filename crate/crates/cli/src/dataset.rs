//! Embedding datasets on disk.
//!
//! Two layouts are supported:
//!
//! - Delimited table (`.csv` and anything not recognised as JSON lines): a
//!   header line `id,speaker_id,age,f0,...,f{D-1}` followed by one row per
//!   sample. `speaker_id` may be omitted or left empty. Columns with other names
//!   are carried along as string attributes, e.g. an `utterance` column used to
//!   group clips.
//! - JSON lines (`.jsonl`, `.ndjson`): one object per line with `id`,
//!   `speaker_id` (string or null), `age`, `features` (array of numbers) and any
//!   extra string-valued fields.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ldl_age_core::LabeledSample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Table,
    JsonLines,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => DatasetFormat::JsonLines,
            _ => DatasetFormat::Table,
        }
    }
}

/// Samples plus any extra string columns, row-aligned with `samples`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub extra_columns: Vec<String>,
    /// `extra[i][c]` is the value of `extra_columns[c]` for sample `i`.
    pub extra: Vec<Vec<String>>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<LabeledSample>) -> Self {
        let extra = vec![Vec::new(); samples.len()];
        Self {
            samples,
            extra_columns: Vec::new(),
            extra,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.embedding.len())
    }

    /// Values of a column by name: `id`, `speaker_id` or an extra column.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        match name {
            "id" => Some(self.samples.iter().map(|s| s.sample_id.as_str()).collect()),
            "speaker_id" => Some(
                self.samples
                    .iter()
                    .map(|s| s.speaker_id.as_deref().unwrap_or(""))
                    .collect(),
            ),
            _ => {
                let c = self.extra_columns.iter().position(|n| n == name)?;
                Some(self.extra.iter().map(|row| row[c].as_str()).collect())
            }
        }
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    load_dataset_as(path, DatasetFormat::from_path(path))
}

pub fn load_dataset_as(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let data = match format {
        DatasetFormat::Table => read_table(reader, path)?,
        DatasetFormat::JsonLines => read_json_lines(reader, path)?,
    };
    if data.is_empty() {
        return Err(Error::Format(format!(
            "{}: dataset has no rows",
            path.display()
        )));
    }
    Ok(data)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    save_dataset_as(path, data, DatasetFormat::from_path(path))
}

pub fn save_dataset_as(path: &Path, data: &Dataset, format: DatasetFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match format {
        DatasetFormat::Table => write_table(&mut w, data).map_err(|e| Error::io(path, e))?,
        DatasetFormat::JsonLines => {
            write_json_lines(&mut w, data).map_err(|e| Error::io(path, e))?
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Layout {
    id: usize,
    speaker: Option<usize>,
    age: usize,
    features: Vec<usize>,
    extra: Vec<(String, usize)>,
}

fn table_layout(header: &csv::StringRecord, path: &Path) -> Result<Layout> {
    let find = |name: &str| header.iter().position(|h| h == name);
    let missing = |name: &str| Error::Row {
        path: path.into(),
        line: 1,
        message: format!("header has no {name:?} column"),
    };
    let id = find("id").ok_or_else(|| missing("id"))?;
    let age = find("age").ok_or_else(|| missing("age"))?;
    let speaker = find("speaker_id");

    let mut features: Vec<(usize, usize)> = Vec::new();
    let mut extra = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if col == id || col == age || Some(col) == speaker {
            continue;
        }
        match name.strip_prefix('f').and_then(|n| n.parse::<usize>().ok()) {
            Some(k) => features.push((k, col)),
            None => extra.push((name.to_string(), col)),
        }
    }
    features.sort_unstable();
    if features.is_empty() {
        return Err(missing("f0"));
    }
    if let Some((pos, (k, _))) = features.iter().enumerate().find(|(pos, (k, _))| pos != k) {
        return Err(Error::Row {
            path: path.into(),
            line: 1,
            message: format!(
                "feature columns must be f0..f{}, found f{k} at position {pos}",
                features.len() - 1
            ),
        });
    }
    Ok(Layout {
        id,
        speaker,
        age,
        features: features.into_iter().map(|(_, c)| c).collect(),
        extra,
    })
}

fn parse_age(raw: &str) -> std::result::Result<f64, String> {
    let age: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("age {raw:?} is not a number"))?;
    check_age(age)
}

fn check_age(age: f64) -> std::result::Result<f64, String> {
    if !(age.is_finite() && age > 0.0) {
        return Err(format!("age must be a positive finite number, got {age}"));
    }
    Ok(age)
}

fn read_table<R: io::Read>(reader: R, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let layout = table_layout(&header, path)?;
    let width = header.len();

    let mut data = Dataset {
        extra_columns: layout.extra.iter().map(|(n, _)| n.clone()).collect(),
        ..Dataset::default()
    };
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(Error::Format(format!("{}: {e}", path.display()))),
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row_err = |message: String| Error::Row {
            path: path.into(),
            line,
            message,
        };
        if record.len() != width {
            return Err(Error::Format(format!(
                "{}: line {line} has {} fields but the header has {width}; embedding dimensions must agree",
                path.display(),
                record.len()
            )));
        }
        let age = parse_age(&record[layout.age]).map_err(row_err)?;
        let embedding = layout
            .features
            .iter()
            .enumerate()
            .map(|(k, &c)| match record[c].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(row_err(format!(
                    "feature f{k} value {:?} is not a finite number",
                    &record[c]
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let speaker = layout
            .speaker
            .map(|c| record[c].to_string())
            .filter(|s| !s.is_empty());
        data.samples.push(LabeledSample {
            sample_id: record[layout.id].to_string(),
            speaker_id: speaker,
            age,
            embedding,
        });
        data.extra.push(
            layout
                .extra
                .iter()
                .map(|(_, c)| record[*c].to_string())
                .collect(),
        );
    }
    Ok(data)
}

fn write_table<W: Write>(w: W, data: &Dataset) -> io::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let dim = data.dim().unwrap_or(0);
    let mut header = vec![
        "id".to_string(),
        "speaker_id".to_string(),
        "age".to_string(),
    ];
    header.extend((0..dim).map(|k| format!("f{k}")));
    header.extend(data.extra_columns.iter().cloned());
    wtr.write_record(&header)?;
    for (s, extra) in data.samples.iter().zip(&data.extra) {
        let mut row = Vec::with_capacity(header.len());
        row.push(s.sample_id.clone());
        row.push(s.speaker_id.clone().unwrap_or_default());
        row.push(s.age.to_string());
        row.extend(s.embedding.iter().map(f64::to_string));
        row.extend(extra.iter().cloned());
        wtr.write_record(&row)?;
    }
    wtr.flush()
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    #[serde(default)]
    speaker_id: Option<String>,
    age: serde_json::Value,
    features: Vec<f64>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

fn read_json_lines<R: BufRead>(reader: R, path: &Path) -> Result<Dataset> {
    let mut data = Dataset::default();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row_err = |message: String| Error::Row {
            path: path.into(),
            line: lineno,
            message,
        };
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| row_err(e.to_string()))?;
        let age = match &rec.age {
            serde_json::Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| "age is not a number".to_string())
                .and_then(check_age)
                .map_err(&row_err)?,
            serde_json::Value::String(s) => parse_age(s).map_err(&row_err)?,
            other => return Err(row_err(format!("age {other} is not a number"))),
        };
        match dim {
            None => {
                if rec.features.is_empty() {
                    return Err(row_err("features must not be empty".into()));
                }
                dim = Some(rec.features.len());
                data.extra_columns = rec.extra.keys().cloned().collect();
            }
            Some(d) if d != rec.features.len() => {
                return Err(Error::Format(format!(
                    "{}: line {lineno} has {} features, expected {d}; embedding dimensions must agree",
                    path.display(),
                    rec.features.len()
                )));
            }
            Some(_) => {}
        }
        let extra = data
            .extra_columns
            .iter()
            .map(|c| match rec.extra.get(c) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => String::new(),
            })
            .collect();
        data.samples.push(LabeledSample {
            sample_id: rec.id,
            speaker_id: rec.speaker_id.filter(|s| !s.is_empty()),
            age,
            embedding: rec.features,
        });
        data.extra.push(extra);
    }
    Ok(data)
}

fn write_json_lines<W: Write>(mut w: W, data: &Dataset) -> io::Result<()> {
    for (s, extra) in data.samples.iter().zip(&data.extra) {
        let rec = JsonRecord {
            id: s.sample_id.clone(),
            speaker_id: s.speaker_id.clone(),
            age: serde_json::Value::from(s.age),
            features: s.embedding.clone(),
            extra: data
                .extra_columns
                .iter()
                .cloned()
                .zip(extra.iter().map(|v| serde_json::Value::String(v.clone())))
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
