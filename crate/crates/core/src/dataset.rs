//! Tabular ingestion and histogram binning.
//!
//! A [`Dataset`] holds typed raw columns: numeric columns use `NaN` as the
//! missing marker, categorical columns hold dense codes assigned in order of
//! first appearance (`None` is missing). [`bin_features`] turns a dataset into
//! a [`BinnedDataset`], the only representation the trainer looks at.
//!
//! Every feature reserves one extra bin for missing values, placed after the
//! value bins. Numeric bins are built by a greedy equal-frequency pass over the
//! sorted distinct values; bin edges sit at the midpoint between the last value
//! of one bin and the first value of the next, and a raw value `v` lands in the
//! bin whose half-open interval `(edge[b-1], edge[b]]` contains it.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Declared type of a CSV column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical,
    Target,
    Ignore,
}

/// Column-type declarations, read from a JSON object `{name: type}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: BTreeMap<String, ColumnType>,
}

impl Schema {
    pub fn new(columns: impl IntoIterator<Item = (String, ColumnType)>) -> Self {
        Schema {
            columns: columns.into_iter().collect(),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let schema: Schema = serde_json::from_reader(std::io::BufReader::new(file))?;
        schema.target_name()?;
        Ok(schema)
    }

    /// Name of the single target column.
    pub fn target_name(&self) -> Result<&str> {
        let mut targets = self
            .columns
            .iter()
            .filter(|(_, t)| **t == ColumnType::Target)
            .map(|(n, _)| n.as_str());
        match (targets.next(), targets.next()) {
            (Some(name), None) => Ok(name),
            (None, _) => Err(Error::Schema("no column declared as target".into())),
            (Some(_), Some(_)) => Err(Error::Schema(
                "more than one column declared as target".into(),
            )),
        }
    }
}

/// Infers a schema from a CSV file: columns whose non-empty cells all parse as
/// finite numbers are numeric, everything else is categorical.
pub fn infer_schema(path: impl AsRef<Path>, target: &str) -> Result<Schema> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| csv_error(e, "<header>"))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, "<header>"))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut numeric = vec![true; headers.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, "<record>"))?;
        for (j, cell) in record.iter().enumerate().take(headers.len()) {
            let cell = cell.trim();
            if !cell.is_empty() && !cell.parse::<f64>().is_ok_and(f64::is_finite) {
                numeric[j] = false;
            }
        }
    }
    if !headers.iter().any(|h| h == target) {
        return Err(Error::Schema(format!(
            "target column '{target}' not in header"
        )));
    }
    Ok(Schema::new(headers.into_iter().zip(numeric).map(
        |(h, num)| {
            let t = if h == target {
                ColumnType::Target
            } else if num {
                ColumnType::Numeric
            } else {
                ColumnType::Categorical
            };
            (h, t)
        },
    )))
}

/// Raw values of one feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    /// `NaN` marks a missing entry.
    Numeric(Vec<f64>),
    /// Dense category codes; `levels[code]` is the original string.
    Categorical {
        codes: Vec<Option<u32>>,
        levels: Vec<String>,
    },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, ColumnData::Categorical { .. })
    }

    /// Value at `row` as the trainer's raw representation: the number itself,
    /// or the category code as `f64`. Missing entries are `NaN`.
    pub fn raw(&self, row: usize) -> f64 {
        match self {
            ColumnData::Numeric(v) => v[row],
            ColumnData::Categorical { codes, .. } => codes[row].map_or(f64::NAN, f64::from),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Categorical { codes, levels } => ColumnData::Categorical {
                codes: rows.iter().map(|&r| codes[r]).collect(),
                levels: levels.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub data: ColumnData,
}

/// A typed, column-oriented table with a numeric target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<FeatureColumn>,
    target_name: String,
    target: Vec<f64>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(
        columns: Vec<FeatureColumn>,
        target_name: impl Into<String>,
        target: Vec<f64>,
    ) -> Result<Self> {
        let n_rows = target.len();
        for col in &columns {
            if col.data.len() != n_rows {
                return Err(validation(format!(
                    "column '{}' has {} entries, expected {}",
                    col.name,
                    col.data.len(),
                    n_rows
                )));
            }
            if let ColumnData::Categorical { codes, levels } = &col.data {
                if codes.iter().flatten().any(|&c| c as usize >= levels.len()) {
                    return Err(validation(format!(
                        "column '{}' has a category code without a level",
                        col.name
                    )));
                }
            }
        }
        Ok(Dataset {
            columns,
            target_name: target_name.into(),
            target,
            n_rows,
        })
    }

    /// Convenience constructor for all-numeric tables.
    pub fn from_numeric(columns: Vec<(String, Vec<f64>)>, target: Vec<f64>) -> Result<Self> {
        let columns = columns
            .into_iter()
            .map(|(name, v)| FeatureColumn {
                name,
                data: ColumnData::Numeric(v),
            })
            .collect();
        Dataset::new(columns, "target", target)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Raw feature vector of one row, in column order.
    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c.data.raw(row)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows).map(|r| self.row(r)).collect()
    }

    /// Sub-table with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    name: c.name.clone(),
                    data: c.data.select(rows),
                })
                .collect(),
            target_name: self.target_name.clone(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            n_rows: rows.len(),
        }
    }

    /// Sub-table restricted to the given feature columns.
    pub fn select_features(&self, features: &[usize]) -> Dataset {
        Dataset {
            columns: features.iter().map(|&j| self.columns[j].clone()).collect(),
            target_name: self.target_name.clone(),
            target: self.target.clone(),
            n_rows: self.n_rows,
        }
    }

    /// Schema describing this table's columns.
    pub fn schema(&self) -> Schema {
        let mut schema = Schema::new(self.columns.iter().map(|c| {
            let t = if c.data.is_categorical() {
                ColumnType::Categorical
            } else {
                ColumnType::Numeric
            };
            (c.name.clone(), t)
        }));
        schema
            .columns
            .insert(self.target_name.clone(), ColumnType::Target);
        schema
    }

    /// Writes the table as CSV: features in column order, then the target.
    /// Missing entries become empty cells.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| csv_error(e, "<write>"))?;
        let mut header: Vec<&str> = self.feature_names();
        header.push(&self.target_name);
        w.write_record(&header)
            .map_err(|e| csv_error(e, "<write>"))?;
        for r in 0..self.n_rows {
            let mut record: Vec<String> = self
                .columns
                .iter()
                .map(|c| match &c.data {
                    ColumnData::Numeric(v) if v[r].is_nan() => String::new(),
                    ColumnData::Numeric(v) => v[r].to_string(),
                    ColumnData::Categorical { codes, levels } => {
                        codes[r].map_or(String::new(), |c| levels[c as usize].clone())
                    }
                })
                .collect();
            let t = self.target[r];
            record.push(if t.is_nan() {
                String::new()
            } else {
                t.to_string()
            });
            w.write_record(&record)
                .map_err(|e| csv_error(e, "<write>"))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn with_target(&self, target: Vec<f64>) -> Result<Dataset> {
        if target.len() != self.n_rows {
            return Err(validation("replacement target has the wrong length"));
        }
        Ok(Dataset {
            target,
            ..self.clone()
        })
    }
}

fn csv_error(e: csv::Error, column: &str) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        row,
        column: column.to_string(),
        message: e.to_string(),
    }
}

/// Loads a labelled CSV file. Every header column must be declared in the
/// schema and the target column must be present.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, true)
}

/// Loads a CSV file for scoring: the target column may be absent, in which
/// case the target vector is all `NaN`.
pub fn load_csv_unlabeled(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    read_csv(path.as_ref(), schema, false)
}

enum Builder {
    Numeric(Vec<f64>),
    Categorical {
        codes: Vec<Option<u32>>,
        lookup: HashMap<String, u32>,
        levels: Vec<String>,
    },
}

fn read_csv(path: &Path, schema: &Schema, require_target: bool) -> Result<Dataset> {
    let target_name = schema.target_name()?.to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse {
                row: 1,
                column: "<header>".into(),
                message: format!("{other:?}"),
            },
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(e, "<header>"))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let mut kinds = Vec::with_capacity(headers.len());
    for h in &headers {
        let kind =
            schema.columns.get(h).copied().ok_or_else(|| {
                Error::Schema(format!("column '{h}' is not declared in the schema"))
            })?;
        kinds.push(kind);
    }
    let target_col = headers.iter().position(|h| *h == target_name);
    if require_target && target_col.is_none() {
        return Err(Error::Schema(format!(
            "target column '{target_name}' missing from CSV header"
        )));
    }

    let mut builders: Vec<(usize, Builder)> = kinds
        .iter()
        .enumerate()
        .filter_map(|(j, kind)| match kind {
            ColumnType::Numeric => Some((j, Builder::Numeric(Vec::new()))),
            ColumnType::Categorical => Some((
                j,
                Builder::Categorical {
                    codes: Vec::new(),
                    lookup: HashMap::new(),
                    levels: Vec::new(),
                },
            )),
            _ => None,
        })
        .collect();
    let mut target = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, "<record>"))?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: "<record>".into(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, builder) in builders.iter_mut() {
            let cell = record[*j].trim();
            match builder {
                Builder::Numeric(values) => {
                    values.push(parse_number(cell, row, &headers[*j], true)?);
                }
                Builder::Categorical {
                    codes,
                    lookup,
                    levels,
                } => {
                    if cell.is_empty() {
                        codes.push(None);
                    } else {
                        let next = levels.len() as u32;
                        let code = *lookup.entry(cell.to_string()).or_insert_with(|| {
                            levels.push(cell.to_string());
                            next
                        });
                        codes.push(Some(code));
                    }
                }
            }
        }
        match target_col {
            Some(t) => target.push(parse_number(record[t].trim(), row, &target_name, false)?),
            None => target.push(f64::NAN),
        }
    }

    let columns = builders
        .into_iter()
        .map(|(j, b)| FeatureColumn {
            name: headers[j].clone(),
            data: match b {
                Builder::Numeric(v) => ColumnData::Numeric(v),
                Builder::Categorical { codes, levels, .. } => {
                    ColumnData::Categorical { codes, levels }
                }
            },
        })
        .collect();
    Dataset::new(columns, target_name, target)
}

fn parse_number(cell: &str, row: usize, column: &str, allow_missing: bool) -> Result<f64> {
    if cell.is_empty() {
        return if allow_missing {
            Ok(f64::NAN)
        } else {
            Err(Error::Parse {
                row,
                column: column.to_string(),
                message: "missing target value".into(),
            })
        };
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{cell}' is not a finite number"),
        }),
    }
}

/// Maps raw values of one feature to bin indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BinMapper {
    /// Strictly increasing thresholds; `edges.len() + 1` value bins.
    Numeric { edges: Vec<f64> },
    /// `codes[b]` is the category code held by bin `b`, `levels[b]` its name.
    Categorical {
        codes: Vec<u32>,
        levels: Vec<String>,
    },
}

impl BinMapper {
    /// Number of value bins, not counting the missing bin.
    pub fn num_value_bins(&self) -> usize {
        match self {
            BinMapper::Numeric { edges } => edges.len() + 1,
            BinMapper::Categorical { codes, .. } => codes.len(),
        }
    }

    /// Index of the reserved missing bin.
    pub fn missing_bin(&self) -> u32 {
        self.num_value_bins() as u32
    }

    /// Total bin count including the missing bin.
    pub fn num_bins(&self) -> usize {
        self.num_value_bins() + 1
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, BinMapper::Categorical { .. })
    }

    /// Bin of a raw value. `NaN`, and categories not seen while binning, go
    /// to the missing bin.
    pub fn bin_of(&self, value: f64) -> u32 {
        if value.is_nan() {
            return self.missing_bin();
        }
        match self {
            BinMapper::Numeric { edges } => edges.partition_point(|&e| e < value) as u32,
            BinMapper::Categorical { codes, .. } => {
                if value < 0.0 || value.fract() != 0.0 {
                    return self.missing_bin();
                }
                match codes.binary_search(&(value as u32)) {
                    Ok(b) => b as u32,
                    Err(_) => self.missing_bin(),
                }
            }
        }
    }

    /// Bin of a categorical level given by name.
    pub fn bin_of_level(&self, level: &str) -> u32 {
        match self {
            BinMapper::Categorical { levels, .. } => levels
                .iter()
                .position(|l| l == level)
                .map_or(self.missing_bin(), |b| b as u32),
            BinMapper::Numeric { .. } => self.missing_bin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedFeature {
    pub name: String,
    pub mapper: BinMapper,
    /// One bin index per row.
    pub bins: Vec<u32>,
}

/// Histogram-binned encoding of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDataset {
    pub features: Vec<BinnedFeature>,
    pub target: Vec<f64>,
    pub max_bin: usize,
    pub min_data_in_bin: usize,
}

impl BinnedDataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn mappers(&self) -> Vec<BinMapper> {
        self.features.iter().map(|f| f.mapper.clone()).collect()
    }
}

/// Bins every feature of `ds`. `max_bin` bounds the number of numeric value
/// bins; categorical features get one bin per category present.
pub fn bin_features(ds: &Dataset, max_bin: usize, min_data_in_bin: usize) -> BinnedDataset {
    let max_bin = max_bin.max(2);
    let min_data_in_bin = min_data_in_bin.max(1);
    let features = ds
        .columns()
        .par_iter()
        .map(|col| {
            let mapper = match &col.data {
                ColumnData::Numeric(values) => BinMapper::Numeric {
                    edges: numeric_edges(values, max_bin, min_data_in_bin),
                },
                ColumnData::Categorical { codes, levels } => {
                    let mut present: Vec<u32> = codes.iter().flatten().copied().collect();
                    present.sort_unstable();
                    present.dedup();
                    let names = present
                        .iter()
                        .map(|&c| levels[c as usize].clone())
                        .collect();
                    BinMapper::Categorical {
                        codes: present,
                        levels: names,
                    }
                }
            };
            let bins = (0..col.data.len())
                .map(|r| mapper.bin_of(col.data.raw(r)))
                .collect();
            BinnedFeature {
                name: col.name.clone(),
                mapper,
                bins,
            }
        })
        .collect();
    BinnedDataset {
        features,
        target: ds.target().to_vec(),
        max_bin,
        min_data_in_bin,
    }
}

/// Greedy equal-frequency partition over distinct values. Each bin closes
/// once it holds at least `max(min_data_in_bin, ceil(n / max_bin))` rows; a
/// trailing remainder smaller than `min_data_in_bin` is merged into the
/// previous bin.
fn numeric_edges(values: &[f64], max_bin: usize, min_data_in_bin: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    sorted.sort_by(f64::total_cmp);
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    for v in sorted.iter().copied() {
        match distinct.last_mut() {
            Some((last, count)) if *last == v => *count += 1,
            _ => distinct.push((v, 1)),
        }
    }

    let n = sorted.len();
    let per_bin = min_data_in_bin.max(n.div_ceil(max_bin));
    // Index (into `distinct`) of the last group of each closed bin.
    let mut closes = Vec::new();
    let mut acc = 0;
    for (g, &(_, count)) in distinct.iter().enumerate() {
        acc += count;
        if acc >= per_bin {
            closes.push(g);
            acc = 0;
        }
    }
    if acc > 0 && acc < min_data_in_bin && !closes.is_empty() {
        closes.pop();
    }
    closes
        .into_iter()
        .filter(|&g| g + 1 < distinct.len())
        .map(|g| midpoint(distinct[g].0, distinct[g + 1].0))
        .collect()
}

/// Point `e` with `lo <= e < hi`, halfway when representable.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}
