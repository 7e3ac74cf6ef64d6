//! Dataset ingestion: CSV loading against a column schema and one-hot
//! expansion of categorical columns.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-major matrix of real-valued features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    cols: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = cols.first().map_or(0, Vec::len);
        if let Some(j) = cols.iter().position(|c| c.len() != n_rows) {
            return Err(Error::invalid(format!("column {j} has a different length")));
        }
        Ok(FeatureMatrix { cols, n_rows })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let mut cols = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::invalid(format!("row {i} has {} values, expected {p}", row.len())));
            }
            for (c, &v) in cols.iter_mut().zip(row) {
                c.push(v);
            }
        }
        Ok(FeatureMatrix {
            cols,
            n_rows: rows.len(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Ordinal,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

/// Feature columns plus the target column name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub target: String,
    pub columns: Vec<ColumnSpec>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        if self.target.is_empty() {
            return Err(Error::Data("schema has no target column".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for col in &self.columns {
            if col.name == self.target {
                return Err(Error::Data(format!("target '{}' is also listed as a feature", col.name)));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Data(format!("column '{}' listed twice", col.name)));
            }
            if let ColumnKind::Categorical { levels } = &col.kind {
                if levels.is_empty() {
                    return Err(Error::Data(format!("categorical column '{}' has no levels", col.name)));
                }
                let mut lv = std::collections::HashSet::new();
                if let Some(dup) = levels.iter().find(|l| !lv.insert(l.as_str())) {
                    return Err(Error::Data(format!(
                        "categorical column '{}' repeats level '{dup}'",
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let schema: DatasetSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    /// Every header column other than `target` becomes an ordinal feature.
    pub fn infer_ordinal(path: &Path, target: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if !headers.iter().any(|h| h == target) {
            return Err(Error::MissingColumn(target.to_string()));
        }
        let schema = DatasetSchema {
            target: target.to_string(),
            columns: headers
                .iter()
                .filter(|h| *h != target)
                .map(|h| ColumnSpec {
                    name: h.to_string(),
                    kind: ColumnKind::Ordinal,
                })
                .collect(),
        };
        schema.validate()?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Ordinal(Vec<f64>),
    /// Level index per row.
    Categorical(Vec<usize>),
}

/// Parsed CSV contents, columns in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub columns: Vec<RawColumn>,
    pub target: Option<Vec<f64>>,
    pub n_rows: usize,
}

/// Model-ready data: real features (dummies expanded) and the response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: FeatureMatrix,
    pub names: Vec<String>,
    pub is_dummy: Vec<bool>,
    /// Empty when the source had no target column.
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: FeatureMatrix, names: Vec<String>, is_dummy: Vec<bool>, y: Vec<f64>) -> Result<Self> {
        if names.len() != x.n_cols() || is_dummy.len() != x.n_cols() {
            return Err(Error::invalid("names/dummy flags must match the column count"));
        }
        if !y.is_empty() && y.len() != x.n_rows() {
            return Err(Error::invalid(format!(
                "{} responses for {} rows",
                y.len(),
                x.n_rows()
            )));
        }
        Ok(Dataset {
            x,
            names,
            is_dummy,
            y,
        })
    }

    /// All-ordinal dataset with generated names `x1..xp`.
    pub fn from_ordinal(x: FeatureMatrix, y: Vec<f64>) -> Result<Self> {
        let p = x.n_cols();
        Self::new(x, (1..=p).map(|j| format!("x{j}")).collect(), vec![false; p], y)
    }

    pub fn n_rows(&self) -> usize {
        self.x.n_rows()
    }
}

/// Expanded feature layout produced by [`expand_dummies`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedSchema {
    pub names: Vec<String>,
    pub is_dummy: Vec<bool>,
    /// Source column index for each expanded column.
    pub source: Vec<usize>,
}

/// Reads a CSV whose header names every schema column. Extra columns are
/// ignored with a warning. The target column is optional when
/// `require_target` is false.
pub fn load_csv(path: &Path, schema: &DatasetSchema, require_target: bool) -> Result<RawDataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = index
            .get(col.name.as_str())
            .ok_or_else(|| Error::MissingColumn(col.name.clone()))?;
        positions.push(*pos);
    }
    let target_pos = index.get(schema.target.as_str()).copied();
    if require_target && target_pos.is_none() {
        return Err(Error::MissingColumn(schema.target.clone()));
    }
    for h in headers.iter() {
        let known = h == schema.target || schema.columns.iter().any(|c| c.name == h);
        if !known {
            warn!("{}: ignoring unknown column '{h}'", path.display());
        }
    }

    let level_maps: Vec<Option<HashMap<&str, usize>>> = schema
        .columns
        .iter()
        .map(|c| match &c.kind {
            ColumnKind::Categorical { levels } => {
                Some(levels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
            }
            ColumnKind::Ordinal => None,
        })
        .collect();

    let mut columns: Vec<RawColumn> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Ordinal => RawColumn::Ordinal(Vec::new()),
            ColumnKind::Categorical { .. } => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut target = target_pos.map(|_| Vec::new());

    let parse = |cell: &str, row: usize, column: &str| -> Result<f64> {
        let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: column.to_string(),
                value: cell.to_string(),
            });
        }
        Ok(v)
    };

    let mut n_rows = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = k + 2;
        for (((col, pos), levels), out) in schema
            .columns
            .iter()
            .zip(&positions)
            .zip(&level_maps)
            .zip(columns.iter_mut())
        {
            let cell = record.get(*pos).unwrap_or("");
            match (out, levels) {
                (RawColumn::Ordinal(v), _) => v.push(parse(cell, line, &col.name)?),
                (RawColumn::Categorical(v), Some(map)) => {
                    let level = map.get(cell.trim()).ok_or_else(|| Error::UnknownLevel {
                        path: path.to_path_buf(),
                        row: line,
                        column: col.name.clone(),
                        value: cell.to_string(),
                    })?;
                    v.push(*level);
                }
                (RawColumn::Categorical(_), None) => unreachable!(),
            }
        }
        if let (Some(t), Some(pos)) = (target.as_mut(), target_pos) {
            t.push(parse(record.get(pos).unwrap_or(""), line, &schema.target)?);
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::Data(format!("{} has no data rows", path.display())));
    }
    Ok(RawDataset {
        columns,
        target,
        n_rows,
    })
}

/// One-hot expands every categorical column (one dummy per level); ordinal
/// columns pass through.
pub fn expand_dummies(raw: &RawDataset, schema: &DatasetSchema) -> Result<(Dataset, ExpandedSchema)> {
    if raw.columns.len() != schema.columns.len() {
        return Err(Error::SchemaMismatch(format!(
            "dataset has {} columns, schema has {}",
            raw.columns.len(),
            schema.columns.len()
        )));
    }
    let mut cols = Vec::new();
    let mut layout = ExpandedSchema {
        names: Vec::new(),
        is_dummy: Vec::new(),
        source: Vec::new(),
    };
    for (k, (col, spec)) in raw.columns.iter().zip(&schema.columns).enumerate() {
        match (col, &spec.kind) {
            (RawColumn::Ordinal(v), ColumnKind::Ordinal) => {
                cols.push(v.clone());
                layout.names.push(spec.name.clone());
                layout.is_dummy.push(false);
                layout.source.push(k);
            }
            (RawColumn::Categorical(v), ColumnKind::Categorical { levels }) => {
                for (li, level) in levels.iter().enumerate() {
                    cols.push(v.iter().map(|&a| if a == li { 1.0 } else { 0.0 }).collect());
                    layout.names.push(format!("{}={}", spec.name, level));
                    layout.is_dummy.push(true);
                    layout.source.push(k);
                }
            }
            _ => {
                return Err(Error::SchemaMismatch(format!(
                    "column '{}' kind does not match the schema",
                    spec.name
                )))
            }
        }
    }
    let x = if cols.is_empty() {
        FeatureMatrix {
            cols,
            n_rows: raw.n_rows,
        }
    } else {
        FeatureMatrix::from_columns(cols)?
    };
    let dataset = Dataset::new(
        x,
        layout.names.clone(),
        layout.is_dummy.clone(),
        raw.target.clone().unwrap_or_default(),
    )?;
    Ok((dataset, layout))
}

/// Loads and expands in one step.
pub fn load_dataset(path: &Path, schema: &DatasetSchema, require_target: bool) -> Result<Dataset> {
    let raw = load_csv(path, schema, require_target)?;
    expand_dummies(&raw, schema).map(|(d, _)| d)
}
