//! Dataset ingestion.
//!
//! A [`DatasetConfig`] names the CSV file, the four source columns with their
//! unit transforms, and the target. Loading applies the transforms row by row
//! and drops rows whose selected cells carry a missing marker.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of attributes every dataset config must declare.
pub const FEATURES_PER_DATASET: usize = 4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("column `{0}` not present in CSV header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: classification target must be 0 or 1, got {value}")]
    InvalidLabel { row: usize, value: f64 },
    #[error("all {read} rows were dropped during ingestion")]
    AllRowsDropped { read: usize },
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} rows, have {have}")]
    TooFewRows { needed: usize, have: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Unit transform applied to a source column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// Multiply by a positive constant (e.g. 0.001 for sqft -> ksqft).
    Scale { factor: f64 },
    /// `year(reference) - source`, clamped at zero. The year is read from the
    /// leading four digits of the reference cell (`20141013T000000`, `2014-10-13`).
    DeriveAge { reference_column: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub source_column: String,
    #[serde(default = "identity")]
    pub transform: Transform,
}

fn identity() -> Transform {
    Transform::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub column: String,
    pub unit: String,
    #[serde(default = "identity")]
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    /// CSV path; relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub task: Task,
    pub target: TargetSpec,
    pub features: Vec<FeatureSpec>,
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
}

fn default_missing_markers() -> Vec<String> {
    vec!["?".to_string(), String::new(), "NA".to_string()]
}

impl DatasetConfig {
    /// Read a JSON config and resolve its CSV path relative to the file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                DataError::MissingFile(path.to_path_buf())
            } else {
                DataError::Io {
                    path: path.to_path_buf(),
                    source: e,
                }
            }
        })?;
        let mut config: DatasetConfig = serde_json::from_str(&text)
            .map_err(|e| DataError::InvalidConfig(format!("{}: {e}", path.display())))?;
        if config.path.is_relative() {
            if let Some(dir) = path.parent() {
                config.path = dir.join(&config.path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != FEATURES_PER_DATASET {
            return Err(DataError::InvalidConfig(format!(
                "expected {FEATURES_PER_DATASET} features, got {}",
                self.features.len()
            )));
        }
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::InvalidConfig(format!(
                    "duplicate feature name `{}`",
                    f.name
                )));
            }
            check_transform(&f.transform)?;
        }
        check_transform(&self.target.transform)
    }
}

fn check_transform(t: &Transform) -> Result<()> {
    match t {
        Transform::Scale { factor } if !(factor.is_finite() && *factor > 0.0) => Err(
            DataError::InvalidConfig(format!("scale factor must be positive, got {factor}")),
        ),
        _ => Ok(()),
    }
}

/// Feature matrix in declared units plus target.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<FeatureSpec>,
    pub target_unit: String,
    pub task: Task,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Data rows read from the file (excluding the header).
    pub rows_read: usize,
    /// Rows dropped for missing markers.
    pub rows_dropped: usize,
}

impl Dataset {
    /// Build an in-memory dataset with generated feature names `x1..xp`.
    pub fn from_arrays(name: &str, x: Array2<f64>, y: Array1<f64>, task: Task) -> Self {
        assert_eq!(x.nrows(), y.len(), "row count mismatch");
        let features = (0..x.ncols())
            .map(|j| FeatureSpec {
                name: format!("x{}", j + 1),
                unit: String::new(),
                source_column: format!("x{}", j + 1),
                transform: Transform::Identity,
            })
            .collect();
        let n = x.nrows();
        Dataset {
            name: name.to_string(),
            features,
            target_unit: String::new(),
            task,
            x,
            y,
            rows_read: n,
            rows_dropped: 0,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn select_x(&self, rows: &[usize]) -> Array2<f64> {
        self.x.select(Axis(0), rows)
    }

    pub fn select_y(&self, rows: &[usize]) -> Array1<f64> {
        self.y.select(Axis(0), rows)
    }
}

/// Load a dataset from its config.
pub fn load_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let path = &config.path;
    if !path.exists() {
        return Err(DataError::MissingFile(path.clone()));
    }
    let file = File::open(path).map_err(|e| DataError::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let csv_err = |e: csv::Error| DataError::Csv {
        path: path.clone(),
        message: e.to_string(),
    };
    let header = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };

    let feature_cols = config
        .features
        .iter()
        .map(|f| {
            let src = column(&f.source_column)?;
            let reference = match &f.transform {
                Transform::DeriveAge { reference_column } => Some(column(reference_column)?),
                _ => None,
            };
            Ok((src, reference))
        })
        .collect::<Result<Vec<_>>>()?;
    let target_col = column(&config.target.column)?;

    let p = config.features.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut read = 0usize;
    let mut dropped = 0usize;

    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // 1-based data row number, header excluded
        let row = i + 1;
        read += 1;
        let mut values = Vec::with_capacity(p);
        let mut missing = false;
        for (spec, &(src, reference)) in config.features.iter().zip(&feature_cols) {
            let cell = record.get(src).unwrap_or("").trim();
            if is_missing(cell, &config.missing_markers) {
                missing = true;
                break;
            }
            let raw = parse_cell(cell, row, &spec.source_column)?;
            let value = match &spec.transform {
                Transform::Identity => raw,
                Transform::Scale { factor } => raw * factor,
                Transform::DeriveAge { reference_column } => {
                    let rcell = record.get(reference.unwrap_or(src)).unwrap_or("").trim();
                    if is_missing(rcell, &config.missing_markers) {
                        missing = true;
                        break;
                    }
                    let year = leading_year(rcell).ok_or_else(|| DataError::Parse {
                        row,
                        column: reference_column.clone(),
                        value: rcell.to_string(),
                    })?;
                    (year - raw).max(0.0)
                }
            };
            values.push(value);
        }
        if missing {
            dropped += 1;
            continue;
        }
        let tcell = record.get(target_col).unwrap_or("").trim();
        if is_missing(tcell, &config.missing_markers) {
            dropped += 1;
            continue;
        }
        let raw_target = parse_cell(tcell, row, &config.target.column)?;
        let target = match &config.target.transform {
            Transform::Scale { factor } => raw_target * factor,
            _ => raw_target,
        };
        if config.task == Task::Classification && target != 0.0 && target != 1.0 {
            return Err(DataError::InvalidLabel { row, value: target });
        }
        xs.extend(values);
        ys.push(target);
    }

    if ys.is_empty() {
        return Err(DataError::AllRowsDropped { read });
    }
    let n = ys.len();
    let x = Array2::from_shape_vec((n, p), xs).expect("row-major buffer matches shape");
    Ok(Dataset {
        name: config.name.clone(),
        features: config.features.clone(),
        target_unit: config.target.unit.clone(),
        task: config.task,
        x,
        y: Array1::from(ys),
        rows_read: read,
        rows_dropped: dropped,
    })
}

fn is_missing(cell: &str, markers: &[String]) -> bool {
    markers.iter().any(|m| m == cell)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(DataError::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

fn leading_year(cell: &str) -> Option<f64> {
    let digits: String = cell.chars().take(4).collect();
    if digits.len() == 4 && digits.chars().all(|c| c.is_ascii_digit()) {
        digits.parse::<f64>().ok()
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn house_config(path: PathBuf) -> DatasetConfig {
        DatasetConfig {
            name: "house".into(),
            path,
            task: Task::Regression,
            target: TargetSpec {
                column: "price".into(),
                unit: "$k".into(),
                transform: Transform::Scale { factor: 0.001 },
            },
            features: vec![
                FeatureSpec {
                    name: "# Bathrooms".into(),
                    unit: "count".into(),
                    source_column: "bathrooms".into(),
                    transform: Transform::Identity,
                },
                FeatureSpec {
                    name: "Living Area".into(),
                    unit: "ksqft".into(),
                    source_column: "sqft_living".into(),
                    transform: Transform::Scale { factor: 0.001 },
                },
                FeatureSpec {
                    name: "Grade".into(),
                    unit: "grade".into(),
                    source_column: "grade".into(),
                    transform: Transform::Identity,
                },
                FeatureSpec {
                    name: "Age".into(),
                    unit: "years".into(),
                    source_column: "yr_built".into(),
                    transform: Transform::DeriveAge {
                        reference_column: "date".into(),
                    },
                },
            ],
            missing_markers: default_missing_markers(),
        }
    }

    const HOUSE: &str = "id,date,price,bathrooms,sqft_living,grade,yr_built\n\
        1,20141013T000000,221900,1,1180,7,1955\n\
        2,20141209T000000,538000,1.75,1750,7,1951\n\
        3,20150225T000000,180000,1,770,6,2015\n\
        4,20150225T000000,604000,?,1960,7,1965\n";

    #[test]
    fn house_units_and_derived_age() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(&house_config(write_csv(&dir, "h.csv", HOUSE))).unwrap();
        assert_eq!(ds.rows_read, 4);
        assert_eq!(ds.rows_dropped, 1);
        assert_eq!(ds.n_rows(), 3);
        // sqft_living 1750 -> 1.75 ksqft
        assert_eq!(ds.x[[1, 1]], 1.75);
        assert_eq!(ds.x[[1, 0]], 1.75);
        assert_eq!(ds.y[0], 221.9);
        assert_eq!(ds.x[[0, 3]], 59.0);
        assert_eq!(ds.x[[2, 3]], 0.0);
        assert!(ds.x.column(3).iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn identity_on_constant_zero_column() {
        let dir = tempfile::tempdir().unwrap();
        let body = "a,b,c,d,t\n0,1,2,3,5\n0,4,5,6,7\n";
        let path = write_csv(&dir, "z.csv", body);
        let mut config = house_config(path);
        config.target = TargetSpec {
            column: "t".into(),
            unit: String::new(),
            transform: Transform::Identity,
        };
        for (f, col) in config.features.iter_mut().zip(["a", "b", "c", "d"]) {
            f.source_column = col.into();
            f.transform = Transform::Identity;
        }
        let ds = load_dataset(&config).unwrap();
        assert!(ds.x.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn missing_file_is_reported() {
        let config = house_config(PathBuf::from("/nonexistent/kc.csv"));
        assert!(matches!(load_dataset(&config), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn unparseable_cell_reports_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,date,price,bathrooms,sqft_living,grade,yr_built\n\
            1,20141013T000000,221900,1,1180,7,1955\n\
            2,20141013T000000,221900,1,abc,7,1955\n";
        let err = load_dataset(&house_config(write_csv(&dir, "p.csv", body))).unwrap_err();
        match err {
            DataError::Parse { row, column, value } => {
                assert_eq!(row, 2);
                assert_eq!(column, "sqft_living");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_rows_dropped_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,date,price,bathrooms,sqft_living,grade,yr_built\n\
            1,20141013T000000,221900,?,1180,7,1955\n";
        let err = load_dataset(&house_config(write_csv(&dir, "d.csv", body))).unwrap_err();
        assert!(matches!(err, DataError::AllRowsDropped { read: 1 }));
    }

    #[test]
    fn missing_column_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let body = "id,date,price,bathrooms,grade,yr_built\n1,20141013T000000,1,1,7,1955\n";
        let err = load_dataset(&house_config(write_csv(&dir, "m.csv", body))).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "sqft_living"));
    }

    #[test]
    fn config_validation() {
        let mut c = house_config(PathBuf::from("x.csv"));
        c.features.pop();
        assert!(c.validate().is_err());
        let mut c = house_config(PathBuf::from("x.csv"));
        c.features[1].name = "Grade".into();
        assert!(c.validate().is_err());
        let mut c = house_config(PathBuf::from("x.csv"));
        c.features[1].transform = Transform::Scale { factor: 0.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let c = house_config(PathBuf::from("kc_house_data.csv"));
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back: DatasetConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn classification_labels_checked() {
        let dir = tempfile::tempdir().unwrap();
        let body = "a,b,c,d,t\n1,2,3,4,2\n";
        let mut config = house_config(write_csv(&dir, "c.csv", body));
        config.task = Task::Classification;
        config.target = TargetSpec {
            column: "t".into(),
            unit: String::new(),
            transform: Transform::Identity,
        };
        for (f, col) in config.features.iter_mut().zip(["a", "b", "c", "d"]) {
            f.source_column = col.into();
            f.transform = Transform::Identity;
        }
        assert!(matches!(
            load_dataset(&config),
            Err(DataError::InvalidLabel { row: 1, .. })
        ));
    }
}
