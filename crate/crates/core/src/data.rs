//! Data model and ingestion.
//!
//! A [`Dataset`] holds the covariate matrix together with the binary
//! instrument and exposure vectors. It is immutable once built; every
//! constructor checks the full set of invariants and reports all
//! violations at once rather than stopping at the first.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

/// Which binary vector of a dataset a test is aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Instrument,
    Exposure,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Instrument => "instrument",
            Target::Exposure => "exposure",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

/// A single invariant violation found while ingesting data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingColumn { column: String },
    DuplicateName { name: String },
    NoCovariates,
    NoRows,
    RaggedRow { row: usize, expected: usize, found: usize },
    NonBinary { column: String, row: usize, value: String },
    MissingValue { column: String, row: usize },
    NonFinite { column: String, row: usize, value: String },
    Constant { role: &'static str, column: String },
    LengthMismatch { what: &'static str, expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingColumn { column } => write!(f, "missing column '{column}'"),
            Violation::DuplicateName { name } => write!(f, "duplicate covariate name '{name}'"),
            Violation::NoCovariates => f.write_str("no covariate columns selected"),
            Violation::NoRows => f.write_str("no data rows"),
            Violation::RaggedRow { row, expected, found } => {
                write!(f, "row {row}: expected {expected} fields, found {found}")
            }
            Violation::NonBinary { column, row, value } => {
                write!(f, "non-binary value '{value}' in column '{column}' at row {row}")
            }
            Violation::MissingValue { column, row } => {
                write!(f, "missing value in column '{column}' at row {row}")
            }
            Violation::NonFinite { column, row, value } => {
                write!(f, "non-finite value '{value}' in column '{column}' at row {row}")
            }
            Violation::Constant { role, column } => {
                write!(f, "constant {role}: column '{column}' needs both 0 and 1 values")
            }
            Violation::LengthMismatch { what, expected, found } => {
                write!(f, "{what} has length {found}, expected {expected}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read input: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed delimited input: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid dataset: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl DataError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            DataError::Invalid(v) => v,
            _ => &[],
        }
    }
}

/// A binary assignment over `N` units.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AssignmentVector {
    values: Vec<bool>,
    n_treated: usize,
}

impl AssignmentVector {
    pub fn new(values: Vec<bool>) -> Self {
        let n_treated = values.iter().filter(|&&v| v).count();
        Self { values, n_treated }
    }

    /// Builds from 0/1 integers; any other value is rejected.
    pub fn from_binary(values: &[u8]) -> Option<Self> {
        values
            .iter()
            .map(|&v| match v {
                0 => Some(false),
                1 => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(Self::new)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.values.len() - self.n_treated
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.values[i]
    }

    /// Swaps treated and control labels.
    pub fn complement(&self) -> Self {
        Self::new(self.values.iter().map(|v| !v).collect())
    }

    /// Both groups have at least one unit.
    pub fn is_nondegenerate(&self) -> bool {
        self.n_treated > 0 && self.n_treated < self.values.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect()
    }
}

/// Covariates plus binary instrument and exposure for `N` units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    covariate_names: Vec<String>,
    instrument_name: String,
    exposure_name: String,
    instrument: AssignmentVector,
    exposure: AssignmentVector,
}

impl Dataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        instrument: AssignmentVector,
        exposure: AssignmentVector,
    ) -> Result<Self, DataError> {
        Self::with_names(covariates, covariate_names, "instrument", "exposure", instrument, exposure)
    }

    pub fn with_names(
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
        instrument_name: &str,
        exposure_name: &str,
        instrument: AssignmentVector,
        exposure: AssignmentVector,
    ) -> Result<Self, DataError> {
        let mut violations = Vec::new();
        let n = covariates.nrows();
        if n == 0 {
            violations.push(Violation::NoRows);
        }
        if covariates.ncols() == 0 {
            violations.push(Violation::NoCovariates);
        }
        if covariate_names.len() != covariates.ncols() {
            violations.push(Violation::LengthMismatch {
                what: "covariate_names",
                expected: covariates.ncols(),
                found: covariate_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                violations.push(Violation::DuplicateName { name: name.clone() });
            }
        }
        for (role, column, v) in [("instrument", instrument_name, &instrument), ("exposure", exposure_name, &exposure)]
        {
            if v.len() != n {
                violations.push(Violation::LengthMismatch { what: role, expected: n, found: v.len() });
            } else if n > 0 && !v.is_nondegenerate() {
                violations.push(Violation::Constant { role, column: column.to_string() });
            }
        }
        for j in 0..covariates.ncols() {
            let name = covariate_names.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
            for (i, x) in covariates.column(j).iter().enumerate() {
                if !x.is_finite() {
                    violations.push(Violation::NonFinite { column: name.clone(), row: i + 1, value: x.to_string() });
                }
            }
        }
        if !violations.is_empty() {
            return Err(DataError::Invalid(violations));
        }
        Ok(Self {
            covariates,
            covariate_names,
            instrument_name: instrument_name.to_string(),
            exposure_name: exposure_name.to_string(),
            instrument,
            exposure,
        })
    }

    /// Convenience constructor from row-major covariate rows.
    pub fn from_rows(
        rows: &[Vec<f64>],
        covariate_names: Vec<String>,
        instrument: &[u8],
        exposure: &[u8],
    ) -> Result<Self, DataError> {
        let k = covariate_names.len();
        let mut violations = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                violations.push(Violation::RaggedRow { row: i + 1, expected: k, found: r.len() });
            }
        }
        let to_assignment = |v: &[u8], column: &str, violations: &mut Vec<Violation>| {
            for (i, &x) in v.iter().enumerate() {
                if x > 1 {
                    violations.push(Violation::NonBinary {
                        column: column.to_string(),
                        row: i + 1,
                        value: x.to_string(),
                    });
                }
            }
            AssignmentVector::new(v.iter().map(|&x| x == 1).collect())
        };
        let z = to_assignment(instrument, "instrument", &mut violations);
        let d = to_assignment(exposure, "exposure", &mut violations);
        if !violations.is_empty() {
            return Err(DataError::Invalid(violations));
        }
        let m = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
        Self::new(m, covariate_names, z, d)
    }

    pub fn n_units(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    /// Column `j` of the covariate matrix as a contiguous slice.
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n_units();
        &self.covariates.as_slice()[j * n..(j + 1) * n]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn instrument_name(&self) -> &str {
        &self.instrument_name
    }

    pub fn exposure_name(&self) -> &str {
        &self.exposure_name
    }

    pub fn instrument(&self) -> &AssignmentVector {
        &self.instrument
    }

    pub fn exposure(&self) -> &AssignmentVector {
        &self.exposure
    }

    pub fn target(&self, target: Target) -> &AssignmentVector {
        match target {
            Target::Instrument => &self.instrument,
            Target::Exposure => &self.exposure,
        }
    }

    pub fn covariate_means(&self) -> Vec<f64> {
        let n = self.n_units() as f64;
        (0..self.n_covariates()).map(|j| self.column(j).iter().sum::<f64>() / n).collect()
    }

    /// Writes the dataset in the ingestion format: instrument, exposure,
    /// then covariates, with shortest round-trip float formatting.
    pub fn write_delimited<W: Write>(&self, writer: W, delimiter: u8) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
        let mut header = vec![self.instrument_name.clone(), self.exposure_name.clone()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_units() {
            record.clear();
            record.push(if self.instrument.is_treated(i) { "1" } else { "0" }.to_string());
            record.push(if self.exposure.is_treated(i) { "1" } else { "0" }.to_string());
            for j in 0..self.n_covariates() {
                record.push(format!("{:?}", self.covariates[(i, j)]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Delimited text with a header row, kept as raw strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(reader: R, delimiter: u8) -> Result<Self, DataError> {
        let mut r = csv::ReaderBuilder::new().delimiter(delimiter).has_headers(true).flexible(true).from_reader(reader);
        let headers = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: impl AsRef<Path>, delimiter: u8) -> Result<Self, DataError> {
        let f = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(f), delimiter)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Every header except the named ones, in file order.
    pub fn remaining_columns(&self, exclude: &[&str]) -> Vec<String> {
        self.headers.iter().filter(|h| !exclude.contains(&h.as_str())).cloned().collect()
    }
}

/// Ingestion settings.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Covariates to expand into one 0/1 indicator per non-reference level.
    /// The reference level is the smallest level (numeric order when every
    /// level parses as a number, lexicographic otherwise).
    pub indicator_columns: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { delimiter: b',', indicator_columns: Vec::new() }
    }
}

fn parse_binary(s: &str) -> Option<bool> {
    match s.trim() {
        "0" | "false" => Some(false),
        "1" | "true" => Some(true),
        _ => None,
    }
}

fn sorted_levels(values: impl Iterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = values.collect();
    let mut levels: Vec<String> = set.into_iter().collect();
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(levels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        levels = pairs.into_iter().map(|p| p.1).collect();
    }
    levels
}

/// Turns a raw table into a validated [`Dataset`].
///
/// Every violation in the input is collected before returning, so one
/// call reports all problems with the file.
pub fn validate_dataset(
    raw: &RawTable,
    instrument_col: &str,
    exposure_col: &str,
    covariate_cols: &[String],
    options: &IngestOptions,
) -> Result<Dataset, DataError> {
    let mut violations = Vec::new();
    let locate = |name: &str, violations: &mut Vec<Violation>| {
        let idx = raw.column_index(name);
        if idx.is_none() {
            violations.push(Violation::MissingColumn { column: name.to_string() });
        }
        idx
    };
    let z_idx = locate(instrument_col, &mut violations);
    let d_idx = locate(exposure_col, &mut violations);
    let cov_idx: Vec<Option<usize>> = covariate_cols.iter().map(|c| locate(c, &mut violations)).collect();
    for c in &options.indicator_columns {
        if !covariate_cols.contains(c) {
            violations.push(Violation::MissingColumn { column: c.clone() });
        }
    }
    if covariate_cols.is_empty() {
        violations.push(Violation::NoCovariates);
    }
    if raw.rows.is_empty() {
        violations.push(Violation::NoRows);
    }
    let width = raw.headers.len();
    for (i, r) in raw.rows.iter().enumerate() {
        if r.len() != width {
            violations.push(Violation::RaggedRow { row: i + 1, expected: width, found: r.len() });
        }
    }
    if !violations.is_empty() {
        return Err(DataError::Invalid(violations));
    }
    fn field(row: &[String], idx: usize) -> &str {
        row[idx].as_str()
    }

    let binary = |idx: usize, column: &str, violations: &mut Vec<Violation>| {
        let mut out = Vec::with_capacity(raw.rows.len());
        for (i, row) in raw.rows.iter().enumerate() {
            let v = field(row, idx);
            match parse_binary(v) {
                Some(b) => out.push(b),
                None => {
                    violations.push(Violation::NonBinary {
                        column: column.to_string(),
                        row: i + 1,
                        value: v.to_string(),
                    });
                    out.push(false);
                }
            }
        }
        AssignmentVector::new(out)
    };
    let z = binary(z_idx.unwrap(), instrument_col, &mut violations);
    let d = binary(d_idx.unwrap(), exposure_col, &mut violations);

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (c, idx) in covariate_cols.iter().zip(cov_idx) {
        let idx = idx.unwrap();
        if options.indicator_columns.contains(c) {
            let mut missing = false;
            for (i, row) in raw.rows.iter().enumerate() {
                if field(row, idx).trim().is_empty() {
                    violations.push(Violation::MissingValue { column: c.clone(), row: i + 1 });
                    missing = true;
                }
            }
            if missing {
                continue;
            }
            let levels = sorted_levels(raw.rows.iter().map(|r| field(r, idx).trim().to_string()));
            for level in levels.iter().skip(1) {
                names.push(format!("{c}={level}"));
                columns.push(raw.rows.iter().map(|r| if field(r, idx).trim() == level { 1.0 } else { 0.0 }).collect());
            }
        } else {
            let mut col = Vec::with_capacity(raw.rows.len());
            for (i, row) in raw.rows.iter().enumerate() {
                let v = field(row, idx).trim();
                if v.is_empty() {
                    violations.push(Violation::MissingValue { column: c.clone(), row: i + 1 });
                    col.push(0.0);
                    continue;
                }
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => col.push(x),
                    _ => {
                        violations.push(Violation::NonFinite { column: c.clone(), row: i + 1, value: v.to_string() });
                        col.push(0.0);
                    }
                }
            }
            names.push(c.clone());
            columns.push(col);
        }
    }
    let n = raw.rows.len();
    let constant_checks = [("instrument", instrument_col, &z), ("exposure", exposure_col, &d)];
    for (role, column, v) in constant_checks {
        if !v.is_nondegenerate()
            && !violations.iter().any(|x| matches!(x, Violation::NonBinary { column: c, .. } if c == column))
        {
            violations.push(Violation::Constant { role, column: column.to_string() });
        }
    }
    if !violations.is_empty() {
        return Err(DataError::Invalid(violations));
    }
    let k = columns.len();
    let flat: Vec<f64> = columns.into_iter().flatten().collect();
    let m = DMatrix::from_vec(n, k, flat);
    Dataset::with_names(m, names, instrument_col, exposure_col, z, d)
}
