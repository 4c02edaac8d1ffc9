//! CSV and JSON input/output.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;
use strattree::{CovariateSpace, Sample, StratificationTree};

/// A failure mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad input data, arguments or configuration (exit 2).
    Input(String),
    /// Anything else (exit 1).
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<strattree::Error> for CliError {
    fn from(e: strattree::Error) -> Self {
        let hint = match e {
            strattree::Error::OutOfBounds { .. } => {
                "\nhint: pass --space with a JSON list of dimension bounds \
                 (the default space is the unit cube)"
            }
            _ => "",
        };
        CliError::Input(format!("{e}{hint}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn input<E: fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{context}: {e}"))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(input(&path.display().to_string()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_text(path)?).map_err(input(&path.display().to_string()))
}

pub fn read_tree(path: &Path) -> CliResult<StratificationTree> {
    StratificationTree::from_json(&read_text(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(format!("serialization failed: {e}")))
}

/// Writes `text` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A CSV file with named columns, kept as raw strings.
pub struct Table {
    pub path: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let name = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(input(&name))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(input(&name))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(input(&name))?;
        Ok(Self {
            path: name,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> CliResult<usize> {
        self.column(name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column {name:?}", self.path)))
    }

    fn cell(&self, row: usize, col: usize) -> CliResult<&str> {
        let v = self.rows[row][col].as_str();
        if v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") {
            return Err(CliError::Input(format!(
                "{}: missing value at row {}, column {:?}",
                self.path,
                row + 1,
                self.headers[col]
            )));
        }
        Ok(v)
    }

    fn number(&self, row: usize, col: usize) -> CliResult<f64> {
        let v = self.cell(row, col)?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| {
                CliError::Input(format!(
                    "{}: row {}, column {:?}: {v:?} is not a finite number",
                    self.path,
                    row + 1,
                    self.headers[col]
                ))
            })
    }

    fn arm(&self, row: usize, col: usize) -> CliResult<usize> {
        let v = self.cell(row, col)?;
        v.parse::<usize>().map_err(|_| {
            CliError::Input(format!(
                "{}: row {}, column {:?}: treatment {v:?} is not a non-negative integer",
                self.path,
                row + 1,
                self.headers[col]
            ))
        })
    }

    /// Indices of the covariate columns `x1..xd`.
    fn covariate_columns(&self) -> CliResult<Vec<usize>> {
        let mut cols = Vec::new();
        while let Some(c) = self.column(&format!("x{}", cols.len() + 1)) {
            cols.push(c);
        }
        if cols.is_empty() {
            return Err(CliError::Input(format!(
                "{}: no covariate columns (expected x1, x2, ...)",
                self.path
            )));
        }
        Ok(cols)
    }

    pub fn covariates(&self) -> CliResult<Vec<Vec<f64>>> {
        let cols = self.covariate_columns()?;
        (0..self.rows.len())
            .map(|i| cols.iter().map(|&c| self.number(i, c)).collect())
            .collect()
    }

    /// Outcome `y`, treatment `a` and covariates as a [`Sample`].
    pub fn sample(&self) -> CliResult<Sample> {
        let yc = self.require("y")?;
        let ac = self.require("a")?;
        let y = (0..self.rows.len())
            .map(|i| self.number(i, yc))
            .collect::<CliResult<_>>()?;
        let a = (0..self.rows.len())
            .map(|i| self.arm(i, ac))
            .collect::<CliResult<_>>()?;
        Sample::new(y, a, self.covariates()?)
            .map_err(|e| CliError::Input(format!("{}: {e}", self.path)))
    }

    pub fn write_with(&self, extra: &[&str], values: &[Vec<String>]) -> CliResult<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let headers = self
            .headers
            .iter()
            .map(String::as_str)
            .chain(extra.iter().copied());
        let fail = |e: csv::Error| CliError::Internal(e.to_string());
        w.write_record(headers).map_err(fail)?;
        for (row, more) in self.rows.iter().zip(values) {
            w.write_record(row.iter().chain(more)).map_err(fail)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Internal(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))
    }
}

/// The covariate space from `--space`, or the unit cube of dimension `d`.
pub fn space(path: Option<&Path>, d: usize) -> CliResult<CovariateSpace> {
    match path {
        Some(p) => {
            let space: CovariateSpace = read_json(p)?;
            if space.dim() != d {
                return Err(CliError::Input(format!(
                    "{}: space has {} dimensions, data has {d}",
                    p.display(),
                    space.dim()
                )));
            }
            Ok(space)
        }
        None => Ok(CovariateSpace::unit_cube(d)),
    }
}
