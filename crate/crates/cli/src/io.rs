//! CSV ingestion and export of incomplete datasets.
//!
//! A field in a covariate column that may be missing is treated as missing
//! when it is empty or the literal `NA`; any other non-numeric token is an
//! error. Rows lacking the response or an always-observed column are dropped
//! and counted.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use elwqr_core::{Dataset, Record};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformOp {
    /// `ln(1 + v)`.
    Log1p,
    /// `(v − shift) / scale`.
    Affine { shift: f64, scale: f64 },
    /// `(v − center)² / scale`.
    CenteredSquare { center: f64, scale: f64 },
}

impl TransformOp {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            TransformOp::Log1p => v.ln_1p(),
            TransformOp::Affine { shift, scale } => (v - shift) / scale,
            TransformOp::CenteredSquare { center, scale } => (v - center).powi(2) / scale,
        }
    }
}

/// Defines column `target` as `op` applied to the raw values of `source`
/// (or of `target` itself when no source is given).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(flatten)]
    pub op: TransformOp,
}

impl Transform {
    fn source(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub response: String,
    /// Columns of `Z`.
    pub always_observed: Vec<String>,
    /// Columns of `X`.
    pub missing_covariates: Vec<String>,
    #[serde(default)]
    pub transforms: Vec<Transform>,
}

impl ColumnSpec {
    /// `y`, then `x` (or `x1, x2, …`), then `z` (or `z1, …`).
    pub fn generic(dim_x: usize, dim_z: usize) -> Self {
        let names = |prefix: &str, d: usize| -> Vec<String> {
            if d == 1 {
                vec![prefix.to_string()]
            } else {
                (1..=d).map(|k| format!("{prefix}{k}")).collect()
            }
        };
        ColumnSpec {
            response: "y".into(),
            always_observed: names("z", dim_z),
            missing_covariates: names("x", dim_x),
            transforms: Vec::new(),
        }
    }

    /// Coefficient labels: `intercept`, then the `X` columns, then the `Z` columns.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once("intercept".to_string())
            .chain(self.missing_covariates.iter().cloned())
            .chain(self.always_observed.iter().cloned())
            .collect()
    }

    pub fn validate(&self, header: &[String]) -> CliResult<()> {
        let mut seen = HashSet::new();
        let all = std::iter::once(&self.response)
            .chain(&self.always_observed)
            .chain(&self.missing_covariates);
        for name in all.clone() {
            if !seen.insert(name.as_str()) {
                return Err(CliError::validation(format!("column {name:?} is used more than once")));
            }
        }
        let targets: HashSet<&str> = self.transforms.iter().map(|t| t.target.as_str()).collect();
        let in_header = |name: &str| header.iter().any(|h| h == name);
        for name in all {
            if !in_header(name) && !targets.contains(name.as_str()) {
                return Err(CliError::validation(format!("column {name:?} not found in header")));
            }
        }
        for t in &self.transforms {
            if !in_header(t.source()) {
                return Err(CliError::validation(format!(
                    "transform source column {:?} not found in header",
                    t.source()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub dataset: Dataset,
    /// 1-based data row numbers dropped for a missing response or `Z` value.
    pub rejected_rows: Vec<usize>,
}

pub fn load_csv(path: &Path, spec: &ColumnSpec) -> CliResult<Loaded> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::validation(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, spec)
}

fn parse_cell(cell: &str, row: usize, column: &str) -> CliResult<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() || cell == MISSING_TOKEN {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(CliError::validation(format!(
            "row {row}, column {column:?}: cannot parse {cell:?} as a number"
        ))),
    }
}

pub fn read_csv<R: Read>(input: R, spec: &ColumnSpec) -> CliResult<Loaded> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    spec.validate(&header)?;
    let col = |name: &str| header.iter().position(|h| h == name);

    let mut records = Vec::new();
    let mut rejected_rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let value = |name: &str| -> CliResult<Option<f64>> {
            if let Some(t) = spec.transforms.iter().find(|t| t.target == name) {
                let raw = parse_cell(&rec[col(t.source()).expect("validated")], row, t.source())?;
                return match raw.map(|v| t.op.apply(v)) {
                    Some(v) if !v.is_finite() => Err(CliError::validation(format!(
                        "row {row}, column {name:?}: transform produced {v}"
                    ))),
                    other => Ok(other),
                };
            }
            parse_cell(&rec[col(name).expect("validated")], row, name)
        };
        let y = value(&spec.response)?;
        let z: Option<Vec<f64>> = spec
            .always_observed
            .iter()
            .map(|c| value(c))
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .collect();
        let x: Option<Vec<f64>> = spec
            .missing_covariates
            .iter()
            .map(|c| value(c))
            .collect::<CliResult<Vec<_>>>()?
            .into_iter()
            .collect();
        match (y, z) {
            (Some(y), Some(z)) => records.push(Record { y, z, x }),
            _ => rejected_rows.push(row),
        }
    }
    let dataset = Dataset::new(spec.missing_covariates.len(), spec.always_observed.len(), records)?;
    Ok(Loaded {
        dataset,
        rejected_rows,
    })
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `data` under the column names of `spec`, preceded by `comment` lines.
pub fn write_dataset<W: Write>(mut out: W, data: &Dataset, spec: &ColumnSpec, comment: &[String]) -> CliResult<()> {
    if spec.missing_covariates.len() != data.dim_x() || spec.always_observed.len() != data.dim_z() {
        return Err(CliError::validation("column spec does not match dataset dimensions"));
    }
    for line in comment {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![spec.response.clone()];
    header.extend(spec.missing_covariates.iter().cloned());
    header.extend(spec.always_observed.iter().cloned());
    w.write_record(&header)?;
    for r in data.records() {
        let mut fields = vec![fmt17(r.y)];
        match &r.x {
            Some(x) => fields.extend(x.iter().map(|v| fmt17(*v))),
            None => fields.extend(std::iter::repeat_n(MISSING_TOKEN.to_string(), data.dim_x())),
        }
        fields.extend(r.z.iter().map(|v| fmt17(*v)));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}
