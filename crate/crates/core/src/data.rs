//! The incomplete sample `(Yᵢ, Xᵢ, Zᵢ, δᵢ)`.
//!
//! `δᵢ` is not stored separately: a record is complete exactly when its
//! `x` vector is present, so the two can never disagree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::DesignRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub y: f64,
    pub z: Vec<f64>,
    /// `None` when the covariate vector is missing (`δ = 0`).
    pub x: Option<Vec<f64>>,
}

impl Record {
    pub fn complete(y: f64, x: Vec<f64>, z: Vec<f64>) -> Self {
        Record { y, z, x: Some(x) }
    }

    pub fn incomplete(y: f64, z: Vec<f64>) -> Self {
        Record { y, z, x: None }
    }

    #[inline]
    pub fn delta(&self) -> bool {
        self.x.is_some()
    }

    #[inline]
    pub fn delta_f64(&self) -> f64 {
        f64::from(u8::from(self.delta()))
    }

    /// `w = (1, xᵀ, zᵀ)ᵀ`, available only for complete records.
    pub fn design(&self) -> Option<Vec<f64>> {
        let x = self.x.as_ref()?;
        let mut w = Vec::with_capacity(1 + x.len() + self.z.len());
        w.push(1.0);
        w.extend_from_slice(x);
        w.extend_from_slice(&self.z);
        Some(w)
    }
}

/// A validated collection of records with fixed covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim_x: usize,
    dim_z: usize,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(dim_x: usize, dim_z: usize, records: Vec<Record>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.z.len() != dim_z {
                return Err(Error::invalid(format!(
                    "record {i}: z has length {}, expected {dim_z}",
                    r.z.len()
                )));
            }
            if let Some(x) = &r.x {
                if x.len() != dim_x {
                    return Err(Error::invalid(format!(
                        "record {i}: x has length {}, expected {dim_x}",
                        x.len()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("record {i}: non-finite x")));
                }
            }
            if !r.y.is_finite() || r.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {i}: non-finite y or z")));
            }
        }
        Ok(Dataset {
            dim_x,
            dim_z,
            records,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim_x(&self) -> usize {
        self.dim_x
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    /// Number of regression coefficients, `1 + dim_x + dim_z`.
    pub fn p(&self) -> usize {
        1 + self.dim_x + self.dim_z
    }

    /// Number of missingness-model coefficients, `2 + dim_z`.
    pub fn q(&self) -> usize {
        2 + self.dim_z
    }

    pub fn n_complete(&self) -> usize {
        self.records.iter().filter(|r| r.delta()).count()
    }

    pub fn missing_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        1.0 - self.n_complete() as f64 / self.len() as f64
    }

    /// Design rows of the complete cases, paired with their record index.
    pub fn complete_design(&self) -> Vec<(usize, DesignRow)> {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                let w = r.design()?;
                Some((i, DesignRow::new(w, r.y).expect("validated record")))
            })
            .collect()
    }

    /// Resample rows by index, e.g. for the bootstrap.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim_x: self.dim_x,
            dim_z: self.dim_z,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}
