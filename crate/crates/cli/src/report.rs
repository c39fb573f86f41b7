//! The multi-τ analysis workflow and the CSV tables it writes.

use std::io::Write;
use std::path::Path;

use elwqr_core::estimators::{fit_cca, fit_elw_given_gamma, fit_ipw_mar, ElwOptions};
use elwqr_core::inference::bootstrap_se_with;
use elwqr_core::missingness::{fit_gamma_mle, MleFit, MleStatus};
use elwqr_core::simgen::{stream_seed, McRow};
use elwqr_core::{Dataset, Estimator, FitResult, QuantileLevel};
use serde::{Deserialize, Serialize};

use crate::config::{Provenance, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::fmt17;

/// One value of the long-format coefficient and standard-error tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub tau: f64,
    pub estimator: Estimator,
    pub component: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub tau: f64,
    pub estimator: Estimator,
    /// `fit` or `bootstrap`.
    pub step: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub coefficients: Vec<LongRow>,
    pub se: Vec<LongRow>,
    pub failures: Vec<CellFailure>,
}

fn fit_cell(
    data: &Dataset,
    tau: QuantileLevel,
    estimator: Estimator,
    gamma: &Result<MleFit, String>,
    options: &ElwOptions,
) -> Result<FitResult, String> {
    let res = match estimator {
        Estimator::Cca => fit_cca(data, tau),
        Estimator::IpwMar => fit_ipw_mar(data, tau),
        Estimator::Elw => {
            let g = gamma.as_ref().map_err(Clone::clone)?;
            fit_elw_given_gamma(data, tau, options, g.clone())
        }
    };
    res.map_err(|e| e.to_string())
}

/// Point estimates and bootstrap standard errors for every `(τ, estimator)`.
///
/// A failing cell is recorded and the run continues. The missingness model
/// is fitted once and shared across the grid.
pub fn run_analysis(data: &Dataset, names: &[String], config: &RunConfig) -> CliResult<AnalysisReport> {
    config.validate()?;
    if names.len() != data.p() {
        return Err(CliError::validation("coefficient names do not match the design"));
    }
    let options = config.elw_options();
    let gamma = match fit_gamma_mle(data) {
        Ok(g) if g.status == MleStatus::Converged => Ok(g),
        Ok(g) => Err(format!("missingness MLE stopped with status {:?}", g.status)),
        Err(e) => Err(e.to_string()),
    };
    let mut report = AnalysisReport::default();
    for (ti, &tau) in config.tau_grid.iter().enumerate() {
        for &estimator in &config.estimators {
            let fail = |step: &str, message: String| CellFailure {
                tau: tau.value(),
                estimator,
                step: step.into(),
                message,
            };
            let fit = match fit_cell(data, tau, estimator, &gamma, &options) {
                Ok(f) => f,
                Err(msg) => {
                    report.failures.push(fail("fit", msg));
                    continue;
                }
            };
            let row = |component: &String, value: f64| LongRow {
                tau: tau.value(),
                estimator,
                component: component.clone(),
                value,
            };
            report
                .coefficients
                .extend(names.iter().zip(&fit.beta_hat).map(|(c, v)| row(c, *v)));
            let cell = (ti * Estimator::ALL.len() + estimator as usize) as u64;
            let seed = stream_seed(config.seed, cell);
            match bootstrap_se_with(data, tau, estimator, config.bootstrap_b, seed, &options) {
                Ok(b) => report.se.extend(names.iter().zip(&b.se).map(|(c, v)| row(c, *v))),
                Err(e) => report.failures.push(fail("bootstrap", e.to_string())),
            }
        }
    }
    Ok(report)
}

fn create(path: &Path) -> CliResult<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_long_csv(path: &Path, rows: &[LongRow], provenance: &Provenance) -> CliResult<()> {
    let mut out = create(path)?;
    writeln!(out, "# {}", provenance.comment())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "estimator", "component", "value"])?;
    for r in rows {
        w.write_record([fmt17(r.tau), r.estimator.to_string(), r.component.clone(), fmt17(r.value)])?;
    }
    w.flush()?;
    Ok(())
}

pub const TABLE_HEADER: [&str; 12] = [
    "tau",
    "n",
    "estimator",
    "reps",
    "failures",
    "beta0_bias",
    "beta0_rmse",
    "beta1_bias",
    "beta1_rmse",
    "beta2_bias",
    "beta2_rmse",
    "error",
];

/// The bias/RMSE table, one row per `(τ, n, estimator)`.
pub fn write_table_csv(path: &Path, rows: &[McRow], provenance: &Provenance) -> CliResult<()> {
    let mut out = create(path)?;
    writeln!(out, "# {}", provenance.comment())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        let mut fields = vec![
            fmt17(r.tau),
            r.n.to_string(),
            r.estimator.to_string(),
            r.reps.to_string(),
            r.failures.to_string(),
        ];
        for j in 0..3 {
            fields.push(r.bias.get(j).copied().map(fmt17).unwrap_or_default());
            fields.push(r.rmse.get(j).copied().map(fmt17).unwrap_or_default());
        }
        fields.push(r.error.clone().unwrap_or_default());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `value` as pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
