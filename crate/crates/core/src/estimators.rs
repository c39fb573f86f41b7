//! Complete-case, inverse-probability-weighted and EL-weighted estimators.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::elweights::{
    build_g, fit_working_model, solve_lambda, ElDiagnostics, LambdaStatus, Theta, WorkingBasis, WorkingModel,
};
use crate::error::{check_dim, Error, Result, Stage};
use crate::missingness::{fit_gamma_mle, Link, Logistic, MleFit, MleStatus};
use crate::quantile::{solve_weighted_qr, DesignRow, QrSolution, QrStatus, QuantileLevel};

/// Smallest estimated observation probability accepted by the IPW estimator.
pub const IPW_MIN_PROB: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Cca,
    IpwMar,
    Elw,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Cca, Estimator::IpwMar, Estimator::Elw];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Cca => "cca",
            Estimator::IpwMar => "ipw_mar",
            Estimator::Elw => "elw",
        }
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cca" => Ok(Estimator::Cca),
            "ipw_mar" | "ipw" => Ok(Estimator::IpwMar),
            "elw" => Ok(Estimator::Elw),
            other => Err(Error::invalid(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub estimator: Estimator,
    pub tau: QuantileLevel,
    pub gamma_fit: Option<MleFit>,
    pub working_model: Option<WorkingModel>,
    pub el: Option<ElDiagnostics>,
    pub qr: QrSolution,
}

/// Settings for [`fit_elw_with`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElwOptions {
    pub basis: WorkingBasis,
}

pub fn fit(data: &Dataset, tau: QuantileLevel, estimator: Estimator) -> Result<FitResult> {
    match estimator {
        Estimator::Cca => fit_cca(data, tau),
        Estimator::IpwMar => fit_ipw_mar(data, tau),
        Estimator::Elw => fit_elw(data, tau),
    }
}

pub fn fit_with(data: &Dataset, tau: QuantileLevel, estimator: Estimator, options: &ElwOptions) -> Result<FitResult> {
    match estimator {
        Estimator::Elw => fit_elw_with(data, tau, options),
        other => fit(data, tau, other),
    }
}

fn weighted_fit(rows: &[DesignRow], weights: &[f64], tau: QuantileLevel) -> Result<QrSolution> {
    let sol = solve_weighted_qr(rows, weights, tau)?;
    match sol.status {
        QrStatus::Converged => Ok(sol),
        QrStatus::Degenerate => Err(Error::numerical(
            Stage::QuantileRegression,
            "complete-case design is rank deficient",
        )),
        QrStatus::MaxIter => Err(Error::numerical(
            Stage::QuantileRegression,
            "iteration limit reached",
        )),
    }
}

fn complete_rows(data: &Dataset) -> Result<(Vec<usize>, Vec<DesignRow>)> {
    let (idx, rows): (Vec<usize>, Vec<DesignRow>) = data.complete_design().into_iter().unzip();
    if rows.len() < data.p() {
        return Err(Error::invalid(format!(
            "need at least {} complete cases, found {}",
            data.p(),
            rows.len()
        )));
    }
    Ok((idx, rows))
}

/// Unweighted quantile regression on the complete cases.
pub fn fit_cca(data: &Dataset, tau: QuantileLevel) -> Result<FitResult> {
    let (_, rows) = complete_rows(data)?;
    let qr = weighted_fit(&rows, &vec![1.0; rows.len()], tau)?;
    Ok(FitResult {
        beta_hat: qr.beta.clone(),
        estimator: Estimator::Cca,
        tau,
        gamma_fit: None,
        working_model: None,
        el: None,
        qr,
    })
}

fn converged_gamma(data: &Dataset) -> Result<MleFit> {
    let fit = fit_gamma_mle(data)?;
    match fit.status {
        MleStatus::Converged => Ok(fit),
        MleStatus::Separated => Err(Error::numerical(
            Stage::Missingness,
            "observation indicator is separated by (y, z)",
        )),
        MleStatus::MaxIter => Err(Error::numerical(Stage::Missingness, "Newton iterations did not converge")),
    }
}

/// Complete cases weighted by `1/π̂ᵢ`, with `π̂` from the logistic model on `(1, y, z)`.
pub fn fit_ipw_mar(data: &Dataset, tau: QuantileLevel) -> Result<FitResult> {
    let gamma_fit = converged_gamma(data)?;
    let probs: Vec<f64> = data
        .records()
        .iter()
        .map(|r| Logistic.prob(gamma_fit.gamma_hat.linear_predictor(r.y, &r.z)))
        .collect();
    let mut res = fit_ipw_with_probs(data, tau, &probs)?;
    res.gamma_fit = Some(gamma_fit);
    Ok(res)
}

/// Inverse-probability-weighted fit for given observation probabilities, one per row.
///
/// Only complete rows are checked against [`IPW_MIN_PROB`], since only they carry weight.
pub fn fit_ipw_with_probs(data: &Dataset, tau: QuantileLevel, probs: &[f64]) -> Result<FitResult> {
    check_dim("fit_ipw_with_probs: probs", data.len(), probs.len())?;
    let (idx, rows) = complete_rows(data)?;
    let mut weights = Vec::with_capacity(rows.len());
    for &i in &idx {
        let pi = probs[i];
        if !(pi > IPW_MIN_PROB && pi <= 1.0) {
            return Err(Error::numerical(
                Stage::Missingness,
                format!("estimated observation probability {pi} at row {i} is below {IPW_MIN_PROB}"),
            ));
        }
        weights.push(1.0 / pi);
    }
    let qr = weighted_fit(&rows, &weights, tau)?;
    Ok(FitResult {
        beta_hat: qr.beta.clone(),
        estimator: Estimator::IpwMar,
        tau,
        gamma_fit: None,
        working_model: None,
        el: None,
        qr,
    })
}

pub fn fit_elw(data: &Dataset, tau: QuantileLevel) -> Result<FitResult> {
    fit_elw_with(data, tau, &ElwOptions::default())
}

pub fn fit_elw_with(data: &Dataset, tau: QuantileLevel, options: &ElwOptions) -> Result<FitResult> {
    let gamma_fit = converged_gamma(data)?;
    fit_elw_given_gamma(data, tau, options, gamma_fit)
}

/// ELW fit reusing a missingness fit, e.g. across a grid of quantile levels.
pub fn fit_elw_given_gamma(
    data: &Dataset,
    tau: QuantileLevel,
    options: &ElwOptions,
    gamma_fit: MleFit,
) -> Result<FitResult> {
    let cca = fit_cca(data, tau)?;
    let alpha = fit_working_model(data, &cca.beta_hat, tau, options.basis)?;
    let theta = Theta {
        alpha,
        beta: cca.beta_hat,
        gamma: gamma_fit.gamma_hat.clone(),
    };
    let g = build_g(data, &theta)?;
    let el = solve_lambda(&g)?;
    match el.status {
        LambdaStatus::Converged => {}
        LambdaStatus::Infeasible => {
            return Err(Error::numerical(
                Stage::Lambda,
                "zero is outside the convex hull of the estimating functions; \
                 consider the complete-case estimator instead",
            ))
        }
        LambdaStatus::MaxIter => {
            return Err(Error::numerical(
                Stage::Lambda,
                format!("no convergence, constraint residual {:e}", el.constraint_residual),
            ))
        }
    }
    let (idx, rows) = complete_rows(data)?;
    let weights: Vec<f64> = idx.iter().map(|&i| el.weights[i]).collect();
    let qr = weighted_fit(&rows, &weights, tau)?;
    Ok(FitResult {
        beta_hat: qr.beta.clone(),
        estimator: Estimator::Elw,
        tau,
        gamma_fit: Some(gamma_fit),
        working_model: Some(theta.alpha),
        el: Some(el),
        qr,
    })
}
