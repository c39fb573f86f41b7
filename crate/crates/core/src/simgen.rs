//! Conditional-Gaussian data-generating process and the Monte Carlo harness.
//!
//! `δ ~ Bernoulli(p_δ)` and `(X, Z, Y) | δ ~ N((δ, 0, ηδ), Ψ)`. Because `η`
//! equals the partial regression coefficient of `Y` on `X`, the conditional
//! quantiles of `Y` given `(X, Z)` do not depend on `δ`, while `δ` given
//! `(Z, Y)` follows a logistic model: the missingness is not at random.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Record};
use crate::error::{Error, Result, Stage};
use crate::estimators::{fit_cca, fit_elw_given_gamma, fit_ipw_with_probs, ElwOptions, Estimator};
use crate::missingness::{fit_gamma_mle, Link, Logistic, MleStatus};
use crate::quantile::QuantileLevel;

/// Largest tolerated share of failed replications per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.05;

const X: usize = 0;
const Z: usize = 1;
const Y: usize = 2;

/// Which expression to use for the conditional variance of `Y` given `(X, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaFormula {
    /// `σ_yy − (σ_xz²σ_zz − 2σ_xz²σ_zy + σ_zy²σ_xx)·υ₁`.
    #[default]
    Printed,
    /// `σ_yy − (σ_xy²σ_zz − 2σ_xyσ_xzσ_zy + σ_zy²σ_xx)·υ₁`.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    /// Covariance of `(X, Z, Y)` given `δ`.
    pub psi: [[f64; 3]; 3],
    #[serde(default = "default_p_delta")]
    pub p_delta: f64,
    #[serde(default)]
    pub sigma_formula: SigmaFormula,
}

fn default_p_delta() -> f64 {
    0.5
}

impl Default for SimDesign {
    /// Unit variances and all correlations `0.5`.
    fn default() -> Self {
        let mut psi = [[0.5; 3]; 3];
        for (k, row) in psi.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        SimDesign {
            psi,
            p_delta: 0.5,
            sigma_formula: SigmaFormula::Printed,
        }
    }
}

impl SimDesign {
    fn psi_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.psi[i][j])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_delta > 0.0 && self.p_delta < 1.0) {
            return Err(Error::invalid(format!("p_delta must lie in (0, 1), got {}", self.p_delta)));
        }
        let m = self.psi_matrix();
        if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).amax() > 0.0 {
            return Err(Error::invalid("psi must be finite and symmetric"));
        }
        if (0..3).any(|k| m[(k, k)] <= 0.0) {
            return Err(Error::invalid("psi must have a positive diagonal"));
        }
        if m.cholesky().is_none() {
            return Err(Error::invalid("psi is not positive definite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub eta: f64,
    pub upsilon1: f64,
    pub upsilon2: f64,
    /// Conditional variance of `Y` under the selected formula.
    pub sigma_sq: f64,
    /// The other formula, kept as a diagnostic.
    pub sigma_sq_alternative: f64,
    /// `(β₀(τ), β₁, β₂)` for the design `(1, X, Z)`.
    pub beta_true: Vec<f64>,
    /// Missingness coefficients on `(1, Y, Z)`.
    pub gamma_true: Vec<f64>,
}

pub fn derive_params(design: &SimDesign, tau: QuantileLevel) -> Result<SimParams> {
    design.validate()?;
    let s = design.psi;
    let det_xz = s[X][X] * s[Z][Z] - s[X][Z] * s[X][Z];
    let det_zy = s[Z][Z] * s[Y][Y] - s[Z][Y] * s[Z][Y];
    if det_xz <= 0.0 || det_zy <= 0.0 {
        return Err(Error::invalid("psi is singular on the (x, z) or (z, y) block"));
    }
    let upsilon1 = 1.0 / det_xz;
    let upsilon2 = 1.0 / det_zy;
    let eta = (s[X][Y] * s[Z][Z] - s[X][Z] * s[Z][Y]) * upsilon1;
    let beta2 = (s[Z][Y] * s[X][X] - s[X][Z] * s[X][Y]) * upsilon1;

    let printed = s[Y][Y]
        - (s[X][Z].powi(2) * s[Z][Z] - 2.0 * s[X][Z].powi(2) * s[Z][Y] + s[Z][Y].powi(2) * s[X][X]) * upsilon1;
    let standard = s[Y][Y]
        - (s[X][Y].powi(2) * s[Z][Z] - 2.0 * s[X][Y] * s[X][Z] * s[Z][Y] + s[Z][Y].powi(2) * s[X][X]) * upsilon1;
    let (sigma_sq, sigma_sq_alternative) = match design.sigma_formula {
        SigmaFormula::Printed => (printed, standard),
        SigmaFormula::Standard => (standard, printed),
    };
    if sigma_sq <= 0.0 {
        return Err(Error::invalid(format!("conditional variance {sigma_sq} is not positive")));
    }
    let z_tau = Normal::standard().inverse_cdf(tau.value());
    let beta0 = sigma_sq.sqrt() * z_tau;

    let logit_p = (design.p_delta / (1.0 - design.p_delta)).ln();
    let gamma0 = logit_p - 0.5 * eta * eta * s[Z][Z] * upsilon2;
    let gamma_z = -eta * s[Z][Y] * upsilon2;
    let gamma_y = eta * s[Z][Z] * upsilon2;

    Ok(SimParams {
        eta,
        upsilon1,
        upsilon2,
        sigma_sq,
        sigma_sq_alternative,
        beta_true: vec![beta0, eta, beta2],
        gamma_true: vec![gamma0, gamma_y, gamma_z],
    })
}

/// Seed for stream `index` derived from `master`, independent of scheduling.
pub fn stream_seed(master: u64, index: u64) -> u64 {
    fn splitmix(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
    splitmix(master ^ splitmix(index))
}

/// One draw of `(δ, X, Z, Y)` before masking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRow {
    pub delta: bool,
    pub x: f64,
    pub z: f64,
    pub y: f64,
}

/// Draws `n` unmasked rows.
pub fn generate_rows(design: &SimDesign, n: usize, seed: u64) -> Result<Vec<FullRow>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    design.validate()?;
    let eta = derive_params(design, QuantileLevel::new(0.5)?)?.eta;
    let chol = design
        .psi_matrix()
        .cholesky()
        .ok_or_else(|| Error::numerical(Stage::Generator, "Cholesky factorization of psi failed"))?;
    let l = chol.l();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let delta = rng.random::<f64>() < design.p_delta;
            let e = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let d = f64::from(u8::from(delta));
            let v = Vector3::new(d, 0.0, eta * d) + l * e;
            FullRow {
                delta,
                x: v[X],
                z: v[Z],
                y: v[Y],
            }
        })
        .collect())
}

/// Draws `n` rows; `X` is discarded when `δ = 0`.
pub fn generate_dataset(design: &SimDesign, n: usize, seed: u64) -> Result<Dataset> {
    let records = generate_rows(design, n, seed)?
        .into_iter()
        .map(|r| {
            if r.delta {
                Record::complete(r.y, vec![r.x], vec![r.z])
            } else {
                Record::incomplete(r.y, vec![r.z])
            }
        })
        .collect();
    Dataset::new(1, 1, records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub tau: QuantileLevel,
    pub reps: usize,
    pub estimators: Vec<Estimator>,
    pub seed: u64,
    #[serde(default)]
    pub elw: ElwOptions,
}

/// One row of the bias/RMSE table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub tau: f64,
    pub n: usize,
    pub estimator: Estimator,
    pub reps: usize,
    pub failures: usize,
    pub bias: Vec<f64>,
    pub rmse: Vec<f64>,
    /// Set when more than [`MAX_FAILURE_RATE`] of the replications failed.
    pub error: Option<String>,
}

/// Fits every requested estimator on one dataset, sharing the missingness fit.
pub fn fit_all(
    data: &Dataset,
    tau: QuantileLevel,
    estimators: &[Estimator],
    elw: &ElwOptions,
) -> Vec<Result<Vec<f64>>> {
    let needs_gamma = estimators.iter().any(|e| *e != Estimator::Cca);
    let gamma = if needs_gamma {
        Some(fit_gamma_mle(data).and_then(|g| match g.status {
            MleStatus::Converged => Ok(g),
            _ => Err(Error::numerical(Stage::Missingness, "missingness MLE did not converge")),
        }))
    } else {
        None
    };
    estimators
        .iter()
        .map(|e| match e {
            Estimator::Cca => fit_cca(data, tau).map(|f| f.beta_hat),
            Estimator::IpwMar => {
                let g = gamma.as_ref().expect("computed above").as_ref().map_err(Error::clone)?;
                let probs: Vec<f64> = data
                    .records()
                    .iter()
                    .map(|r| Logistic.prob(g.gamma_hat.linear_predictor(r.y, &r.z)))
                    .collect();
                fit_ipw_with_probs(data, tau, &probs).map(|f| f.beta_hat)
            }
            Estimator::Elw => {
                let g = gamma.as_ref().expect("computed above").as_ref().map_err(Error::clone)?;
                fit_elw_given_gamma(data, tau, elw, g.clone()).map(|f| f.beta_hat)
            }
        })
        .collect()
}

pub fn monte_carlo(design: &SimDesign, config: &McConfig) -> Result<Vec<McRow>> {
    let truth = derive_params(design, config.tau)?.beta_true;
    monte_carlo_with(&truth, config, |seed| generate_dataset(design, config.n, seed))
}

/// Monte Carlo over datasets produced by `source(seed)` with per-replication seeds.
pub fn monte_carlo_with<F>(beta_true: &[f64], config: &McConfig, source: F) -> Result<Vec<McRow>>
where
    F: Fn(u64) -> Result<Dataset> + Sync,
{
    if config.reps < 2 {
        return Err(Error::invalid("Monte Carlo needs at least 2 replications"));
    }
    if config.estimators.is_empty() {
        return Err(Error::invalid("no estimators requested"));
    }
    let k = config.estimators.len();
    let outcomes: Vec<Vec<Option<Vec<f64>>>> = (0..config.reps)
        .into_par_iter()
        .map(|r| match source(stream_seed(config.seed, r as u64)) {
            Ok(data) => fit_all(&data, config.tau, &config.estimators, &config.elw)
                .into_iter()
                .map(|res| res.ok())
                .collect(),
            Err(_) => vec![None; k],
        })
        .collect();

    let p = beta_true.len();
    let rows = config
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &estimator)| {
            let mut sum = vec![0.0; p];
            let mut sum_sq = vec![0.0; p];
            let mut ok = 0usize;
            for beta in outcomes.iter().filter_map(|o| o[e].as_ref()) {
                ok += 1;
                for j in 0..p {
                    let err = beta[j] - beta_true[j];
                    sum[j] += err;
                    sum_sq[j] += err * err;
                }
            }
            let failures = config.reps - ok;
            let denom = ok.max(1) as f64;
            let error = (failures as f64 > MAX_FAILURE_RATE * config.reps as f64).then(|| {
                format!("{failures} of {} replications failed", config.reps)
            });
            McRow {
                tau: config.tau.value(),
                n: config.n,
                estimator,
                reps: config.reps,
                failures,
                bias: sum.iter().map(|s| s / denom).collect(),
                rmse: sum_sq.iter().map(|s| (s / denom).sqrt()).collect(),
                error,
            }
        })
        .collect();
    Ok(rows)
}
