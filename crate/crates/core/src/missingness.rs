//! Parametric model for `P(δ = 1 | Y, Z)` and its binomial maximum-likelihood fit.
//!
//! The probability is `π(y, z, γ) = 1 / (1 + exp(−γ₀ − yγ₁ − zᵀγ₂))`, i.e. a
//! logistic link on the covariates `h(y, z) = (1, y, zᵀ)ᵀ`. The coefficient
//! order is therefore intercept, response, then the always-observed covariates.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result, Stage};

/// Largest admissible `‖γ‖∞`; fits beyond it are treated as separated.
pub const GAMMA_BOUND: f64 = 30.0;

const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Probabilities are kept at least this far from 0 and 1.
const PROB_FLOOR: f64 = 1e-16;

/// Missingness-model coefficients `(γ₀, γ_y, γ_zᵀ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GammaParams(Vec<f64>);

impl GammaParams {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.len() < 2 {
            return Err(Error::invalid("gamma needs at least an intercept and a response coefficient"));
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("gamma contains non-finite values"));
        }
        if gamma.iter().any(|g| g.abs() > GAMMA_BOUND) {
            return Err(Error::invalid(format!("gamma exceeds the bound ‖γ‖∞ ≤ {GAMMA_BOUND}")));
        }
        Ok(GammaParams(gamma))
    }

    pub fn zeros(q: usize) -> Self {
        GammaParams(vec![0.0; q.max(2)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn q(&self) -> usize {
        self.0.len()
    }

    /// Linear predictor `γ₀ + yγ₁ + zᵀγ₂`.
    pub fn linear_predictor(&self, y: f64, z: &[f64]) -> f64 {
        self.0[0] + y * self.0[1] + self.0[2..].iter().zip(z).map(|(g, v)| g * v).sum::<f64>()
    }
}

impl TryFrom<Vec<f64>> for GammaParams {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        GammaParams::new(v)
    }
}

impl From<GammaParams> for Vec<f64> {
    fn from(g: GammaParams) -> Vec<f64> {
        g.0
    }
}

/// A link from the linear predictor to `P(δ = 1 | Y, Z)`.
pub trait Link {
    fn prob(&self, eta: f64) -> f64;
    /// `dπ/dη`; the gradient in γ is this times `h(y, z)`.
    fn dprob(&self, eta: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

impl Link for Logistic {
    fn prob(&self, eta: f64) -> f64 {
        let p = if eta >= 0.0 {
            1.0 / (1.0 + (-eta).exp())
        } else {
            let e = eta.exp();
            e / (1.0 + e)
        };
        p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
    }

    fn dprob(&self, eta: f64) -> f64 {
        let p = self.prob(eta);
        p * (1.0 - p)
    }
}

/// Basis `h(y, z) = (1, y, zᵀ)ᵀ`.
pub fn covariates(y: f64, z: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(2 + z.len());
    h.push(1.0);
    h.push(y);
    h.extend_from_slice(z);
    h
}

pub fn pi_logistic(y: f64, z: &[f64], gamma: &GammaParams) -> Result<f64> {
    check_dim("pi_logistic: gamma", 2 + z.len(), gamma.q())?;
    Ok(Logistic.prob(gamma.linear_predictor(y, z)))
}

/// `∂π/∂γ`.
pub fn pi_gradient(y: f64, z: &[f64], gamma: &GammaParams) -> Result<Vec<f64>> {
    check_dim("pi_gradient: gamma", 2 + z.len(), gamma.q())?;
    let slope = Logistic.dprob(gamma.linear_predictor(y, z));
    Ok(covariates(y, z).into_iter().map(|h| slope * h).collect())
}

/// `log(1 + eᵘ)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `L_B(γ) = Σ δᵢ log πᵢ + (1 − δᵢ) log(1 − πᵢ)`.
pub fn binomial_loglik(data: &Dataset, gamma: &GammaParams) -> Result<f64> {
    check_dim("binomial_loglik: gamma", data.q(), gamma.q())?;
    if data.is_empty() {
        return Err(Error::invalid("log-likelihood of an empty dataset"));
    }
    Ok(data
        .records()
        .iter()
        .map(|r| {
            let eta = gamma.linear_predictor(r.y, &r.z);
            if r.delta() {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum())
}

/// Binomial score `(δ − π)·h(y, z)`, the logistic simplification of
/// `(δ − π) / (π(1 − π)) · ∂π/∂γ`.
pub fn score_ub(delta: bool, y: f64, z: &[f64], gamma: &GammaParams) -> Result<Vec<f64>> {
    let pi = pi_logistic(y, z, gamma)?;
    let resid = f64::from(u8::from(delta)) - pi;
    Ok(covariates(y, z).into_iter().map(|h| resid * h).collect())
}

/// The score through the general quotient form, for any [`Link`].
pub fn score_ub_general(link: &impl Link, delta: bool, y: f64, z: &[f64], gamma: &GammaParams) -> Result<Vec<f64>> {
    check_dim("score_ub_general: gamma", 2 + z.len(), gamma.q())?;
    let eta = gamma.linear_predictor(y, z);
    let pi = link.prob(eta);
    let factor = (f64::from(u8::from(delta)) - pi) / (pi * (1.0 - pi)) * link.dprob(eta);
    Ok(covariates(y, z).into_iter().map(|h| factor * h).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MleStatus {
    Converged,
    Separated,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub gamma_hat: GammaParams,
    pub loglik: f64,
    /// `‖Σ U_B‖∞` at `gamma_hat`.
    pub score_norm: f64,
    pub iterations: usize,
    pub status: MleStatus,
    /// `minᵢ π̂ᵢ` over all rows, reported as a positivity diagnostic.
    pub min_pi: f64,
    /// Log-likelihood after each accepted Newton step, starting at `γ = 0`.
    pub loglik_trace: Vec<f64>,
}

/// Maximizes `L_B(γ)` for the logistic model on `h(y, z) = (1, y, zᵀ)ᵀ`.
pub fn fit_gamma_mle(data: &Dataset) -> Result<MleFit> {
    let design: Vec<Vec<f64>> = data.records().iter().map(|r| covariates(r.y, &r.z)).collect();
    let delta: Vec<bool> = data.records().iter().map(|r| r.delta()).collect();
    fit_logistic(&design, &delta)
}

/// Newton–Raphson with step halving for a logistic regression of `delta` on `design`.
///
/// Rows are processed in a canonical order so the result does not depend on
/// how the sample is permuted.
pub fn fit_logistic(design: &[Vec<f64>], delta: &[bool]) -> Result<MleFit> {
    check_dim("fit_logistic: delta", design.len(), delta.len())?;
    let n = design.len();
    let q = design.first().map(Vec::len).unwrap_or(0);
    if q == 0 {
        return Err(Error::invalid("logistic fit needs at least one covariate"));
    }
    if design.iter().any(|h| h.len() != q) {
        return Err(Error::invalid("logistic design rows have unequal lengths"));
    }
    if n < q {
        return Err(Error::invalid(format!("logistic fit needs n ≥ {q} rows, got {n}")));
    }
    let ones = delta.iter().filter(|d| **d).count();
    if ones == 0 || ones == n {
        return Err(Error::invalid("missingness indicator takes a single value; the MLE does not exist"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        delta[a].cmp(&delta[b]).then_with(|| {
            for (u, v) in design[a].iter().zip(&design[b]) {
                match u.total_cmp(v) {
                    Ordering::Equal => {}
                    other => return other,
                }
            }
            Ordering::Equal
        })
    });
    let rows: Vec<(&[f64], f64)> = order
        .iter()
        .map(|&i| (design[i].as_slice(), f64::from(u8::from(delta[i]))))
        .collect();

    let eta = |gamma: &[f64], h: &[f64]| -> f64 { gamma.iter().zip(h).map(|(g, v)| g * v).sum() };
    let loglik = |gamma: &[f64]| -> f64 {
        rows.iter()
            .map(|(h, d)| {
                let e = eta(gamma, h);
                if *d > 0.5 {
                    -softplus(-e)
                } else {
                    -softplus(e)
                }
            })
            .sum()
    };
    let score_info = |gamma: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut score = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for (h, d) in &rows {
            let pi = Logistic.prob(eta(gamma, h));
            let resid = d - pi;
            let wgt = pi * (1.0 - pi);
            for a in 0..q {
                score[a] += resid * h[a];
                for b in 0..=a {
                    info[(a, b)] += wgt * h[a] * h[b];
                }
            }
        }
        for a in 0..q {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (score, info)
    };

    let mut gamma = vec![0.0; q];
    let mut ll = loglik(&gamma);
    let mut trace = vec![ll];
    let mut status = MleStatus::MaxIter;
    let mut iterations = 0;
    let (mut score, mut info) = score_info(&gamma);

    while iterations < MAX_ITER {
        if score.amax() < SCORE_TOL {
            status = MleStatus::Converged;
            break;
        }
        iterations += 1;
        let Some(chol) = info.clone().cholesky() else {
            status = MleStatus::Separated;
            break;
        };
        let step = chol.solve(&score);
        let predicted = 0.5 * score.dot(&step);
        if gamma.iter().zip(step.iter()).any(|(g, s)| (g + s).abs() > GAMMA_BOUND) {
            status = MleStatus::Separated;
            break;
        }
        let noise = 1e-12 * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = gamma.iter().zip(step.iter()).map(|(g, s)| g + t * s).collect();
            let ll_c = loglik(&cand);
            if ll_c >= ll || (t * predicted < noise && ll_c >= ll - noise) {
                accepted = Some((cand, ll_c));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ll_c)) = accepted else {
            break;
        };
        gamma = cand;
        ll = ll_c;
        trace.push(ll);
        (score, info) = score_info(&gamma);
    }
    if status == MleStatus::MaxIter && score.amax() < SCORE_TOL {
        status = MleStatus::Converged;
    }

    let min_pi = rows
        .iter()
        .map(|(h, _)| Logistic.prob(eta(&gamma, h)))
        .fold(f64::INFINITY, f64::min);
    let gamma_hat = GammaParams(gamma);
    if gamma_hat.0.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical(Stage::Missingness, "non-finite coefficients"));
    }
    Ok(MleFit {
        gamma_hat,
        loglik: ll,
        score_norm: score.amax(),
        iterations,
        status,
        min_pi,
        loglik_trace: trace,
    })
}
