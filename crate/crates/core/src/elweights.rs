//! Estimating functions for the incomplete cases and the empirical-likelihood
//! weights they induce.
//!
//! For each row the stacked estimating function is
//!
//! ```text
//! g = ( (δ − π)·m(y, z) ,  U_B(δ, y, z, γ) )
//! ```
//!
//! where `m` is a working regression of `δ·φ(β)` on a polynomial basis in
//! `(y, z)`. The multiplier `λ̂` maximizes the concave `Σ log(1 + λᵀgᵢ)` and
//! the weights are `p̂ᵢ = 1 / (n(1 + λ̂ᵀgᵢ))`.
//!
//! A working model that is linear in `(1, y, z)` makes the first block a
//! linear combination of the score block, so the constraints carry no new
//! information. [`WorkingBasis::Quadratic`] avoids that and is the default.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result, Stage};
use crate::missingness::{covariates, GammaParams, Link, Logistic};
use crate::quantile::{phi_into, QuantileLevel};

const LAMBDA_TOL: f64 = 1e-10;
const LAMBDA_MAX_ITER: usize = 100;
const BOUNDARY_STALLS: usize = 5;

/// Polynomial basis for the working model, in the variables `(y, z₁, …, z_d)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkingBasis {
    /// `(1, y, zᵀ)`.
    Linear,
    /// `(1, y, zᵀ)` plus every degree-two monomial in `(y, z)`.
    #[default]
    Quadratic,
}

impl WorkingBasis {
    /// Monomials as lists of variable indices: `0` is `y`, `k ≥ 1` is `z_k`.
    pub fn terms(self, dim_z: usize) -> Vec<Vec<usize>> {
        let vars = 1 + dim_z;
        let mut terms: Vec<Vec<usize>> = vec![vec![]];
        terms.extend((0..vars).map(|v| vec![v]));
        if self == WorkingBasis::Quadratic {
            for a in 0..vars {
                for b in a..vars {
                    terms.push(vec![a, b]);
                }
            }
        }
        terms
    }
}

fn eval_term(term: &[usize], y: f64, z: &[f64]) -> f64 {
    term.iter()
        .map(|&v| if v == 0 { y } else { z[v - 1] })
        .product()
}

/// `m(y, z) = α·b(y, z)`, one row of `α` per regression coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingModel {
    /// Basis monomials kept after dropping linearly dependent ones.
    pub terms: Vec<Vec<usize>>,
    /// `p × terms.len()`, row-major.
    pub alpha: Vec<Vec<f64>>,
}

impl WorkingModel {
    /// A model with `m ≡ 0`.
    pub fn zero(p: usize, dim_z: usize) -> Self {
        let terms = WorkingBasis::Linear.terms(dim_z);
        WorkingModel {
            alpha: vec![vec![0.0; terms.len()]; p],
            terms,
        }
    }

    pub fn p(&self) -> usize {
        self.alpha.len()
    }

    pub fn basis(&self, y: f64, z: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| eval_term(t, y, z)).collect()
    }

    pub fn eval(&self, y: f64, z: &[f64]) -> Vec<f64> {
        let b = self.basis(y, z);
        self.alpha
            .iter()
            .map(|row| row.iter().zip(&b).map(|(a, v)| a * v).sum())
            .collect()
    }
}

/// The plug-in parameter `θ̂ = (α̂, β̂, γ̂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub alpha: WorkingModel,
    pub beta: Vec<f64>,
    pub gamma: GammaParams,
}

impl Theta {
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        check_dim("theta: beta", data.p(), self.beta.len())?;
        check_dim("theta: working model", data.p(), self.alpha.p())?;
        check_dim("theta: gamma", data.q(), self.gamma.q())?;
        let vars = 1 + data.dim_z();
        if self.alpha.terms.iter().flatten().any(|&v| v >= vars)
            || self.alpha.alpha.iter().any(|r| r.len() != self.alpha.terms.len())
        {
            return Err(Error::invalid("working model does not match the dataset dimensions"));
        }
        Ok(())
    }
}

/// Least-squares fit of `δᵢ·φ_j(β)` (zero when `δᵢ = 0`) on the basis, over all rows.
///
/// Degree-two monomials that are linearly dependent on earlier columns are
/// dropped; a rank-deficient linear part is an error.
pub fn fit_working_model(
    data: &Dataset,
    beta: &[f64],
    tau: QuantileLevel,
    basis: WorkingBasis,
) -> Result<WorkingModel> {
    check_dim("fit_working_model: beta", data.p(), beta.len())?;
    let n = data.len();
    let p = data.p();
    let all_terms = basis.terms(data.dim_z());
    let n_linear = 2 + data.dim_z();

    // Greedy column selection by modified Gram–Schmidt.
    let mut q_cols: Vec<Vec<f64>> = Vec::new();
    let mut terms = Vec::new();
    for (k, term) in all_terms.iter().enumerate() {
        let mut col: Vec<f64> = data.records().iter().map(|r| eval_term(term, r.y, &r.z)).collect();
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..2 {
            for qc in &q_cols {
                let proj: f64 = qc.iter().zip(&col).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(qc).for_each(|(c, q)| *c -= proj * q);
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-8 * norm0 {
            if k < n_linear {
                return Err(Error::numerical(
                    Stage::WorkingModel,
                    "basis (1, y, z) is rank deficient",
                ));
            }
            continue;
        }
        col.iter_mut().for_each(|c| *c /= norm);
        q_cols.push(col);
        terms.push(term.clone());
    }
    let b = terms.len();
    if data.n_complete() < b {
        return Err(Error::invalid(format!(
            "working model needs at least {b} complete cases, found {}",
            data.n_complete()
        )));
    }

    let h = DMatrix::from_fn(n, b, |i, j| {
        let r = &data.records()[i];
        eval_term(&terms[j], r.y, &r.z)
    });
    let mut target = DMatrix::zeros(n, p);
    let mut buf = vec![0.0; p];
    for (i, r) in data.records().iter().enumerate() {
        if let Some(w) = r.design() {
            phi_into(&w, r.y, beta, tau.value(), &mut buf);
            for j in 0..p {
                target[(i, j)] = buf[j];
            }
        }
    }
    let qr = h.qr();
    let rhs = qr.q().transpose() * target;
    let coef = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::numerical(Stage::WorkingModel, "triangular solve failed"))?;
    let alpha: Vec<Vec<f64>> = (0..p).map(|j| coef.column(j).iter().copied().collect()).collect();
    if alpha.iter().flatten().any(|a| !a.is_finite()) {
        return Err(Error::numerical(Stage::WorkingModel, "non-finite coefficients"));
    }
    Ok(WorkingModel { terms, alpha })
}

/// Stacks `gᵢ = ((δᵢ − πᵢ)·m(yᵢ, zᵢ), U_B,ᵢ)` into an `n × (p + q)` matrix.
///
/// Only `(y, z, δ)` are read; missing covariates never enter.
pub fn build_g(data: &Dataset, theta: &Theta) -> Result<DMatrix<f64>> {
    theta.validate(data)?;
    let p = data.p();
    let q = data.q();
    let mut g = DMatrix::zeros(data.len(), p + q);
    for (i, r) in data.records().iter().enumerate() {
        let pi = Logistic.prob(theta.gamma.linear_predictor(r.y, &r.z));
        let resid = r.delta_f64() - pi;
        for (j, mj) in theta.alpha.eval(r.y, &r.z).into_iter().enumerate() {
            g[(i, j)] = resid * mj;
        }
        for (j, hj) in covariates(r.y, &r.z).into_iter().enumerate() {
            g[(i, p + j)] = resid * hj;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaStatus {
    Converged,
    /// Zero is not inside the convex hull of the rows.
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElDiagnostics {
    pub lambda: Vec<f64>,
    pub weights: Vec<f64>,
    /// `‖Σ p̂ᵢ gᵢ‖∞`.
    pub constraint_residual: f64,
    /// `minᵢ (1 + λ̂ᵀgᵢ)`.
    pub min_denominator: f64,
    pub iterations: usize,
    pub status: LambdaStatus,
    /// Rank of the constraint matrix actually used.
    pub rank: usize,
    /// `Σ log(1 + λᵀgᵢ)` after each accepted step.
    pub objective_trace: Vec<f64>,
}

/// Damped Newton for `λ̂ = argmax Σ log(1 + λᵀgᵢ)` subject to `1 + λᵀgᵢ ≥ 1/n`.
///
/// Columns are rescaled and projected onto the column space of `g`, so
/// redundant constraints do not make the Newton system singular; `λ̂` is
/// reported in the original coordinates.
pub fn solve_lambda(g: &DMatrix<f64>) -> Result<ElDiagnostics> {
    let (n, r) = g.shape();
    if n <= r {
        return Err(Error::invalid(format!(
            "EL constraints need more rows than columns, got {n} × {r}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("constraint matrix contains non-finite values"));
    }
    let nf = n as f64;

    // Map λ = T·μ, with T = D·Q: column scaling then an orthonormal basis of the column space.
    let scale: Vec<f64> = (0..r)
        .map(|j| {
            let c = g.column(j).norm();
            if c > 0.0 {
                1.0 / c
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, r, |i, j| g[(i, j)] * scale[j]);
    let gram = scaled.transpose() * &scaled;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    let keep: Vec<usize> = (0..r).filter(|&k| top > 0.0 && eig.eigenvalues[k] > 1e-12 * top).collect();
    let rank = keep.len();
    let transform = if rank == r {
        DMatrix::from_diagonal(&DVector::from_vec(scale.clone()))
    } else {
        DMatrix::from_fn(r, rank, |i, k| scale[i] * eig.eigenvectors[(i, keep[k])])
    };
    let reduced = g * &transform;

    let objective = |mu: &DVector<f64>| -> Option<(f64, DVector<f64>)> {
        let den = DVector::from_fn(n, |i, _| 1.0 + reduced.row(i).dot(&mu.transpose()));
        if den.iter().any(|d| *d < 1.0 / nf) {
            return None;
        }
        Some((den.iter().map(|d| d.ln()).sum(), den))
    };
    let residual = |den: &DVector<f64>| -> f64 {
        let inv = den.map(|d| 1.0 / (nf * d));
        (g.transpose() * inv).amax()
    };

    let mut mu = DVector::zeros(rank);
    let (mut obj, mut den) = objective(&mu).expect("λ = 0 is feasible");
    let mut trace = vec![obj];
    let mut resid = residual(&den);
    let mut status = LambdaStatus::MaxIter;
    let mut iterations = 0;
    let mut stalls = 0;

    if rank == 0 {
        status = LambdaStatus::Converged;
    }
    while status == LambdaStatus::MaxIter && iterations < LAMBDA_MAX_ITER {
        if resid < 1e-14 {
            break;
        }
        iterations += 1;
        let mut grad = DVector::zeros(rank);
        let mut hess = DMatrix::zeros(rank, rank);
        for i in 0..n {
            let gi = reduced.row(i).transpose();
            let inv = 1.0 / den[i];
            grad.axpy(inv, &gi, 1.0);
            hess.ger(inv * inv, &gi, &gi, 1.0);
        }
        let step = match hess.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => match hess.lu().solve(&grad) {
                Some(s) => s,
                None => break,
            },
        };
        let predicted = grad.dot(&step);
        let noise = 1e-13 * (1.0 + obj.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &mu + t * &step;
            if let Some((obj_c, den_c)) = objective(&cand) {
                if obj_c >= obj || (t * predicted < noise && obj_c >= obj - noise) {
                    accepted = Some((cand, obj_c, den_c));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, obj_c, den_c)) = accepted else {
            stalls += 1;
            if stalls >= BOUNDARY_STALLS {
                status = LambdaStatus::Infeasible;
            }
            if resid < LAMBDA_TOL {
                break;
            }
            continue;
        };
        let at_boundary = t < 1.0 && den_c.iter().any(|d| *d < 2.0 / nf);
        stalls = if at_boundary { stalls + 1 } else { 0 };
        let new_resid = residual(&den_c);
        let improved = new_resid < resid;
        mu = cand;
        obj = obj_c;
        den = den_c;
        resid = new_resid;
        trace.push(obj);

        // λᵀgᵢ > 0 for every row separates 0 from the convex hull.
        if den.iter().all(|d| *d > 1.0) || stalls >= BOUNDARY_STALLS {
            status = LambdaStatus::Infeasible;
        } else if !improved && resid < LAMBDA_TOL {
            break;
        }
    }
    if status == LambdaStatus::MaxIter && resid < LAMBDA_TOL {
        status = LambdaStatus::Converged;
    }

    let lambda: Vec<f64> = (&transform * &mu).iter().copied().collect();
    let weights: Vec<f64> = den.iter().map(|d| 1.0 / (nf * d)).collect();
    Ok(ElDiagnostics {
        lambda,
        weights,
        constraint_residual: resid,
        min_denominator: den.min(),
        iterations,
        status,
        rank,
        objective_trace: trace,
    })
}

/// `p̂ᵢ = 1 / (n(1 + λᵀgᵢ))`.
pub fn el_weights(g: &DMatrix<f64>, lambda: &[f64]) -> Result<Vec<f64>> {
    check_dim("el_weights: lambda", g.ncols(), lambda.len())?;
    let n = g.nrows() as f64;
    let lam = DVector::from_column_slice(lambda);
    (0..g.nrows())
        .map(|i| {
            let den = 1.0 + g.row(i).transpose().dot(&lam);
            if den > 0.0 {
                Ok(1.0 / (n * den))
            } else {
                Err(Error::numerical(
                    Stage::Weights,
                    format!("nonpositive denominator 1 + λᵀg = {den} at row {i}"),
                ))
            }
        })
        .collect()
}
