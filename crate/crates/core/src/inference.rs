//! Standard errors: a pairs bootstrap, and plug-in estimates of the sandwich
//! covariances of the complete-case and EL-weighted estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::elweights::Theta;
use crate::error::{Error, Result, Stage};
use crate::estimators::{fit_with, ElwOptions, Estimator, FitResult};
use crate::missingness::{covariates, Link, Logistic};
use crate::quantile::{phi_into, QuantileLevel};
use crate::simgen::stream_seed;

/// Largest tolerated share of failed bootstrap replicates.
pub const MAX_BOOTSTRAP_FAILURES: f64 = 0.2;
/// Matrices with a larger condition number are not inverted.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub se: Vec<f64>,
    /// `p × p`, row-major.
    pub cov: Vec<Vec<f64>>,
    /// Successful replicates in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub b: usize,
    pub seed: u64,
    pub failures: usize,
}

pub fn bootstrap_se(
    data: &Dataset,
    tau: QuantileLevel,
    estimator: Estimator,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    bootstrap_se_with(data, tau, estimator, b, seed, &ElwOptions::default())
}

/// Resamples whole rows with replacement and refits; replicate `r` draws from
/// its own seeded stream, so results do not depend on thread scheduling.
pub fn bootstrap_se_with(
    data: &Dataset,
    tau: QuantileLevel,
    estimator: Estimator,
    b: usize,
    seed: u64,
    options: &ElwOptions,
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::invalid("bootstrap needs B ≥ 2"));
    }
    fit_with(data, tau, estimator, options)?;
    let n = data.len();
    let draws: Vec<Option<Vec<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha20Rng::seed_from_u64(stream_seed(seed, r as u64));
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            fit_with(&data.select(&idx), tau, estimator, options)
                .ok()
                .map(|f| f.beta_hat)
        })
        .collect();
    let replicates: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let failures = b - replicates.len();
    if failures as f64 > MAX_BOOTSTRAP_FAILURES * b as f64 || replicates.len() < 2 {
        return Err(Error::numerical(
            Stage::Inference,
            format!("{failures} of {b} bootstrap replicates failed"),
        ));
    }
    let (se, cov) = sample_covariance(&replicates);
    Ok(BootstrapResult {
        se,
        cov,
        replicates,
        b,
        seed,
        failures,
    })
}

fn sample_covariance(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = rows.len() as f64;
    let p = rows[0].len();
    let shift = &rows[0];
    let mean: Vec<f64> = (0..p)
        .map(|j| rows.iter().map(|r| r[j] - shift[j]).sum::<f64>() / m)
        .collect();
    let cov: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| {
                    rows.iter()
                        .map(|r| (r[j] - shift[j] - mean[j]) * (r[k] - shift[k] - mean[k]))
                        .sum::<f64>()
                        / (m - 1.0)
                })
                .collect()
        })
        .collect();
    let se = (0..p).map(|j| cov[j][j].sqrt()).collect();
    (se, cov)
}

/// Kernel bandwidth for the residual density at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Hall–Sheather rate on the probability scale, times the residual IQR.
    #[default]
    Auto,
    Fixed(f64),
}

/// `n_c^(-1/3) z_{0.975}^(2/3) [1.5 φ(Φ⁻¹(τ))² / (2Φ⁻¹(τ)² + 1)]^(1/3)` with `n_c` residuals.
pub fn hall_sheather(n: usize, tau: QuantileLevel) -> f64 {
    let normal = Normal::standard();
    let q = normal.inverse_cdf(tau.value());
    let z = normal.inverse_cdf(0.975);
    let dens = normal.pdf(q);
    (n as f64).powf(-1.0 / 3.0) * z.powf(2.0 / 3.0) * (1.5 * dens * dens / (2.0 * q * q + 1.0)).powf(1.0 / 3.0)
}

fn interquartile_range(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    };
    at(0.75) - at(0.25)
}

/// Sample versions of every matrix in the asymptotic covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct CovComponents {
    pub f_beta: DMatrix<f64>,
    pub s_phi: DMatrix<f64>,
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub d3: DMatrix<f64>,
    pub d4: DMatrix<f64>,
    pub s_b: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub sigma_c: DMatrix<f64>,
    pub sigma_elw: DMatrix<f64>,
    /// Bandwidth actually used for `f_beta`.
    pub bandwidth: f64,
}

impl CovComponents {
    pub fn p(&self) -> usize {
        self.f_beta.nrows()
    }

    pub fn q(&self) -> usize {
        self.s_b.nrows()
    }

    /// Assembles `V₁`, `V₂`, `Σ_C` and `Σ_ELW` from the other blocks.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        f_beta: DMatrix<f64>,
        s_phi: DMatrix<f64>,
        d1: DMatrix<f64>,
        d2: DMatrix<f64>,
        d3: DMatrix<f64>,
        d4: DMatrix<f64>,
        s_b: DMatrix<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        let f_inv = spd_inverse("F_beta", &f_beta)?;
        let (v1, v2) = if d2.iter().all(|v| *v == 0.0) {
            (d3.clone(), d1.clone())
        } else {
            let s_b_inv = spd_inverse("S_B", &s_b)?;
            (&d3 - &d4 * &s_b_inv * d2.transpose(), &d1 - &d2 * &s_b_inv * d2.transpose())
        };
        let sigma_c = symmetrize(&(&f_inv * &s_phi * &f_inv));
        let sigma_elw = if v1.iter().all(|v| *v == 0.0) {
            sigma_c.clone()
        } else {
            let v2_inv = spd_inverse("V2", &v2)?;
            let a = &f_inv * &v1;
            symmetrize(&(&sigma_c - &a * v2_inv * a.transpose()))
        };
        Ok(CovComponents {
            f_beta,
            s_phi,
            d1,
            d2,
            d3,
            d4,
            s_b,
            v1,
            v2,
            sigma_c,
            sigma_elw,
            bandwidth,
        })
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive definite block via its eigendecomposition.
///
/// Fails, naming the block, when it is not positive definite or its
/// condition number exceeds [`MAX_CONDITION`].
pub fn spd_inverse(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min.is_nan() || min <= 0.0 || !max.is_finite() || max / min > MAX_CONDITION {
        return Err(Error::numerical(
            Stage::Inference,
            format!("{name} is singular or ill-conditioned (eigenvalues in [{min:e}, {max:e}])"),
        ));
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l));
    Ok(symmetrize(&(&eig.eigenvectors * inv_diag * eig.eigenvectors.transpose())))
}

/// Replaces each expectation by a sample average over all `n` rows and the
/// residual density at zero by a Gaussian kernel on complete-case residuals.
pub fn plugin_components(
    data: &Dataset,
    theta: &Theta,
    tau: QuantileLevel,
    bandwidth: Bandwidth,
) -> Result<CovComponents> {
    theta.validate(data)?;
    let p = data.p();
    let q = data.q();
    let n = data.len() as f64;
    let residuals: Vec<f64> = data
        .records()
        .iter()
        .filter_map(|r| Some(r.y - crate::quantile::dot(&r.design()?, &theta.beta)))
        .collect();
    if residuals.len() < p {
        return Err(Error::invalid("too few complete cases for plug-in covariances"));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::invalid(format!("bandwidth must be positive, got {h}"))),
        Bandwidth::Auto => hall_sheather(residuals.len(), tau) * interquartile_range(&residuals),
    };
    if h.is_nan() || h <= 0.0 {
        return Err(Error::numerical(Stage::Inference, "residual spread is zero, cannot pick a bandwidth"));
    }
    let kernel = Normal::standard();

    let mut f_beta = DMatrix::zeros(p, p);
    let mut s_phi = DMatrix::zeros(p, p);
    let mut d1 = DMatrix::zeros(p, p);
    let mut d2 = DMatrix::zeros(p, q);
    let mut d3 = DMatrix::zeros(p, p);
    let mut d4 = DMatrix::zeros(p, q);
    let mut s_b = DMatrix::zeros(q, q);
    let mut phi = vec![0.0; p];
    for r in data.records() {
        let pi = Logistic.prob(theta.gamma.linear_predictor(r.y, &r.z));
        let resid = r.delta_f64() - pi;
        let m = DVector::from_vec(theta.alpha.eval(r.y, &r.z));
        let u = DVector::from_vec(covariates(r.y, &r.z)) * resid;
        d1.ger(resid * resid, &m, &m, 1.0);
        d2.ger(resid, &m, &u, 1.0);
        s_b.ger(1.0, &u, &u, 1.0);
        if let Some(w) = r.design() {
            let e = r.y - crate::quantile::dot(&w, &theta.beta);
            phi_into(&w, r.y, &theta.beta, tau.value(), &mut phi);
            let wv = DVector::from_vec(w);
            let phv = DVector::from_column_slice(&phi);
            f_beta.ger(kernel.pdf(e / h) / h, &wv, &wv, 1.0);
            s_phi.ger(1.0, &phv, &phv, 1.0);
            d3.ger(resid, &phv, &m, 1.0);
            d4.ger(1.0, &phv, &u, 1.0);
        }
    }
    for mat in [&mut f_beta, &mut s_phi, &mut d1, &mut d2, &mut d3, &mut d4, &mut s_b] {
        *mat /= n;
    }
    for mat in [&mut f_beta, &mut s_phi, &mut d1, &mut s_b] {
        *mat = symmetrize(mat);
    }
    CovComponents::assemble(f_beta, s_phi, d1, d2, d3, d4, s_b, h)
}

/// `θ̂` of an ELW fit, with the fitted coefficients as `β`.
pub fn theta_from_fit(fit: &FitResult) -> Result<Theta> {
    match (&fit.working_model, &fit.gamma_fit) {
        (Some(alpha), Some(g)) => Ok(Theta {
            alpha: alpha.clone(),
            beta: fit.beta_hat.clone(),
            gamma: g.gamma_hat.clone(),
        }),
        _ => Err(Error::invalid("plug-in covariances need an ELW fit")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockIdentity {
    /// `max |[(S₁ᵀS₂⁻¹S₁)⁻¹]_ββ − Σ_ELW|`.
    pub top_left: f64,
    /// `max |[(S₁ᵀS₂⁻¹S₁)⁻¹]_γγ − S_B⁻¹|`.
    pub bottom_right: f64,
    pub sigma_el: DMatrix<f64>,
}

impl BlockIdentity {
    pub fn residual(&self) -> f64 {
        self.top_left.max(self.bottom_right)
    }
}

/// Checks `Σ_ELW` against the `β` block of `(S₁ᵀS₂⁻¹S₁)⁻¹`, where
///
/// ```text
/// S₁ = [F 0; 0 D₂; 0 S_B],   S₂ = [S_φ D₃ D₄; D₃ᵀ D₁ D₂; D₄ᵀ D₂ᵀ S_B].
/// ```
pub fn block_identity_check(c: &CovComponents) -> Result<f64> {
    block_identity_details(c).map(|b| b.residual())
}

pub fn block_identity_details(c: &CovComponents) -> Result<BlockIdentity> {
    let p = c.p();
    let q = c.q();
    let mut s1 = DMatrix::zeros(2 * p + q, p + q);
    s1.view_mut((0, 0), (p, p)).copy_from(&c.f_beta);
    s1.view_mut((p, p), (p, q)).copy_from(&c.d2);
    s1.view_mut((2 * p, p), (q, q)).copy_from(&c.s_b);

    let mut s2 = DMatrix::zeros(2 * p + q, 2 * p + q);
    s2.view_mut((0, 0), (p, p)).copy_from(&c.s_phi);
    s2.view_mut((0, p), (p, p)).copy_from(&c.d3);
    s2.view_mut((0, 2 * p), (p, q)).copy_from(&c.d4);
    s2.view_mut((p, 0), (p, p)).copy_from(&c.d3.transpose());
    s2.view_mut((p, p), (p, p)).copy_from(&c.d1);
    s2.view_mut((p, 2 * p), (p, q)).copy_from(&c.d2);
    s2.view_mut((2 * p, 0), (q, p)).copy_from(&c.d4.transpose());
    s2.view_mut((2 * p, p), (q, p)).copy_from(&c.d2.transpose());
    s2.view_mut((2 * p, 2 * p), (q, q)).copy_from(&c.s_b);

    let s2_inv_s1 = s2
        .lu()
        .solve(&s1)
        .ok_or_else(|| Error::numerical(Stage::Inference, "S2 is singular"))?;
    let info = s1.transpose() * s2_inv_s1;
    let sigma_el = info
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::numerical(Stage::Inference, "S1ᵀ S2⁻¹ S1 is singular"))?;
    if sigma_el.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(Stage::Inference, "non-finite block inverse"));
    }
    let s_b_inv = spd_inverse("S_B", &c.s_b)?;
    let top_left = (sigma_el.view((0, 0), (p, p)) - &c.sigma_elw).amax();
    let bottom_right = (sigma_el.view((p, p), (q, q)) - s_b_inv).amax();
    Ok(BlockIdentity {
        top_left,
        bottom_right,
        sigma_el,
    })
}
