//! Check loss, the quantile score function and an exact weighted
//! quantile-regression solver.
//!
//! The solver minimizes `Σ wᵢ ρ_τ(yᵢ − xᵢᵀβ)` by descending along the edges
//! of the piecewise-linear objective, in the spirit of Barrodale and Roberts:
//! every iterate is a vertex that interpolates `p` observations, and each
//! pivot performs an exact line search over all breakpoints along the chosen
//! edge, so a single pivot may pass through several vertices at once.
//! A vertex where more than `p` residuals vanish can stall the edge test, so
//! such a stop is retried on jittered responses and the better vertex kept.
//!
//! Minimizers of the check loss are not unique in general. The solver
//! returns the first optimal vertex it reaches; callers should compare
//! objectives rather than coefficients whenever ties are possible.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Rows whose weight falls below this are dropped before solving.
pub const ZERO_WEIGHT: f64 = 1e-14;

/// A quantile level strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(Error::invalid(format!(
                "quantile level must lie strictly inside (0, 1), got {tau}"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        QuantileLevel::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(tau: QuantileLevel) -> f64 {
        tau.0
    }
}

/// One observation of the linear quantile model: `w = (1, xᵀ, zᵀ)ᵀ` and `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    w: Vec<f64>,
    y: f64,
}

impl DesignRow {
    /// Builds a row; `w[0]` must be the intercept `1` and all entries finite.
    pub fn new(w: Vec<f64>, y: f64) -> Result<Self> {
        if w.first() != Some(&1.0) {
            return Err(Error::invalid("design row must start with the intercept 1"));
        }
        if !y.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design row contains non-finite values"));
        }
        Ok(DesignRow { w, y })
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `y − wᵀβ`; `beta` must have the row's dimension.
    pub fn residual(&self, beta: &[f64]) -> f64 {
        self.y - dot(&self.w, beta)
    }
}

/// The check loss `ρ_τ(u) = u(τ − I(u < 0))`.
pub fn check_loss(u: f64, tau: QuantileLevel) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::invalid("check loss of a non-finite residual"));
    }
    Ok(rho(u, tau.value()))
}

#[inline]
pub(crate) fn rho(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Quantile score `φ = w (I(y − wᵀβ < 0) − τ)`, with `I(0 < 0) = 0`.
pub fn phi(row: &DesignRow, beta: &[f64], tau: QuantileLevel) -> Result<Vec<f64>> {
    check_dim("phi: beta", row.dim(), beta.len())?;
    let mut out = vec![0.0; row.dim()];
    phi_into(row.w(), row.y(), beta, tau.value(), &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn phi_into(w: &[f64], y: f64, beta: &[f64], tau: f64, out: &mut [f64]) {
    let sign = if y - dot(w, beta) < 0.0 { 1.0 - tau } else { -tau };
    for (o, wj) in out.iter_mut().zip(w) {
        *o = wj * sign;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest value whose normalized cumulative weight reaches `tau`.
///
/// This is a minimizer of `Σ wᵢ ρ_τ(vᵢ − c)` over `c`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], tau: QuantileLevel) -> Result<f64> {
    check_dim("weighted_quantile: weights", values.len(), weights.len())?;
    if values.is_empty() {
        return Err(Error::invalid("weighted quantile of an empty sample"));
    }
    if values.iter().chain(weights).any(|v| !v.is_finite()) || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative, values finite"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("weighted quantile with zero total weight"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let target = tau.value() * total - 1e-12 * total;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= target {
            return Ok(values[i]);
        }
    }
    Ok(values[*order.last().expect("nonempty")])
}

/// `Σ wᵢ ρ_τ(yᵢ − wᵢᵀβ)`.
pub fn weighted_objective(rows: &[DesignRow], weights: &[f64], beta: &[f64], tau: QuantileLevel) -> f64 {
    rows.iter()
        .zip(weights)
        .map(|(row, &w)| w * rho(row.residual(beta), tau.value()))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QrStatus {
    Converged,
    MaxIter,
    /// The positively weighted design is rank deficient.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QrStatus,
}

/// Minimizes `Σ weightsᵢ ρ_τ(yᵢ − wᵢᵀβ)` over `β ∈ Rᵖ`.
///
/// Rows with weight below [`ZERO_WEIGHT`] are dropped and identical rows are
/// merged by summing their weights. A rank-deficient design yields
/// [`QrStatus::Degenerate`] rather than an error.
pub fn solve_weighted_qr(rows: &[DesignRow], weights: &[f64], tau: QuantileLevel) -> Result<QrSolution> {
    check_dim("solve_weighted_qr: weights", rows.len(), weights.len())?;
    let p = match rows.first() {
        Some(r) => r.dim(),
        None => return Err(Error::invalid("quantile regression needs at least one row")),
    };
    for row in rows {
        check_dim("solve_weighted_qr: design row", p, row.dim())?;
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("quantile regression weights must be finite and nonnegative"));
    }

    let problem = Problem::prepare(rows, weights, p);
    let (beta, iterations, status) = problem.solve(tau.value());
    let objective = weighted_objective(rows, weights, &beta, tau);
    Ok(QrSolution {
        beta,
        objective,
        iterations,
        status,
    })
}

/// Row-major copy of the positively weighted, deduplicated rows.
struct Problem {
    n: usize,
    p: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    /// Coordinate direction not yet pinned by an observation.
    Free(usize),
    Row(usize),
}

impl Problem {
    fn prepare(rows: &[DesignRow], weights: &[f64], p: usize) -> Problem {
        let mut idx: Vec<usize> = (0..rows.len()).filter(|&i| weights[i] >= ZERO_WEIGHT).collect();
        let cmp = |a: &usize, b: &usize| -> Ordering {
            let (ra, rb) = (&rows[*a], &rows[*b]);
            for (u, v) in ra.w.iter().zip(&rb.w) {
                match u.total_cmp(v) {
                    Ordering::Equal => {}
                    other => return other,
                }
            }
            ra.y.total_cmp(&rb.y)
        };
        idx.sort_by(|a, b| cmp(a, b).then(a.cmp(b)));

        let mut x = Vec::with_capacity(idx.len() * p);
        let mut y = Vec::with_capacity(idx.len());
        let mut w: Vec<f64> = Vec::with_capacity(idx.len());
        let mut prev: Option<usize> = None;
        for &i in &idx {
            if let Some(j) = prev {
                if cmp(&i, &j) == Ordering::Equal {
                    *w.last_mut().expect("merged into existing row") += weights[i];
                    continue;
                }
            }
            x.extend_from_slice(&rows[i].w);
            y.push(rows[i].y);
            w.push(weights[i]);
            prev = Some(i);
        }
        Problem {
            n: y.len(),
            p,
            x,
            y,
            w,
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn basis_matrix(&self, slots: &[Slot]) -> DMatrix<f64> {
        let p = self.p;
        DMatrix::from_fn(p, p, |r, c| match slots[r] {
            Slot::Free(j) => f64::from(u8::from(j == c)),
            Slot::Row(i) => self.row(i)[c],
        })
    }

    fn residuals(&self, beta: &[f64], out: &mut [f64]) {
        for (i, r) in out.iter_mut().enumerate() {
            *r = self.y[i] - dot(self.row(i), beta);
        }
    }

    fn objective(&self, resid: &[f64], tau: f64) -> f64 {
        resid.iter().zip(&self.w).map(|(r, w)| w * rho(*r, tau)).sum()
    }

    /// Runs the descent and, if it stops at a vertex with extra zero residuals,
    /// repeats it on slightly perturbed responses and keeps the better vertex.
    fn solve(&self, tau: f64) -> (Vec<f64>, usize, QrStatus) {
        let first = self.descend(tau);
        if first.status != QrStatus::Converged || !first.tied {
            return (first.beta, first.iterations, first.status);
        }
        let mut best = first;
        let y_scale = self.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut resid = vec![0.0; self.n];
        self.residuals(&best.beta, &mut resid);
        let mut best_obj = self.objective(&resid, tau);
        for eps in [1e-7, 1e-5] {
            let mut shifted = Problem {
                n: self.n,
                p: self.p,
                x: self.x.clone(),
                y: self.y.clone(),
                w: self.w.clone(),
            };
            for (i, y) in shifted.y.iter_mut().enumerate() {
                *y += eps * y_scale * jitter(i);
            }
            let alt = shifted.descend(tau);
            best.iterations += alt.iterations;
            if alt.status != QrStatus::Converged {
                continue;
            }
            let Some(beta) = self.vertex_beta(&alt.slots) else { continue };
            self.residuals(&beta, &mut resid);
            let obj = self.objective(&resid, tau);
            if obj < best_obj {
                best_obj = obj;
                best.beta = beta;
            }
        }
        (best.beta, best.iterations, QrStatus::Converged)
    }

    fn descend(&self, tau: f64) -> Descent {
        let (n, p) = (self.n, self.p);
        let mut beta = vec![0.0; p];
        let mut slots: Vec<Slot> = (0..p).map(Slot::Free).collect();
        let stop = |beta: Vec<f64>, slots: &[Slot], iterations, status, tied| Descent {
            beta,
            slots: slots.to_vec(),
            iterations,
            status,
            tied,
        };
        if n < p {
            return stop(beta, &slots, 0, QrStatus::Degenerate, false);
        }
        let x_scale = self.x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let y_scale = self.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let total_w: f64 = self.w.iter().sum();
        let zero_resid = 1e-11 * y_scale;
        let descent_tol = 1e-11 * total_w * x_scale;

        let mut in_basis = vec![false; n];
        let mut resid = self.y.clone();
        let mut a = vec![0.0; n];
        let mut iterations = 0;

        // Pin one observation per coordinate by exact two-sided line searches.
        for k in 0..p {
            iterations += 1;
            let Some(minv) = self.basis_matrix(&slots).try_inverse() else {
                return stop(beta, &slots, iterations, QrStatus::Degenerate, false);
            };
            let d: Vec<f64> = minv.column(k).iter().copied().collect();
            let dnorm = norm(&d);
            for i in 0..n {
                a[i] = if in_basis[i] { 0.0 } else { dot(self.row(i), &d) };
            }
            let Some((enter, t)) = self.line_search_two_sided(&resid, &a, &in_basis, tau, dnorm) else {
                return stop(beta, &slots, iterations, QrStatus::Degenerate, false);
            };
            for (b, dj) in beta.iter_mut().zip(&d) {
                *b += t * dj;
            }
            slots[k] = Slot::Row(enter);
            in_basis[enter] = true;
            self.residuals(&beta, &mut resid);
        }

        let Some(mut beta) = self.vertex_beta(&slots) else {
            return stop(beta, &slots, iterations, QrStatus::Degenerate, false);
        };
        self.residuals(&beta, &mut resid);
        let mut objective = self.objective(&resid, tau);

        let max_iter = 10 * n * p;
        let mut grad = vec![0.0; p];
        let mut is_zero = vec![false; n];
        while iterations < max_iter {
            iterations += 1;
            let Some(minv) = self.basis_matrix(&slots).try_inverse() else {
                return stop(beta, &slots, iterations, QrStatus::Degenerate, false);
            };

            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut zeros = Vec::new();
            is_zero.iter_mut().for_each(|z| *z = false);
            for i in 0..n {
                if in_basis[i] {
                    continue;
                }
                let r = resid[i];
                let psi = if r > zero_resid {
                    tau
                } else if r < -zero_resid {
                    tau - 1.0
                } else {
                    zeros.push(i);
                    is_zero[i] = true;
                    continue;
                };
                let scale = -self.w[i] * psi;
                for (g, xj) in grad.iter_mut().zip(self.row(i)) {
                    *g += scale * xj;
                }
            }

            // Edge k, sign s moves β along s·M⁻¹eₖ, releasing the basis row in slot k.
            let mut best: Option<(usize, f64, f64, f64)> = None;
            for (k, slot) in slots.iter().enumerate() {
                let Slot::Row(j) = *slot else { unreachable!("all slots pinned") };
                let d = minv.column(k);
                let dnorm = d.norm();
                let ck: f64 = grad.iter().zip(d.iter()).map(|(g, v)| g * v).sum();
                let mut d_plus = ck + self.w[j] * (1.0 - tau);
                let mut d_minus = -ck + self.w[j] * tau;
                for &i in &zeros {
                    let ai: f64 = self.row(i).iter().zip(d.iter()).map(|(u, v)| u * v).sum();
                    d_plus += self.w[i] * rho(-ai, tau);
                    d_minus += self.w[i] * rho(ai, tau);
                }
                for (s, deriv) in [(1.0, d_plus), (-1.0, d_minus)] {
                    let score = deriv / dnorm;
                    if best.is_none_or(|b| score < b.3) {
                        best = Some((k, s, deriv, score));
                    }
                }
            }
            let (k, s, deriv, score) = best.expect("p >= 1");
            let tied = !zeros.is_empty();
            if score >= -descent_tol {
                return stop(beta, &slots, iterations, QrStatus::Converged, tied);
            }

            let d: Vec<f64> = minv.column(k).iter().map(|v| s * v).collect();
            let dnorm = norm(&d);
            for i in 0..n {
                a[i] = if in_basis[i] || is_zero[i] {
                    0.0
                } else {
                    dot(self.row(i), &d)
                };
            }
            let Some(enter) = self.line_search_one_sided(&resid, &a, deriv, dnorm) else {
                return stop(beta, &slots, iterations, QrStatus::Converged, tied);
            };

            let Slot::Row(leave) = slots[k] else { unreachable!() };
            let mut trial = slots.clone();
            trial[k] = Slot::Row(enter);
            let Some(next_beta) = self.vertex_beta(&trial) else {
                return stop(beta, &slots, iterations, QrStatus::Converged, tied);
            };
            let mut next_resid = vec![0.0; n];
            self.residuals(&next_beta, &mut next_resid);
            let next_obj = self.objective(&next_resid, tau);
            if next_obj > objective * (1.0 + 1e-14) + 1e-300 {
                // Round-off: the pivot does not improve; the current vertex is optimal to working precision.
                return stop(beta, &slots, iterations, QrStatus::Converged, tied);
            }
            in_basis[leave] = false;
            in_basis[enter] = true;
            slots = trial;
            beta = next_beta;
            resid = next_resid;
            objective = next_obj;
        }
        stop(beta, &slots, iterations, QrStatus::MaxIter, false)
    }

    fn vertex_beta(&self, slots: &[Slot]) -> Option<Vec<f64>> {
        let m = self.basis_matrix(slots);
        let rhs = DVector::from_iterator(
            self.p,
            slots.iter().map(|s| match s {
                Slot::Row(i) => self.y[*i],
                Slot::Free(_) => 0.0,
            }),
        );
        m.lu().solve(&rhs).map(|b| b.iter().copied().collect())
    }

    /// Minimizes `t ↦ Σ wᵢ ρ(rᵢ − t aᵢ)` over all of `R`; returns the entering row and step.
    fn line_search_two_sided(
        &self,
        resid: &[f64],
        a: &[f64],
        in_basis: &[bool],
        tau: f64,
        dnorm: f64,
    ) -> Option<(usize, f64)> {
        let mut slope = 0.0;
        let mut breaks = Vec::new();
        for i in 0..self.n {
            if in_basis[i] || !self.usable(i, a[i], dnorm) {
                continue;
            }
            let ai = a[i];
            slope -= self.w[i] * ai.abs() * if ai > 0.0 { tau } else { 1.0 - tau };
            breaks.push((resid[i] / ai, i));
        }
        breaks.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.1.cmp(&v.1)));
        for &(t, i) in &breaks {
            slope += self.w[i] * a[i].abs();
            if slope >= 0.0 {
                return Some((i, t));
            }
        }
        breaks.last().map(|&(t, i)| (i, t))
    }

    /// Walks breakpoints `t > 0` from initial slope `deriv < 0` until the slope turns nonnegative.
    fn line_search_one_sided(&self, resid: &[f64], a: &[f64], deriv: f64, dnorm: f64) -> Option<usize> {
        let mut breaks: Vec<(f64, usize)> = (0..self.n)
            .filter(|&i| self.usable(i, a[i], dnorm))
            .filter_map(|i| {
                let t = resid[i] / a[i];
                (t > 0.0).then_some((t, i))
            })
            .collect();
        breaks.sort_by(|u, v| u.0.total_cmp(&v.0).then(u.1.cmp(&v.1)));
        let mut slope = deriv;
        for &(_, i) in &breaks {
            slope += self.w[i] * a[i].abs();
            if slope >= 0.0 {
                return Some(i);
            }
        }
        breaks.last().map(|&(_, i)| i)
    }

    #[inline]
    fn usable(&self, i: usize, ai: f64, dnorm: f64) -> bool {
        ai.abs() > 1e-10 * dnorm * norm(self.row(i))
    }
}

struct Descent {
    beta: Vec<f64>,
    slots: Vec<Slot>,
    iterations: usize,
    status: QrStatus,
    /// Stopped with nonbasic rows at zero residual.
    tied: bool,
}

/// Deterministic pseudo-random offset in `(-1, 1)` for row `i`.
fn jitter(i: usize) -> f64 {
    let mut z = (i as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tau(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    fn rows_1d(values: &[f64]) -> Vec<DesignRow> {
        values.iter().map(|&v| DesignRow::new(vec![1.0], v).unwrap()).collect()
    }

    #[test]
    fn quantile_level_rejects_boundaries() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert_eq!(QuantileLevel::new(0.25).unwrap().value(), 0.25);
    }

    #[test]
    fn check_loss_examples() {
        assert_eq!(check_loss(2.0, tau(0.5)).unwrap(), 1.0);
        assert!((check_loss(-1.0, tau(0.3)).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(check_loss(0.0, tau(0.9)).unwrap(), 0.0);
        assert!(check_loss(f64::INFINITY, tau(0.5)).is_err());
    }

    #[test]
    fn phi_examples() {
        let row = DesignRow::new(vec![1.0, 2.0], 0.0).unwrap();
        assert_eq!(phi(&row, &[1.0, 1.0], tau(0.5)).unwrap(), vec![0.5, 1.0]);
        let row = DesignRow::new(vec![1.0, 2.0], 10.0).unwrap();
        assert_eq!(phi(&row, &[1.0, 1.0], tau(0.5)).unwrap(), vec![-0.5, -1.0]);
        // zero residual counts as nonnegative
        let row = DesignRow::new(vec![1.0, 0.0, 3.0], 5.0).unwrap();
        let got = phi(&row, &[5.0, 1.0, 0.0], tau(0.3)).unwrap();
        assert!((got[0] + 0.3).abs() < 1e-15 && got[1] == 0.0 && (got[2] + 0.9).abs() < 1e-15);
        assert!(phi(&row, &[1.0], tau(0.3)).is_err());
    }

    #[test]
    fn design_row_validation() {
        assert!(DesignRow::new(vec![2.0, 1.0], 0.0).is_err());
        assert!(DesignRow::new(vec![1.0, f64::NAN], 0.0).is_err());
        assert!(DesignRow::new(vec![], 0.0).is_err());
    }

    #[test]
    fn weighted_quantile_examples() {
        let v = [1.0, 2.0, 10.0];
        assert_eq!(weighted_quantile(&v, &[1.0, 1.0, 1.0], tau(0.5)).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&v, &[0.2, 0.2, 0.6], tau(0.5)).unwrap(), 10.0);
        assert_eq!(weighted_quantile(&[7.0], &[3.0], tau(0.1)).unwrap(), 7.0);
        assert!(weighted_quantile(&[], &[], tau(0.5)).is_err());
        assert!(weighted_quantile(&[1.0], &[0.0], tau(0.5)).is_err());
    }

    #[test]
    fn brute_force_grid_agrees_with_weighted_quantile() {
        // minimize Σ wᵢ ρ(vᵢ − c) over the candidate values themselves
        let v = [1.0, 2.0, 10.0];
        let w = [0.2, 0.2, 0.6];
        let f = |c: f64| v.iter().zip(&w).map(|(vi, wi)| wi * rho(vi - c, 0.5)).sum::<f64>();
        let best = v.iter().copied().min_by(|a, b| f(*a).total_cmp(&f(*b))).unwrap();
        assert_eq!(best, 10.0);
    }

    #[test]
    fn intercept_only_solver_matches_weighted_quantile() {
        let rows = rows_1d(&[1.0, 2.0, 10.0]);
        let sol = solve_weighted_qr(&rows, &[0.2, 0.2, 0.6], tau(0.5)).unwrap();
        assert_eq!(sol.status, QrStatus::Converged);
        assert_eq!(sol.beta, vec![10.0]);
    }

    #[test]
    fn exact_fit_has_zero_objective() {
        let beta0 = [0.5, -1.25, 2.0];
        let rows: Vec<DesignRow> = (0..12)
            .map(|i| {
                let x = (i as f64 * 0.37).sin() * 3.0;
                let z = (i as f64 * 1.3).cos() * 2.0 + 0.1 * i as f64;
                let w = vec![1.0, x, z];
                let y = dot(&w, &beta0);
                DesignRow::new(w, y).unwrap()
            })
            .collect();
        for t in [0.1, 0.5, 0.9] {
            let sol = solve_weighted_qr(&rows, &vec![1.0; rows.len()], tau(t)).unwrap();
            assert!(sol.objective < 1e-10, "objective {}", sol.objective);
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let rows = rows_1d(&[1.0, 2.0, 3.0, 1000.0]);
        let sol = solve_weighted_qr(&rows, &[1.0, 1.0, 1.0, 0.0], tau(0.5)).unwrap();
        assert_eq!(sol.beta, vec![2.0]);
    }

    #[test]
    fn duplicated_rows_behave_like_summed_weights() {
        let a = rows_1d(&[1.0, 1.0, 5.0]);
        let b = rows_1d(&[1.0, 5.0]);
        let sa = solve_weighted_qr(&a, &[1.0, 1.0, 1.5], tau(0.5)).unwrap();
        let sb = solve_weighted_qr(&b, &[2.0, 1.5], tau(0.5)).unwrap();
        assert_eq!(sa.beta, sb.beta);
    }

    #[test]
    fn rank_deficient_design_is_degenerate() {
        let rows: Vec<DesignRow> = (0..6)
            .map(|i| DesignRow::new(vec![1.0, 2.0], i as f64).unwrap())
            .collect();
        let sol = solve_weighted_qr(&rows, &[1.0; 6], tau(0.5)).unwrap();
        assert_eq!(sol.status, QrStatus::Degenerate);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let rows = rows_1d(&[1.0, 2.0]);
        assert!(solve_weighted_qr(&rows, &[1.0, f64::NAN], tau(0.5)).is_err());
        assert!(solve_weighted_qr(&rows, &[1.0, -1.0], tau(0.5)).is_err());
        assert!(solve_weighted_qr(&rows, &[1.0], tau(0.5)).is_err());
    }
}
