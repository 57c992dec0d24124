//! Maximum-likelihood spatial autoregressive (spatial lag) model
//! `y = ρWy + Xβ + ε`.
//!
//! The log-determinant `ln|I − ρW|` is evaluated from the spectrum of `W`,
//! computed once per weights matrix in [`SarContext`]. Row-standardized
//! weights built from a symmetric adjacency are similar to a symmetric
//! matrix, so the spectrum is real and obtained with a symmetric
//! eigensolver; other matrices fall back to a general (complex) Schur
//! decomposition. [`log_det_lu`] evaluates the same quantity by dense LU and
//! is kept as an independent check.

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{correlation, normal_two_sided_p, ols};
use crate::spatialstats::WeightsMatrix;
use crate::{Error, Result};

/// Offset from the singular endpoints of the admissible ρ interval.
pub const RHO_MARGIN: f64 = 1e-6;
const GOLDEN_TOL: f64 = 1e-10;
const IMAG_TOL: f64 = 1e-10;

/// Outcome, design and column labels for a SAR fit.
#[derive(Debug, Clone)]
pub struct ModelMatrix {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
}

impl ModelMatrix {
    /// `x` must already contain the intercept column.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::InvalidInput(format!("{} outcomes for {n} design rows", y.len())));
        }
        if names.len() != p {
            return Err(Error::InvalidInput(format!("{} names for {p} columns", names.len())));
        }
        if n <= p + 1 {
            return Err(Error::InvalidInput(format!("need n > p + 1 (n={n}, p={p})")));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in model data".into()));
        }
        Ok(ModelMatrix {
            y: DVector::from_vec(y),
            x,
            names,
        })
    }

    /// Appends a trailing `Constant` column to `x`.
    pub fn with_constant(y: Vec<f64>, x: &DMatrix<f64>, names: &[String]) -> Result<Self> {
        let mut names = names.to_vec();
        names.push("Constant".to_string());
        ModelMatrix::new(y, crate::linalg::with_intercept(x), names)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Reorders observations: new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> ModelMatrix {
        let y = DVector::from_iterator(perm.len(), perm.iter().map(|&i| self.y[i]));
        let x = DMatrix::from_fn(perm.len(), self.x.ncols(), |r, c| self.x[(perm[r], c)]);
        ModelMatrix {
            y,
            x,
            names: self.names.clone(),
        }
    }
}

/// Spectrum of a weights matrix and the admissible ρ interval it implies.
#[derive(Debug, Clone)]
pub struct SarContext {
    w: WeightsMatrix,
    /// Eigenvalues as `(re, im)`.
    eigenvalues: Vec<(f64, f64)>,
    bounds: Option<(f64, f64)>,
}

impl SarContext {
    pub fn new(w: &WeightsMatrix) -> Result<Self> {
        if w.nnz() > 0 && !w.is_row_standardized() {
            return Err(Error::InvalidInput("SAR requires row-standardized weights".into()));
        }
        if w.nnz() == 0 {
            return Ok(SarContext {
                w: w.clone(),
                eigenvalues: vec![(0.0, 0.0); w.len()],
                bounds: None,
            });
        }
        let eigenvalues = match symmetric_similar(w) {
            Some(s) => s.symmetric_eigenvalues().iter().map(|&l| (l, 0.0)).collect(),
            None => w.to_dense().complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect::<Vec<_>>(),
        };
        let real = eigenvalues.iter().filter(|(_, im)| im.abs() <= IMAG_TOL).map(|&(re, _)| re);
        let (mut lmin, mut lmax) = (0.0f64, 0.0f64);
        for l in real {
            lmin = lmin.min(l);
            lmax = lmax.max(l);
        }
        let lo = if lmin < 0.0 { 1.0 / lmin + RHO_MARGIN } else { -1.0 };
        let hi = if lmax > 0.0 { 1.0 / lmax - RHO_MARGIN } else { 1.0 };
        Ok(SarContext {
            w: w.clone(),
            eigenvalues,
            bounds: Some((lo, hi)),
        })
    }

    pub fn weights(&self) -> &WeightsMatrix {
        &self.w
    }

    /// Search interval for ρ, or `None` when `W = 0` and ρ is unidentified.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    pub fn eigenvalues(&self) -> &[(f64, f64)] {
        &self.eigenvalues
    }

    /// `ln|I − ρW| = Σ ln|1 − ρλ|`.
    pub fn log_det(&self, rho: f64) -> f64 {
        self.eigenvalues
            .iter()
            .map(|&(re, im)| 0.5 * ((1.0 - rho * re).powi(2) + (rho * im).powi(2)).ln())
            .sum()
    }

    fn log_det_derivative(&self, rho: f64) -> f64 {
        // d/dρ Σ ln|1 − ρλ| = −Σ Re(λ / (1 − ρλ))
        -self
            .eigenvalues
            .iter()
            .map(|&(re, im)| {
                let (dr, di) = (1.0 - rho * re, -rho * im);
                (re * dr + im * di) / (dr * dr + di * di)
            })
            .sum::<f64>()
    }
}

/// `S = R^{1/2} W R^{-1/2}` when some positive diagonal `R` makes `RW`
/// symmetric; `None` otherwise.
fn symmetric_similar(w: &WeightsMatrix) -> Option<DMatrix<f64>> {
    let n = w.len();
    let weight = |i: usize, j: usize| -> f64 {
        let row = w.row(i);
        row.binary_search_by_key(&j, |&(k, _)| k).map(|p| row[p].1).unwrap_or(0.0)
    };
    let mut r = vec![0.0f64; n];
    let mut queue = VecDeque::new();
    for start in 0..n {
        if r[start] != 0.0 {
            continue;
        }
        r[start] = 1.0;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for &(j, wij) in w.row(i) {
                let wji = weight(j, i);
                if wji == 0.0 {
                    return None;
                }
                let rj = r[i] * wij / wji;
                if r[j] == 0.0 {
                    r[j] = rj;
                    queue.push_back(j);
                } else if (r[j] - rj).abs() > 1e-9 * r[j].max(rj) {
                    return None;
                }
            }
        }
    }
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(j, wij) in w.row(i) {
            s[(i, j)] = (r[i] / r[j]).sqrt() * wij;
        }
    }
    // average away rounding asymmetry
    let st = s.transpose();
    Some((s + st) * 0.5)
}

/// `ln|I − ρW|` by dense LU factorisation.
pub fn log_det_lu(w: &WeightsMatrix, rho: f64) -> Result<f64> {
    let n = w.len();
    let a = DMatrix::identity(n, n) - w.to_dense() * rho;
    let lu = a.lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 {
            return Err(Error::Singular(format!("I - rho W is singular at rho = {rho}")));
        }
        acc += d.abs().ln();
    }
    Ok(acc)
}

#[derive(Debug, Clone, Serialize)]
pub struct SarFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub rho: f64,
    pub sigma2: f64,
    /// Standard errors of `beta` followed by that of `rho`.
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    pub pseudo_r2: f64,
    pub log_likelihood: f64,
    pub n: usize,
}

impl SarFit {
    pub fn se_rho(&self) -> f64 {
        self.se[self.beta.len()]
    }
}

/// Sufficient statistics of the concentrated likelihood: with `e0`, `eL` the
/// OLS residuals of `y` and `Wy` on `X`, `e(ρ) = e0 − ρ eL`.
struct Concentrated<'a> {
    ctx: &'a SarContext,
    n: f64,
    a: f64,
    b: f64,
    c: f64,
}

impl Concentrated<'_> {
    fn sigma2(&self, rho: f64) -> f64 {
        (self.a - 2.0 * rho * self.b + rho * rho * self.c) / self.n
    }

    fn value(&self, rho: f64) -> f64 {
        let n = self.n;
        -0.5 * n * ((2.0 * PI).ln() + 1.0) - 0.5 * n * self.sigma2(rho).ln() + self.ctx.log_det(rho)
    }

    fn derivative(&self, rho: f64) -> f64 {
        (self.b - rho * self.c) / self.sigma2(rho) + self.ctx.log_det_derivative(rho)
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        }
    }
    (0.5 * (lo + hi), lo, hi)
}

/// Fits the SAR model by full maximum likelihood.
pub fn fit_sar(data: &ModelMatrix, w: &WeightsMatrix) -> Result<SarFit> {
    fit_sar_with(data, &SarContext::new(w)?)
}

/// As [`fit_sar`] with a precomputed spectrum, for repeated fits on one `W`.
pub fn fit_sar_with(data: &ModelMatrix, ctx: &SarContext) -> Result<SarFit> {
    let n = data.n();
    if ctx.w.len() != n {
        return Err(Error::InvalidInput(format!("{n} observations but W has {} units", ctx.w.len())));
    }
    let ymean = data.y.mean();
    if data.y.iter().all(|&v| (v - ymean).abs() <= 1e-12 * ymean.abs().max(1.0)) {
        return Err(Error::ZeroVariance("outcome".into()));
    }
    let collinear = |e: Error| match e {
        Error::Singular(msg) => Error::Collinear(msg),
        other => other,
    };
    let fit0 = ols(&data.x, &data.y).map_err(collinear)?;
    let wy = DVector::from_vec(ctx.w.lag(data.y.as_slice()));
    let fit_l = ols(&data.x, &wy).map_err(collinear)?;
    let conc = Concentrated {
        ctx,
        n: n as f64,
        a: fit0.resid.dot(&fit0.resid),
        b: fit0.resid.dot(&fit_l.resid),
        c: fit_l.resid.dot(&fit_l.resid),
    };

    let rho = match ctx.bounds {
        None => 0.0,
        Some((lo, hi)) => {
            if !(lo < hi) {
                return Err(Error::Numerical("empty rho search interval".into()));
            }
            let (mut rho, mut a, mut b) = golden_max(|r| conc.value(r), lo, hi);
            if rho - lo < 1e-8 || hi - rho < 1e-8 {
                return Err(Error::Numerical(format!(
                    "rho search collapsed onto the interval boundary ({rho:.6})"
                )));
            }
            // bisection on the score sharpens the golden-section estimate
            a = (a - 1e-6).max(lo);
            b = (b + 1e-6).min(hi);
            let (da, db) = (conc.derivative(a), conc.derivative(b));
            if da > 0.0 && db < 0.0 {
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if conc.derivative(m) > 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                rho = 0.5 * (a + b);
            }
            rho
        }
    };

    let beta = &fit0.coef - &fit_l.coef * rho;
    let sigma2 = conc.sigma2(rho);
    if !(sigma2 > 0.0) {
        return Err(Error::Numerical("non-positive error variance".into()));
    }
    let log_likelihood = conc.value(rho);

    let (se_beta, se_rho) = standard_errors(data, ctx, &wy, &beta, rho, sigma2, ctx.bounds.is_some())?;
    let mut se = se_beta;
    se.push(se_rho);
    let coefs: Vec<f64> = beta.iter().copied().chain(std::iter::once(rho)).collect();
    let z: Vec<f64> = coefs.iter().zip(&se).map(|(c, s)| c / s).collect();
    let p_values = z.iter().map(|&z| normal_two_sided_p(z)).collect();

    let mut fit = SarFit {
        names: data.names.clone(),
        beta: beta.iter().copied().collect(),
        rho,
        sigma2,
        se,
        z,
        p_values,
        pseudo_r2: 0.0,
        log_likelihood,
        n,
    };
    let fitted = predict_sar(&fit, &data.x, &ctx.w)?;
    let r = correlation(data.y.as_slice(), &fitted);
    fit.pseudo_r2 = if r.is_finite() { r * r } else { 0.0 };
    Ok(fit)
}

/// Full log-likelihood `ℓ(β, ρ, σ²)`.
fn full_log_likelihood(data: &ModelMatrix, ctx: &SarContext, wy: &DVector<f64>, theta: &[f64]) -> f64 {
    let p = data.x.ncols();
    let n = data.n() as f64;
    let beta = DVector::from_column_slice(&theta[..p]);
    let rho = theta[p];
    let sigma2 = theta[p + 1];
    if sigma2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let e = &data.y - wy * rho - &data.x * beta;
    -0.5 * n * (2.0 * PI * sigma2).ln() - e.norm_squared() / (2.0 * sigma2) + ctx.log_det(rho)
}

/// Standard errors from the inverse of a central-difference Hessian of the
/// full log-likelihood. When ρ is not estimated its row is dropped and its
/// standard error is NaN.
fn standard_errors(
    data: &ModelMatrix,
    ctx: &SarContext,
    wy: &DVector<f64>,
    beta: &DVector<f64>,
    rho: f64,
    sigma2: f64,
    estimate_rho: bool,
) -> Result<(Vec<f64>, f64)> {
    let p = data.x.ncols();
    let mut theta: Vec<f64> = beta.iter().copied().collect();
    theta.push(rho);
    theta.push(sigma2);
    let free: Vec<usize> = (0..p + 2).filter(|&k| estimate_rho || k != p).collect();
    let m = free.len();
    let h: Vec<f64> = theta.iter().map(|t| 1e-4 * t.abs().max(1.0)).collect();
    let h_sigma = h[p + 1].min(0.5 * sigma2);
    let step = |k: usize| if k == p + 1 { h_sigma } else { h[k] };
    let f = |shifts: &[(usize, f64)]| {
        let mut t = theta.clone();
        for &(k, d) in shifts {
            t[k] += d;
        }
        full_log_likelihood(data, ctx, wy, &t)
    };
    let f0 = f(&[]);
    let mut hess = DMatrix::zeros(m, m);
    for (a, &i) in free.iter().enumerate() {
        let hi = step(i);
        hess[(a, a)] = (f(&[(i, hi)]) - 2.0 * f0 + f(&[(i, -hi)])) / (hi * hi);
        for (b, &j) in free.iter().enumerate().skip(a + 1) {
            let hj = step(j);
            let v = (f(&[(i, hi), (j, hj)]) - f(&[(i, hi), (j, -hj)]) - f(&[(i, -hi), (j, hj)])
                + f(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let info = -hess;
    let cov = info
        .try_inverse()
        .ok_or_else(|| Error::Singular("information matrix is not invertible".into()))?;
    let se_of = |a: usize| {
        let v = cov[(a, a)];
        if v > 0.0 { v.sqrt() } else { f64::NAN }
    };
    let se_beta: Vec<f64> = (0..p).map(se_of).collect();
    if se_beta.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("information matrix is not positive definite".into()));
    }
    let se_rho = if estimate_rho { se_of(p) } else { f64::NAN };
    Ok((se_beta, se_rho))
}

/// Reduced-form mean `(I − ρW)⁻¹ X β`.
pub fn predict_sar(fit: &SarFit, x: &DMatrix<f64>, w: &WeightsMatrix) -> Result<Vec<f64>> {
    let n = x.nrows();
    if x.ncols() != fit.beta.len() || w.len() != n {
        return Err(Error::InvalidInput(format!(
            "prediction needs {} columns and {n} weight units",
            fit.beta.len()
        )));
    }
    let xb = x * DVector::from_column_slice(&fit.beta);
    if fit.rho == 0.0 {
        return Ok(xb.iter().copied().collect());
    }
    let a = DMatrix::identity(n, n) - w.to_dense() * fit.rho;
    let out = a
        .lu()
        .solve(&xb)
        .ok_or_else(|| Error::Singular(format!("I - rho W is singular at rho = {}", fit.rho)))?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite reduced-form prediction".into()));
    }
    Ok(out.iter().copied().collect())
}
