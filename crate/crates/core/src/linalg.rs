//! Small dense linear-algebra and summary-statistics helpers shared by the
//! estimators.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Relative tolerance on the diagonal of R below which a design is treated
/// as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub resid: DVector<f64>,
}

impl OlsFit {
    pub fn ssr(&self) -> f64 {
        self.resid.norm_squared()
    }
}

/// Least squares through a Householder QR factorisation.
///
/// Returns the index of the first column found to be linearly dependent on
/// its predecessors as `Err(Singular)`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n < p {
        return Err(Error::Singular(format!("{n} observations for {p} columns")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if let Some(bad) = (0..p).find(|&i| r[(i, i)].abs() <= RANK_TOL * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular(format!("design column {bad} is linearly dependent")));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    let resid = y - x * &coef;
    Ok(OlsFit { coef, resid })
}

/// Appends a trailing column of ones (the intercept).
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let mut out = DMatrix::from_element(n, p + 1, 1.0);
    out.view_mut((0, 0), (n, p)).copy_from(x);
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Coefficient of determination of `pred` against `obs` (1 - SSR/SST).
pub fn r_squared(obs: &[f64], pred: &[f64]) -> f64 {
    let m = mean(obs);
    let sst: f64 = obs.iter().map(|y| (y - m).powi(2)).sum();
    let ssr: f64 = obs.iter().zip(pred).map(|(y, f)| (y - f).powi(2)).sum();
    1.0 - ssr / sst
}

pub fn normal_two_sided_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    let normal = Normal::standard();
    2.0 * normal.sf(z.abs())
}
