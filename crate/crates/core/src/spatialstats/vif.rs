use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::linalg::{ols, with_intercept};
use crate::{Error, Result};

/// `1 - R²` at or below this is treated as exact collinearity.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifEntry {
    pub name: String,
    pub vif: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VifReport {
    pub entries: Vec<VifEntry>,
    pub mean_vif: f64,
}

/// `VIF_j = 1 / (1 − R²_j)`, with `R²_j` from regressing column `j` on the
/// remaining columns plus an intercept.
pub fn vif(x: &DMatrix<f64>, names: &[String]) -> Result<VifReport> {
    let (n, p) = x.shape();
    if names.len() != p {
        return Err(Error::InvalidInput(format!("{} names for {p} columns", names.len())));
    }
    if p < 2 || n <= p {
        return Err(Error::InvalidInput(format!("VIF needs n > p >= 2 (n={n}, p={p})")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in design".into()));
    }
    for (j, name) in names.iter().enumerate() {
        let col = x.column(j);
        if col.iter().all(|&v| v == col[0]) {
            return Err(Error::ZeroVariance(name.clone()));
        }
    }

    let mut entries = Vec::with_capacity(p);
    for (j, name) in names.iter().enumerate() {
        let target = DVector::from_iterator(n, x.column(j).iter().copied());
        let others = x.clone().remove_column(j);
        let fit = ols(&with_intercept(&others), &target).map_err(|_| Error::Collinear(name.clone()))?;
        let mean = target.mean();
        let sst: f64 = target.iter().map(|v| (v - mean).powi(2)).sum();
        let unexplained = fit.ssr() / sst;
        if unexplained <= COLLINEAR_TOL {
            return Err(Error::Collinear(name.clone()));
        }
        entries.push(VifEntry {
            name: name.clone(),
            vif: 1.0 / unexplained,
        });
    }
    let mean_vif = entries.iter().map(|e| e.vif).sum::<f64>() / p as f64;
    Ok(VifReport { entries, mean_vif })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("x{i}")).collect()
    }

    #[test]
    fn orthogonal_centered_columns_have_unit_vif() {
        // Hadamard-style contrast columns: centered and mutually orthogonal
        let x = DMatrix::from_row_slice(
            8,
            3,
            &[
                1.0, 1.0, 1.0, //
                -1.0, 1.0, -1.0, //
                1.0, -1.0, -1.0, //
                -1.0, -1.0, 1.0, //
                1.0, 1.0, -1.0, //
                -1.0, 1.0, 1.0, //
                1.0, -1.0, 1.0, //
                -1.0, -1.0, -1.0,
            ],
        );
        let r = vif(&x, &names(3)).unwrap();
        for e in &r.entries {
            assert!((e.vif - 1.0).abs() < 1e-9, "{e:?}");
        }
        assert!((r.mean_vif - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_column_is_named() {
        let x = DMatrix::from_row_slice(5, 3, &[
            1.0, 1.0, 0.3, 2.0, 2.0, 0.1, 3.0, 3.0, 0.9, 4.0, 4.0, 0.4, 5.0, 5.0, 0.7,
        ]);
        match vif(&x, &names(3)) {
            Err(Error::Collinear(c)) => assert_eq!(c, "x0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 3.0, 1.0, 1.0, 1.0, 5.0]);
        assert!(matches!(vif(&x, &names(2)), Err(Error::ZeroVariance(_))));
    }
}
