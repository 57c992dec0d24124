use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::WeightsMatrix;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoranResult {
    #[serde(rename = "I")]
    pub i: f64,
    /// `-1 / (n - 1)`.
    pub expected: f64,
    #[serde(rename = "p")]
    pub p_value: Option<f64>,
    #[serde(rename = "n_perm")]
    pub n_permutations: usize,
    pub seed: Option<u64>,
}

struct Prepared {
    z: Vec<f64>,
    scale: f64,
    expected: f64,
}

fn prepare(y: &[f64], w: &WeightsMatrix) -> Result<Prepared> {
    let n = y.len();
    if n != w.len() {
        return Err(Error::InvalidInput(format!("{n} values for {} units", w.len())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("Moran's I needs at least 2 units".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in y".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let m2: f64 = z.iter().map(|v| v * v).sum();
    if m2 == 0.0 || m2 <= 1e-24 * y.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::ZeroVariance("y".into()));
    }
    let s0 = w.s0();
    if s0 == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(Prepared {
        z,
        scale: n as f64 / (s0 * m2),
        expected: -1.0 / (n as f64 - 1.0),
    })
}

fn cross_product(w: &WeightsMatrix, z: &[f64]) -> f64 {
    (0..z.len())
        .map(|i| z[i] * w.row(i).iter().map(|&(j, wij)| wij * z[j]).sum::<f64>())
        .sum()
}

/// Global Moran's I
/// `I = n / S0 · Σᵢ Σⱼ wᵢⱼ (yᵢ − ȳ)(yⱼ − ȳ) / Σᵢ (yᵢ − ȳ)²`.
pub fn morans_i(y: &[f64], w: &WeightsMatrix) -> Result<MoranResult> {
    let p = prepare(y, w)?;
    Ok(MoranResult {
        i: p.scale * cross_product(w, &p.z),
        expected: p.expected,
        p_value: None,
        n_permutations: 0,
        seed: None,
    })
}

/// Two-sided permutation test centred on `E[I]`:
/// `p = (1 + #{|I* − E| ≥ |I − E|}) / (n_perm + 1)`.
///
/// Permutation `k` shuffles with its own seed derived from `(seed, k)`, so
/// the result does not depend on the thread count.
pub fn morans_permutation_test(y: &[f64], w: &WeightsMatrix, n_perm: usize, seed: u64) -> Result<MoranResult> {
    if n_perm < 19 {
        return Err(Error::InvalidInput(format!("n_perm must be at least 19, got {n_perm}")));
    }
    let p = prepare(y, w)?;
    let observed = p.scale * cross_product(w, &p.z);
    let dev = (observed - p.expected).abs();
    let tol = 1e-12 * dev.max(1.0);
    let extreme = (0..n_perm as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; p.z.len()],
            |buf, k| {
                buf.copy_from_slice(&p.z);
                let mut r = rng::stream_indexed(seed, "moran/perm", k);
                buf.shuffle(&mut r);
                let stat = p.scale * cross_product(w, buf);
                (stat - p.expected).abs() >= dev - tol
            },
        )
        .filter(|&hit| hit)
        .count();
    Ok(MoranResult {
        i: observed,
        expected: p.expected,
        p_value: Some((1 + extreme) as f64 / (n_perm + 1) as f64),
        n_permutations: n_perm,
        seed: Some(seed),
    })
}
