//! Double machine learning for the partially linear model
//! `Y = θD + g(X) + ε`, `D = m(X) + ν`.
//!
//! Nuisance functions are fitted out-of-fold with the in-crate boosting
//! learner ([`gbt`]); θ is the slope of the outcome residual on the treatment
//! residual. Group-wise effects rerun the same estimator inside covariate bins.

pub mod gbt;

use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{normal_two_sided_p, r_squared};
use crate::rng::{derive_seed_indexed, stream};
use crate::table::Table;
use crate::{Error, Result};

pub use gbt::{fit_gbt, GbtParams, GbtRegressor};

/// Propensity predictions for a binary treatment are clipped to this range.
pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);
/// Minimum observations per fold.
pub const MIN_PER_FOLD: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmlSpec {
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub folds: usize,
    pub gbt: GbtParams,
    pub seed: u64,
}

impl DmlSpec {
    pub fn new(outcome: &str, treatment: &str, covariates: &[&str]) -> Self {
        DmlSpec {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            folds: 5,
            gbt: GbtParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidInput(format!("folds = {} (need at least 2)", self.folds)));
        }
        if self.covariates.is_empty() {
            return Err(Error::InvalidInput("no covariates".into()));
        }
        for label in [&self.outcome, &self.treatment] {
            if self.covariates.contains(label) {
                return Err(Error::InvalidInput(format!("`{label}` is also listed as a covariate")));
            }
        }
        if self.outcome == self.treatment {
            return Err(Error::InvalidInput("outcome and treatment are the same column".into()));
        }
        self.gbt.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectKind {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "MTE")]
    Mte,
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectKind::Ate => "ATE",
            EffectKind::Mte => "MTE",
        })
    }
}

/// Out-of-fold residuals and nuisance fit quality.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub y: Vec<f64>,
    pub d: Vec<f64>,
    pub r2_g: f64,
    pub r2_m: f64,
    pub binary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaEstimate {
    pub theta: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmlFit {
    pub treatment: String,
    pub effect_kind: EffectKind,
    pub theta: f64,
    pub se: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
    pub r2_g: f64,
    pub r2_m: f64,
    #[serde(skip)]
    pub residuals: Residuals,
}

/// True when every value is 0 or 1 and both occur.
pub fn is_binary(d: &[f64]) -> bool {
    d.iter().all(|&v| v == 0.0 || v == 1.0) && d.contains(&0.0) && d.contains(&1.0)
}

fn design(data: &Table, names: &[String], rows: &[usize]) -> Result<DMatrix<f64>> {
    let cols: Vec<&[f64]> = names.iter().map(|c| data.column(c)).collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| cols[c][rows[r]]))
}

/// Seeded shuffle cut into `k` contiguous chunks; returns the fold of each row.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "dml/folds"));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos * k / n;
    }
    fold
}

/// Cross-fitted residuals `Ŷ = Y − ĝ(X)` and `D̂ = D − m̂(X)`.
pub fn crossfit_residuals(data: &Table, spec: &DmlSpec) -> Result<Residuals> {
    spec.validate()?;
    let n = data.len();
    let needed = MIN_PER_FOLD * spec.folds;
    if n < needed {
        return Err(Error::FoldTooSmall {
            n,
            folds: spec.folds,
            needed,
        });
    }
    let y = data.column(&spec.outcome)?;
    let d = data.column(&spec.treatment)?;
    let all: Vec<usize> = (0..n).collect();
    let x = design(data, &spec.covariates, &all)?;
    if y.iter().chain(d).chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in DML data".into()));
    }
    let binary = is_binary(d);
    let fold = fold_assignment(n, spec.folds, spec.seed);

    let per_fold: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = (0..spec.folds)
        .into_par_iter()
        .map(|k| -> Result<_> {
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let x_train = design(data, &spec.covariates, &train)?;
            let x_test = design(data, &spec.covariates, &test)?;
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let d_train: Vec<f64> = train.iter().map(|&i| d[i]).collect();
            let g = fit_gbt(&x_train, &y_train, &spec.gbt, derive_seed_indexed(spec.seed, "dml/g", k as u64))?;
            let m = fit_gbt(&x_train, &d_train, &spec.gbt, derive_seed_indexed(spec.seed, "dml/m", k as u64))?;
            let g_hat = g.predict(&x_test)?;
            let mut m_hat = m.predict(&x_test)?;
            if binary {
                m_hat.iter_mut().for_each(|v| *v = v.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1));
            }
            Ok((test, g_hat, m_hat))
        })
        .collect::<Result<_>>()?;

    let mut g_hat = vec![f64::NAN; n];
    let mut m_hat = vec![f64::NAN; n];
    for (rows, g, m) in per_fold {
        for (j, &i) in rows.iter().enumerate() {
            g_hat[i] = g[j];
            m_hat[i] = m[j];
        }
    }
    Ok(Residuals {
        y: y.iter().zip(&g_hat).map(|(a, b)| a - b).collect(),
        d: d.iter().zip(&m_hat).map(|(a, b)| a - b).collect(),
        r2_g: r_squared(y, &g_hat),
        r2_m: r_squared(d, &m_hat),
        binary,
    })
}

/// `θ = Σ D̂Ŷ / Σ D̂²` with the heteroskedasticity-robust standard error.
pub fn estimate_theta(y_res: &[f64], d_res: &[f64]) -> Result<ThetaEstimate> {
    if y_res.len() != d_res.len() || y_res.is_empty() {
        return Err(Error::InvalidInput("residual vectors must be nonempty and of equal length".into()));
    }
    let sdd: f64 = d_res.iter().map(|v| v * v).sum();
    if !(sdd > 0.0) || !sdd.is_finite() {
        return Err(Error::NoTreatmentVariation);
    }
    let sdy: f64 = d_res.iter().zip(y_res).map(|(d, y)| d * y).sum();
    let theta = sdy / sdd;
    let meat: f64 = d_res
        .iter()
        .zip(y_res)
        .map(|(d, y)| d * d * (y - theta * d).powi(2))
        .sum();
    let se = meat.sqrt() / sdd;
    let t = theta / se;
    Ok(ThetaEstimate {
        theta,
        se,
        t,
        p_value: normal_two_sided_p(t),
    })
}

pub fn run_dml(data: &Table, spec: &DmlSpec) -> Result<DmlFit> {
    let residuals = crossfit_residuals(data, spec)?;
    let est = estimate_theta(&residuals.y, &residuals.d)?;
    Ok(DmlFit {
        treatment: spec.treatment.clone(),
        effect_kind: if residuals.binary { EffectKind::Ate } else { EffectKind::Mte },
        theta: est.theta,
        se: est.se,
        t: est.t,
        p_value: est.p_value,
        n: data.len(),
        r2_g: residuals.r2_g,
        r2_m: residuals.r2_m,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Binning {
    /// Bins `[e_k, e_{k+1})`, the last one closed.
    Edges(Vec<f64>),
    /// Equal-count bins from sample quantiles.
    Quantiles(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grouping {
    pub covariate: String,
    pub binning: Binning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CateRow {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    /// `None` when the group was too small to estimate.
    pub fit: Option<DmlFit>,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn bin_edges(values: &[f64], binning: &Binning) -> Result<Vec<f64>> {
    match binning {
        Binning::Edges(e) => {
            if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput("bin edges must be strictly increasing, at least two".into()));
            }
            Ok(e.clone())
        }
        Binning::Quantiles(q) => {
            if *q == 0 {
                return Err(Error::InvalidInput("quantile count must be positive".into()));
            }
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            Ok((0..=*q).map(|k| quantile(&sorted, k as f64 / *q as f64)).collect())
        }
    }
}

/// Runs [`run_dml`] separately inside each bin of one covariate.
///
/// Undersized or empty groups are kept with `fit = None` and a warning, or
/// rejected when `strict`.
pub fn cate_by_groups(data: &Table, spec: &DmlSpec, grouping: &Grouping, strict: bool) -> Result<Vec<CateRow>> {
    spec.validate()?;
    let values = data.column(&grouping.covariate)?;
    let edges = bin_edges(values, &grouping.binning)?;
    let bins = edges.len() - 1;
    let prefix = match grouping.binning {
        Binning::Edges(_) => "B",
        Binning::Quantiles(_) => "Q",
    };
    let members: Vec<Vec<usize>> = (0..bins)
        .map(|b| {
            let (lo, hi) = (edges[b], edges[b + 1]);
            (0..data.len())
                .filter(|&i| {
                    let v = values[i];
                    v >= lo && (v < hi || (b + 1 == bins && v <= hi))
                })
                .collect()
        })
        .collect();
    let needed = MIN_PER_FOLD * spec.folds;
    members
        .into_par_iter()
        .enumerate()
        .map(|(b, rows)| {
            let group = format!("{prefix}{}", b + 1);
            let (lower, upper) = (edges[b], edges[b + 1]);
            let fit = if rows.len() < needed {
                if strict {
                    return Err(Error::FoldTooSmall {
                        n: rows.len(),
                        folds: spec.folds,
                        needed,
                    });
                }
                log::warn!(
                    "CATE group {group} of `{}` in [{lower}, {upper}] has {} rows (< {needed}); skipped",
                    grouping.covariate,
                    rows.len()
                );
                None
            } else {
                Some(run_dml(&data.subset(&rows), spec)?)
            };
            Ok(CateRow {
                group,
                lower,
                upper,
                n: rows.len(),
                fit,
            })
        })
        .collect()
}
