//! Report table layouts. Every CSV starts with a `#` provenance line
//! carrying the config hash and seed.

use std::io::Write;

use serde::Serialize;

use crate::dmlcausal::{CateRow, DmlFit};
use crate::sarmodel::SarFit;
use crate::spatialstats::{MoranResult, VifReport};

/// `# looplens config_hash=<hash> seed=<seed>`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn write_header<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "# looplens config_hash={} seed={}", self.config_hash, self.seed)
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".to_string()
    }
}

pub fn write_moran<W: Write>(out: &mut W, rows: &[(String, MoranResult)]) -> std::io::Result<()> {
    writeln!(out, "Scale,MoransI,Expected,p,NPerm")?;
    for (scale, m) in rows {
        writeln!(
            out,
            "{scale},{},{},{},{}",
            num(m.i),
            num(m.expected),
            m.p_value.map_or("NA".into(), num),
            m.n_permutations
        )?;
    }
    Ok(())
}

pub fn write_vif<W: Write>(out: &mut W, report: &VifReport) -> std::io::Result<()> {
    writeln!(out, "Variable,VIF,1/VIF")?;
    for e in &report.entries {
        writeln!(out, "{},{},{}", e.name, num(e.vif), num(1.0 / e.vif))?;
    }
    writeln!(out, "Mean VIF,{},", num(report.mean_vif))
}

pub fn write_sar<W: Write>(out: &mut W, fit: &SarFit) -> std::io::Result<()> {
    writeln!(out, "Variable,Coef,StdErr,z,p")?;
    let p = fit.beta.len();
    for k in 0..p {
        writeln!(
            out,
            "{},{},{},{},{}",
            fit.names[k],
            num(fit.beta[k]),
            num(fit.se[k]),
            num(fit.z[k]),
            num(fit.p_values[k])
        )?;
    }
    writeln!(
        out,
        "SpatialLag,{},{},{},{}",
        num(fit.rho),
        num(fit.se[p]),
        num(fit.z[p]),
        num(fit.p_values[p])
    )?;
    writeln!(out, "PseudoR2,{},,,", num(fit.pseudo_r2))?;
    writeln!(out, "N,{},,,", fit.n)
}

pub fn write_dml<W: Write>(out: &mut W, fits: &[DmlFit]) -> std::io::Result<()> {
    writeln!(out, "Treatment,EffectKind,Coef,StdErr,t,p,N")?;
    for f in fits {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.treatment,
            f.effect_kind,
            num(f.theta),
            num(f.se),
            num(f.t),
            num(f.p_value),
            f.n
        )?;
    }
    Ok(())
}

pub fn write_cate<W: Write>(out: &mut W, rows: &[CateRow]) -> std::io::Result<()> {
    writeln!(out, "Group,Lower,Upper,N,Coef,StdErr")?;
    for r in rows {
        let (coef, se) = match &r.fit {
            Some(f) => (num(f.theta), num(f.se)),
            None => ("NA".into(), "NA".into()),
        };
        writeln!(out, "{},{},{},{},{coef},{se}", r.group, num(r.lower), num(r.upper), r.n)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptive {
    pub variable: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Descriptive {
    pub fn of(variable: &str, v: &[f64]) -> Descriptive {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Descriptive {
            variable: variable.to_string(),
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn write_descriptives<W: Write>(out: &mut W, rows: &[Descriptive]) -> std::io::Result<()> {
    writeln!(out, "Variable,Mean,Std,Min,Max")?;
    for d in rows {
        writeln!(out, "{},{},{},{},{}", d.variable, num(d.mean), num(d.std), num(d.min), num(d.max))?;
    }
    Ok(())
}
