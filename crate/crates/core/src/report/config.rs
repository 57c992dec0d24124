use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dmlcausal::{Binning, GbtParams};
use crate::ingest::ChainParams;
use crate::loopdetect::Scale;
use crate::spatialstats::WeightsMode;
use crate::table::Table;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default)]
    pub events: Option<PathBuf>,
    #[serde(default)]
    pub stations: Option<PathBuf>,
    #[serde(default)]
    pub streets: Option<PathBuf>,
    #[serde(default)]
    pub covariates_station: Option<PathBuf>,
    #[serde(default)]
    pub covariates_street: Option<PathBuf>,
    /// Where `analyze` reads intensity tables; defaults to `output`.
    #[serde(default)]
    pub intensity_dir: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to the lower-left corner of the station and street extent.
    pub origin_lon: Option<f64>,
    pub origin_lat: Option<f64>,
    pub cell_size: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            origin_lon: None,
            origin_lat: None,
            cell_size: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CateConfig {
    pub treatment: String,
    pub covariate: String,
    pub binning: Binning,
}

/// Model specification for one unit scale. Variables are column names,
/// optionally wrapped as `log1p(column)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleModel {
    pub weights: WeightsMode,
    pub sar: Vec<String>,
    pub dml_treatments: Vec<String>,
    #[serde(default)]
    pub cate: Vec<CateConfig>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

const SAR_COMMON: [&str; 12] = [
    "average_age",
    "fixed_occ_pct",
    "nonresident_pct",
    "log1p(car_ownership)",
    "log1p(work_poi)",
    "log1p(residential_poi)",
    "log1p(commercial_poi)",
    "central",
    "university",
    "cbd",
    "hub",
    "log1p(bus_stations)",
];

const TREATMENTS_COMMON: [&str; 8] = [
    "log1p(work_poi)",
    "log1p(residential_poi)",
    "log1p(commercial_poi)",
    "central",
    "university",
    "cbd",
    "hub",
    "log1p(bus_stations)",
];

impl ScaleModel {
    pub fn station_default() -> Self {
        let mut sar = strings(&SAR_COMMON);
        sar.push("log1p(metro_ridership)".into());
        let mut dml = strings(&TREATMENTS_COMMON);
        dml.push("log1p(metro_ridership)".into());
        ScaleModel {
            weights: WeightsMode::Knn { k: 5 },
            sar,
            dml_treatments: dml,
            cate: vec![
                CateConfig {
                    treatment: "log1p(residential_poi)".into(),
                    covariate: "metro_ridership".into(),
                    binning: Binning::Quantiles(3),
                },
                CateConfig {
                    treatment: "log1p(residential_poi)".into(),
                    covariate: "bus_stations".into(),
                    binning: Binning::Quantiles(3),
                },
            ],
        }
    }

    pub fn street_default() -> Self {
        ScaleModel {
            weights: WeightsMode::QueenContiguity,
            sar: strings(&SAR_COMMON),
            dml_treatments: strings(&TREATMENTS_COMMON),
            cate: vec![
                CateConfig {
                    treatment: "log1p(residential_poi)".into(),
                    covariate: "average_age".into(),
                    binning: Binning::Edges(vec![0.0, 45.0, 50.0, 55.0, 120.0]),
                },
                CateConfig {
                    treatment: "log1p(residential_poi)".into(),
                    covariate: "car_ownership".into(),
                    binning: Binning::Quantiles(3),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlConfig {
    pub folds: usize,
    pub covariates: Vec<String>,
    pub gbt: GbtParams,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            folds: 5,
            covariates: strings(&["average_age", "fixed_occ_pct", "nonresident_pct", "car_ownership"]),
            gbt: GbtParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub scales: Vec<Scale>,
    pub moran_permutations: usize,
    pub station: ScaleModel,
    pub street: ScaleModel,
    pub dml: DmlConfig,
    /// Fail instead of skipping undersized CATE groups.
    pub strict_cate: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            scales: vec![Scale::Station, Scale::Street],
            moran_permutations: 999,
            station: ScaleModel::station_default(),
            street: ScaleModel::street_default(),
            dml: DmlConfig::default(),
            strict_cate: false,
        }
    }
}

impl AnalysisConfig {
    pub fn model(&self, scale: Scale) -> Result<&ScaleModel> {
        match scale {
            Scale::Station => Ok(&self.station),
            Scale::Street => Ok(&self.street),
            Scale::Grid => Err(Error::Config("grid scale has no covariates to analyze".into())),
        }
    }
}

fn default_window() -> u32 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub thresholds: ChainParams,
    /// Observation window; intensities are loops per day over it.
    #[serde(default = "default_window")]
    pub window_days: u32,
    /// Abort on the first malformed event row instead of skipping it.
    #[serde(default)]
    pub strict_ingest: bool,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Which command a configuration must support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Detect,
    Analyze,
    Run,
}

impl RunConfig {
    pub fn new(output: PathBuf) -> Self {
        RunConfig {
            paths: PathsConfig {
                events: None,
                stations: None,
                streets: None,
                covariates_station: None,
                covariates_street: None,
                intensity_dir: None,
                output,
            },
            grid: GridConfig::default(),
            thresholds: ChainParams::default(),
            window_days: default_window(),
            strict_ingest: false,
            analysis: AnalysisConfig::default(),
            seed: 0,
            base_dir: PathBuf::from("."),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output)
    }

    pub fn intensity_dir(&self) -> PathBuf {
        self.resolve(self.paths.intensity_dir.as_ref().unwrap_or(&self.paths.output))
    }

    pub fn path(&self, p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        p.as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("no {what} path configured")))
    }

    pub fn covariates_path(&self, scale: Scale) -> Result<PathBuf> {
        match scale {
            Scale::Station => self.path(&self.paths.covariates_station, "covariates_station"),
            Scale::Street => self.path(&self.paths.covariates_street, "covariates_street"),
            Scale::Grid => Err(Error::Config("grid scale has no covariates".into())),
        }
    }

    /// Checks value ranges and that every path the stage reads exists.
    pub fn validate(&self, stage: Stage) -> Result<()> {
        if !(self.grid.cell_size > 0.0 && self.grid.cell_size.is_finite()) {
            return Err(Error::Config(format!("cell_size must be positive, got {}", self.grid.cell_size)));
        }
        if self.window_days == 0 {
            return Err(Error::Config("window_days must be positive".into()));
        }
        if self.grid.origin_lon.is_some() != self.grid.origin_lat.is_some() {
            return Err(Error::Config("grid origin needs both origin_lon and origin_lat".into()));
        }
        if !(self.thresholds.s_sched > 0.0 && self.thresholds.s_stay > 0.0) {
            return Err(Error::Config("thresholds must be positive".into()));
        }
        let must_exist = |p: PathBuf| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} does not exist", p.display())))
            }
        };
        let scales = &self.analysis.scales;
        let needs = |s: Scale| scales.contains(&s);
        if matches!(stage, Stage::Detect | Stage::Run) {
            must_exist(self.path(&self.paths.events, "events")?)?;
        }
        if let Some(p) = &self.paths.stations {
            must_exist(self.resolve(p))?;
        }
        if let Some(p) = &self.paths.streets {
            must_exist(self.resolve(p))?;
        }
        if matches!(stage, Stage::Analyze | Stage::Run) {
            if self.analysis.moran_permutations < 19 {
                return Err(Error::Config("moran_permutations must be at least 19".into()));
            }
            for &s in scales {
                self.analysis.model(s)?;
                must_exist(self.covariates_path(s)?)?;
                for c in &self.analysis.model(s)?.cate {
                    VarSpec::parse(&c.treatment)?;
                }
            }
            if needs(Scale::Station) {
                self.path(&self.paths.stations, "stations")?;
            }
            if needs(Scale::Street) {
                self.path(&self.paths.streets, "streets")?;
            }
            if stage == Stage::Analyze {
                for &s in scales {
                    must_exist(self.intensity_dir().join(format!("intensity_{s}.csv")))?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical (key-sorted, compact) JSON form. The output
    /// directory is left out: it decides where reports go, not what they say.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["paths"]["output"] = serde_json::Value::Null;
        let canonical = value.to_string();
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// A model variable: a covariate column, optionally `log1p`-transformed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSpec {
    pub label: String,
    pub column: String,
    pub log1p: bool,
}

impl VarSpec {
    pub fn parse(s: &str) -> Result<VarSpec> {
        let s = s.trim();
        let (column, log1p) = match s.strip_prefix("log1p(").and_then(|r| r.strip_suffix(')')) {
            Some(inner) => (inner.trim(), true),
            None => (s, false),
        };
        if column.is_empty() || column.contains(['(', ')']) {
            return Err(Error::Config(format!("cannot parse variable `{s}`")));
        }
        Ok(VarSpec {
            label: s.to_string(),
            column: column.to_string(),
            log1p,
        })
    }

    pub fn values(&self, table: &Table) -> Result<Vec<f64>> {
        let raw = table.column(&self.column)?;
        if !self.log1p {
            return Ok(raw.to_vec());
        }
        raw.iter()
            .map(|&v| {
                if v > -1.0 {
                    Ok(v.ln_1p())
                } else {
                    Err(Error::InvalidInput(format!("log1p undefined for `{}` = {v}", self.column)))
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var_spec_parsing() {
        let v = VarSpec::parse("log1p(work_poi)").unwrap();
        assert_eq!((v.column.as_str(), v.log1p), ("work_poi", true));
        let v = VarSpec::parse("hub").unwrap();
        assert!(!v.log1p);
        assert!(VarSpec::parse("log(x)").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"paths": {"output": "out"}, "bogus": 1}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
        let text = r#"{"paths": {"output": "out"}, "thresholds": {"s_stay": 50}}"#;
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.thresholds.s_sched, 500.0);
        assert_eq!(cfg.thresholds.s_stay, 50.0);
        assert_eq!(cfg.window_days, 7);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::new("out".into());
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        // neither the base nor the output directory enters the hash
        b.seed = 0;
        b.base_dir = "/elsewhere".into();
        b.paths.output = "/tmp/other".into();
        assert_eq!(a.hash(), b.hash());
    }
}
