//! Configuration, pipeline staging and report emission behind the CLI.

pub mod config;
pub mod pipeline;
pub mod tables;

use std::fs;
use std::path::{Path, PathBuf};

pub use config::{RunConfig, Stage, VarSpec};
pub use pipeline::{cmd_analyze, cmd_detect, cmd_run, AnalysisSummary, DetectManifest, StageError};

use crate::synthlab::{gen_city, write_city, SynthScenario};
use crate::{Error, Result};

/// Generates a synthetic city into `dir` together with a `config.json`
/// that runs the full pipeline on it (outputs under `dir/out`).
pub fn cmd_synth(scenario: &SynthScenario, dir: &Path) -> Result<Vec<PathBuf>> {
    scenario.validate()?;
    let city = gen_city(scenario)?;
    write_city(&city, dir)?;
    let mut cfg = RunConfig::new(PathBuf::from("out"));
    cfg.paths.events = Some("events.csv".into());
    cfg.paths.stations = Some("stations.csv".into());
    cfg.paths.streets = Some("streets.geojson".into());
    cfg.paths.covariates_station = Some("covariates_station.csv".into());
    cfg.paths.covariates_street = Some("covariates_street.csv".into());
    cfg.grid.origin_lon = Some(scenario.origin_lon);
    cfg.grid.origin_lat = Some(scenario.origin_lat);
    cfg.grid.cell_size = scenario.cell_size;
    cfg.window_days = scenario.days;
    cfg.seed = scenario.seed;
    // small synthetic cities leave about 30 units per CATE tercile
    cfg.analysis.dml.folds = 3;
    let config_path = dir.join("config.json");
    let text = serde_json::to_string_pretty(&cfg)?;
    fs::write(&config_path, text + "\n").map_err(|e| Error::io(&config_path, e))?;
    Ok([
        "events.csv",
        "events.truth.json",
        "stations.csv",
        "streets.geojson",
        "covariates_station.csv",
        "covariates_street.csv",
        "config.json",
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect())
}
