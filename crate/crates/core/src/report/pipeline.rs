use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, Stage, VarSpec};
use super::tables::{self, Descriptive, Provenance};
use crate::dmlcausal::{cate_by_groups, run_dml, DmlFit, DmlSpec, Grouping};
use crate::gridmap::{self, BBox, GridSpec, Station, Street};
use crate::ingest::{build_chains, read_events_file, ChainStats};
use crate::loopdetect::{aggregate_intensity, detect_all, self_loop_proportion, write_loop_events, Scale};
use crate::rng::derive_seed;
use crate::sarmodel::{fit_sar, ModelMatrix};
use crate::spatialstats::{build_weights, morans_permutation_test, vif, MoranResult, UnitGeometry, WeightsMatrix};
use crate::table::Table;
use crate::{Error, Result};

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    /// 2 for input and usage problems, 1 for internal numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_input_error() {
            2
        } else {
            1
        }
    }
}

trait Tag<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

type StageResult<T> = std::result::Result<T, StageError>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_csv_report(
    path: &Path,
    prov: &Provenance,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    prov.write_header(&mut out).map_err(io)?;
    body(&mut out).map_err(io)?;
    out.flush().map_err(io)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

fn load_units(cfg: &RunConfig) -> Result<(Vec<Station>, Vec<Street>)> {
    let stations = match &cfg.paths.stations {
        Some(p) => gridmap::read_stations_file(&cfg.resolve(p))?,
        None => Vec::new(),
    };
    let streets = match &cfg.paths.streets {
        Some(p) => gridmap::read_streets_file(&cfg.resolve(p))?,
        None => Vec::new(),
    };
    Ok((stations, streets))
}

fn units_bbox(stations: &[Station], streets: &[Street]) -> Option<BBox> {
    let pts = stations.iter().map(|s| (s.lon, s.lat));
    let station_box = BBox::from_points(pts);
    let street_box = streets.iter().map(|s| s.polygon.bbox()).reduce(|a, b| a.union(&b));
    match (station_box, street_box) {
        (Some(a), Some(b)) => Some(a.union(&b)),
        (a, b) => a.or(b),
    }
}

/// Configured origin, else the lower-left corner of the unit extent, else
/// of `fallback`.
fn grid_spec(cfg: &RunConfig, units: Option<BBox>, fallback: Option<BBox>) -> Result<GridSpec> {
    let (lon, lat) = match (cfg.grid.origin_lon, cfg.grid.origin_lat) {
        (Some(lon), Some(lat)) => (lon, lat),
        _ => {
            let b = units
                .or(fallback)
                .ok_or_else(|| Error::Config("cannot infer a grid origin without units or events".into()))?;
            (b.min_lon, b.min_lat)
        }
    };
    GridSpec::new(lon, lat, cfg.grid.cell_size)
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectManifest {
    pub config_hash: String,
    pub seed: u64,
    pub rejected_rows: usize,
    pub chains: ChainStats,
    pub grid: GridSpec,
    pub observation_days: u32,
    pub total_loops: usize,
    pub self_loop_proportion: f64,
    /// Rows written per intensity table.
    pub units: BTreeMap<String, usize>,
}

/// ingest → gridmap → loopdetect; writes `loops.csv`, `intensity_*.csv`
/// and `manifest.json` into the output directory.
pub fn cmd_detect(cfg: &RunConfig) -> StageResult<DetectManifest> {
    cfg.validate(Stage::Detect).stage("config")?;
    detect_inner(cfg)
}

fn detect_inner(cfg: &RunConfig) -> StageResult<DetectManifest> {
    let prov = provenance(cfg);
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).stage("output")?;

    let events_path = cfg.path(&cfg.paths.events, "events").stage("ingest")?;
    let parsed = read_events_file(&events_path, cfg.strict_ingest).stage("ingest")?;
    if parsed.events.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no valid events", events_path.display()))).stage("ingest");
    }
    let event_box = BBox::from_points(parsed.events.iter().map(|e| (e.lon, e.lat)));
    let rejected = parsed.rejected;
    let built = build_chains(parsed.events, cfg.thresholds).stage("ingest")?;

    let (stations, streets) = load_units(cfg).stage("gridmap")?;
    let units_box = units_bbox(&stations, &streets);
    let spec = grid_spec(cfg, units_box, event_box).stage("gridmap")?;
    let map_box = units_box.or(event_box).expect("events are nonempty");
    let unit_map = gridmap::build_unit_map(stations, streets, spec, map_box).stage("gridmap")?;

    let loops = detect_all(&built.chains, &spec).stage("loopdetect")?;
    let proportion = self_loop_proportion(&loops, &built.chains).stage("loopdetect")?;

    let loops_path = out_dir.join("loops.csv");
    write_csv_report(&loops_path, &prov, |o| write_loop_events(&loops, o)).stage("loopdetect")?;
    let mut units = BTreeMap::new();
    for scale in [Scale::Grid, Scale::Station, Scale::Street] {
        let empty = match scale {
            Scale::Grid => false,
            Scale::Station => unit_map.stations.is_empty(),
            Scale::Street => unit_map.streets.is_empty(),
        };
        if empty {
            continue;
        }
        let table = aggregate_intensity(&loops, &unit_map, scale, cfg.window_days).stage("aggregate")?;
        let path = out_dir.join(format!("intensity_{scale}.csv"));
        write_csv_report(&path, &prov, |o| table.write_csv(o)).stage("aggregate")?;
        units.insert(scale.to_string(), table.rows.len());
    }

    let manifest = DetectManifest {
        config_hash: prov.config_hash.clone(),
        seed: cfg.seed,
        rejected_rows: rejected,
        chains: built.stats,
        grid: spec,
        observation_days: cfg.window_days,
        total_loops: loops.len(),
        self_loop_proportion: proportion,
        units,
    };
    write_json(&out_dir.join("manifest.json"), &manifest).stage("output")?;
    Ok(manifest)
}

#[derive(Debug, Clone, Serialize)]
pub struct CateSummary {
    pub treatment: String,
    pub covariate: String,
    pub file: String,
    pub groups: Vec<CateGroupSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CateGroupSummary {
    pub group: String,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub coef: Option<f64>,
    pub std_err: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SarSummary {
    pub rho: f64,
    pub rho_std_err: f64,
    pub pseudo_r2: f64,
    pub log_likelihood: f64,
    pub sigma2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntensityDistribution {
    pub mean: f64,
    pub std: f64,
    pub quantiles: [f64; 5],
    /// Equal-width bins over `[min, max]`.
    pub histogram_edges: Vec<f64>,
    pub histogram_counts: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSummary {
    pub scale: Scale,
    pub n: usize,
    pub isolated_units: usize,
    pub intensity: IntensityDistribution,
    pub moran: MoranResult,
    pub mean_vif: f64,
    pub sar: SarSummary,
    pub dml: Vec<DmlFit>,
    pub cate: Vec<CateSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisSummary {
    pub config_hash: String,
    pub seed: u64,
    pub scales: Vec<ScaleSummary>,
}

fn distribution(v: &[f64]) -> IntensityDistribution {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let d = Descriptive::of("intensity", v);
    let q = |p| crate::dmlcausal::quantile(&sorted, p);
    let bins = 10;
    let (lo, hi) = (d.min, d.max);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for &x in v {
        let b = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1;
    }
    IntensityDistribution {
        mean: d.mean,
        std: d.std,
        quantiles: [q(0.0), q(0.25), q(0.5), q(0.75), q(1.0)],
        histogram_edges: (0..=bins).map(|k| lo + width * k as f64).collect(),
        histogram_counts: counts,
    }
}

fn file_token(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Spatial weights for the units of `ids`, in that order.
fn scale_weights(cfg: &RunConfig, scale: Scale, ids: &[String], spec: &GridSpec, units: &(Vec<Station>, Vec<Street>)) -> Result<WeightsMatrix> {
    let mode = cfg.analysis.model(scale)?.weights;
    let missing = |id: &str| Error::UnitMismatch(format!("`{id}` has no {scale} geometry"));
    match scale {
        Scale::Station => {
            let by_id: HashMap<&str, &Station> = units.0.iter().map(|s| (s.id.as_str(), s)).collect();
            let pts = ids
                .iter()
                .map(|id| {
                    let s = by_id.get(id.as_str()).ok_or_else(|| missing(id))?;
                    spec.project(s.lon, s.lat)
                })
                .collect::<Result<Vec<_>>>()?;
            build_weights(UnitGeometry::Points(&pts), mode)
        }
        Scale::Street => {
            let by_id: HashMap<&str, &Street> = units.1.iter().map(|s| (s.id.as_str(), s)).collect();
            let polys = ids
                .iter()
                .map(|id| by_id.get(id.as_str()).map(|s| s.polygon.clone()).ok_or_else(|| missing(id)))
                .collect::<Result<Vec<_>>>()?;
            build_weights(UnitGeometry::Polygons(&polys), mode)
        }
        Scale::Grid => Err(Error::Config("grid scale is not analyzed".into())),
    }
}

fn analyze_scale(
    cfg: &RunConfig,
    scale: Scale,
    spec: &GridSpec,
    units: &(Vec<Station>, Vec<Street>),
    prov: &Provenance,
    intensity_dir: &Path,
    out_dir: &Path,
) -> StageResult<(ScaleSummary, MoranResult)> {
    let model = cfg.analysis.model(scale).stage("config")?;
    let intensity_path = intensity_dir.join(format!("intensity_{scale}.csv"));
    let intensity = Table::read_csv_file(&intensity_path).stage("join")?;
    let y_raw = intensity.column("intensity").stage("join")?.to_vec();
    let cov_path = cfg.covariates_path(scale).stage("config")?;
    let cov = Table::read_csv_file(&cov_path).stage("join")?;

    let sar_vars: Vec<VarSpec> = model.sar.iter().map(|s| VarSpec::parse(s)).collect::<Result<_>>().stage("config")?;
    let treatments: Vec<VarSpec> =
        model.dml_treatments.iter().map(|s| VarSpec::parse(s)).collect::<Result<_>>().stage("config")?;
    let mut needed: Vec<&str> = cfg.analysis.dml.covariates.iter().map(String::as_str).collect();
    needed.extend(sar_vars.iter().map(|v| v.column.as_str()));
    needed.extend(treatments.iter().map(|v| v.column.as_str()));
    for c in &model.cate {
        needed.push(c.covariate.as_str());
    }
    for name in needed {
        if !cov.has_column(name) {
            return Err(Error::MissingColumn(format!("{name}` in `{}", cov_path.display()))).stage("join");
        }
    }
    let cov = cov.align_to(intensity.ids()).stage("join")?;
    let n = cov.len();

    // Moran's I on raw intensity
    let w = scale_weights(cfg, scale, intensity.ids(), spec, units).stage("weights")?;
    let moran_seed = derive_seed(cfg.seed, &format!("moran/{scale}"));
    let moran = morans_permutation_test(&y_raw, &w, cfg.analysis.moran_permutations, moran_seed).stage("moran")?;
    let mut moran_json = serde_json::to_value(&moran).map_err(Error::from).stage("moran")?;
    moran_json["config_hash"] = prov.config_hash.clone().into();
    write_json(&out_dir.join(format!("moran_{scale}.json")), &moran_json).stage("moran")?;

    // VIF on the untransformed regressors
    let raw_names: Vec<String> = sar_vars.iter().map(|v| v.column.clone()).collect();
    let raw_cols: Vec<&[f64]> = raw_names.iter().map(|c| cov.column(c)).collect::<Result<_>>().stage("vif")?;
    let raw = DMatrix::from_fn(n, raw_cols.len(), |r, c| raw_cols[c][r]);
    let vif_report = vif(&raw, &raw_names).stage("vif")?;
    write_csv_report(&out_dir.join(format!("vif_{scale}.csv")), prov, |o| tables::write_vif(o, &vif_report))
        .stage("vif")?;

    // SAR on log1p intensity
    let outcome = VarSpec::parse("log1p(intensity)").stage("sar")?;
    let y = outcome.values(&intensity).stage("sar")?;
    let x_cols: Vec<Vec<f64>> = sar_vars.iter().map(|v| v.values(&cov)).collect::<Result<_>>().stage("sar")?;
    let x = DMatrix::from_fn(n, x_cols.len(), |r, c| x_cols[c][r]);
    let labels: Vec<String> = sar_vars.iter().map(|v| v.label.clone()).collect();
    let data = ModelMatrix::with_constant(y.clone(), &x, &labels).stage("sar")?;
    let sar = fit_sar(&data, &w).stage("sar")?;
    write_csv_report(&out_dir.join(format!("sar_{scale}.csv")), prov, |o| tables::write_sar(o, &sar)).stage("sar")?;

    // DML, one treatment at a time
    let dml_table = |treatment: &VarSpec| -> Result<Table> {
        let mut t = Table::new(cov.ids().to_vec());
        t.push_column("outcome", y.clone())?;
        t.push_column(treatment.label.clone(), treatment.values(&cov)?)?;
        for c in &cfg.analysis.dml.covariates {
            t.push_column(c.clone(), cov.column(c)?.to_vec())?;
        }
        Ok(t)
    };
    let dml_spec = |treatment: &VarSpec| DmlSpec {
        outcome: "outcome".into(),
        treatment: treatment.label.clone(),
        covariates: cfg.analysis.dml.covariates.clone(),
        folds: cfg.analysis.dml.folds,
        gbt: cfg.analysis.dml.gbt.clone(),
        seed: derive_seed(cfg.seed, &format!("dml/{scale}/{}", treatment.label)),
    };
    let dml: Vec<DmlFit> = treatments
        .par_iter()
        .map(|t| run_dml(&dml_table(t)?, &dml_spec(t)))
        .collect::<Result<_>>()
        .stage("dml")?;
    write_csv_report(&out_dir.join(format!("dml_{scale}.csv")), prov, |o| tables::write_dml(o, &dml)).stage("dml")?;

    // grouped CATE
    let mut cate = Vec::new();
    for c in &model.cate {
        let treatment = VarSpec::parse(&c.treatment).stage("cate")?;
        let mut t = dml_table(&treatment).stage("cate")?;
        if !t.has_column(&c.covariate) {
            t.push_column(c.covariate.clone(), cov.column(&c.covariate).stage("cate")?.to_vec()).stage("cate")?;
        }
        let grouping = Grouping {
            covariate: c.covariate.clone(),
            binning: c.binning.clone(),
        };
        let rows = cate_by_groups(&t, &dml_spec(&treatment), &grouping, cfg.analysis.strict_cate).stage("cate")?;
        let file = format!("cate_{scale}_{}_by_{}.csv", file_token(&c.treatment), file_token(&c.covariate));
        write_csv_report(&out_dir.join(&file), prov, |o| tables::write_cate(o, &rows)).stage("cate")?;
        cate.push(CateSummary {
            treatment: c.treatment.clone(),
            covariate: c.covariate.clone(),
            file,
            groups: rows
                .iter()
                .map(|r| CateGroupSummary {
                    group: r.group.clone(),
                    lower: r.lower,
                    upper: r.upper,
                    n: r.n,
                    coef: r.fit.as_ref().map(|f| f.theta),
                    std_err: r.fit.as_ref().map(|f| f.se),
                })
                .collect(),
        });
    }

    // descriptives
    let mut desc = vec![Descriptive::of("intensity", &y_raw)];
    for name in cov.names() {
        desc.push(Descriptive::of(name, cov.column(name).stage("descriptives")?));
    }
    write_csv_report(&out_dir.join(format!("descriptives_{scale}.csv")), prov, |o| {
        tables::write_descriptives(o, &desc)
    })
    .stage("descriptives")?;

    let summary = ScaleSummary {
        scale,
        n,
        isolated_units: w.isolated().len(),
        intensity: distribution(&y_raw),
        moran: moran.clone(),
        mean_vif: vif_report.mean_vif,
        sar: SarSummary {
            rho: sar.rho,
            rho_std_err: sar.se_rho(),
            pseudo_r2: sar.pseudo_r2,
            log_likelihood: sar.log_likelihood,
            sigma2: sar.sigma2,
            n: sar.n,
        },
        dml,
        cate,
    };
    Ok((summary, moran))
}

/// Joins intensity with covariates per scale and writes the Moran, VIF,
/// SAR, DML, CATE and descriptive reports plus `summary.json`.
pub fn cmd_analyze(cfg: &RunConfig) -> StageResult<AnalysisSummary> {
    cfg.validate(Stage::Analyze).stage("config")?;
    analyze_inner(cfg, &cfg.intensity_dir())
}

fn analyze_inner(cfg: &RunConfig, intensity_dir: &Path) -> StageResult<AnalysisSummary> {
    let prov = provenance(cfg);
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e)).stage("output")?;
    let units = load_units(cfg).stage("gridmap")?;
    let spec = grid_spec(cfg, units_bbox(&units.0, &units.1), None).stage("gridmap")?;

    let mut scales = Vec::new();
    let mut morans = Vec::new();
    for &scale in &cfg.analysis.scales {
        let (summary, moran) = analyze_scale(cfg, scale, &spec, &units, &prov, intensity_dir, &out_dir)?;
        morans.push((scale.to_string(), moran));
        scales.push(summary);
    }
    write_csv_report(&out_dir.join("moran.csv"), &prov, |o| tables::write_moran(o, &morans)).stage("moran")?;
    let summary = AnalysisSummary {
        config_hash: prov.config_hash,
        seed: cfg.seed,
        scales,
    };
    write_json(&out_dir.join("summary.json"), &summary).stage("output")?;
    Ok(summary)
}

/// `detect` followed by `analyze`.
pub fn cmd_run(cfg: &RunConfig) -> StageResult<(DetectManifest, AnalysisSummary)> {
    cfg.validate(Stage::Run).stage("config")?;
    let manifest = detect_inner(cfg)?;
    let summary = analyze_inner(cfg, &cfg.output_dir())?;
    Ok((manifest, summary))
}

/// Output paths written by [`cmd_run`] for a config, in a stable order.
pub fn report_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}
