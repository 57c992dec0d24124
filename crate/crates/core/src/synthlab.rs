//! Seeded synthetic data with known ground truth.
//!
//! Every generator is a pure function of its parameters and seed. Random
//! streams are derived per label (see [`crate::rng`]), so generating bikes or
//! tables in parallel consumes the same numbers as a sequential run.
//!
//! Trajectories are built on a metric lattice of `cell_size` cells. Each
//! cell holds four parking anchors offset diagonally from its centre, far
//! enough apart that consecutive stays never merge and never straddle a
//! boundary of any aligned grid from 125 m to 2 km.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::gridmap::{CellId, GridSpec, Polygon, Station, Street};
use crate::ingest::{EventKind, RawEvent, Timestamp};
use crate::rng::{stream, stream_indexed};
use crate::sarmodel::{ModelMatrix, SarContext};
use crate::spatialstats::{build_weights, UnitGeometry, WeightsMatrix, WeightsMode};
use crate::table::Table;
use crate::{Error, Result};

/// Offset of each anchor from its cell centre along both axes, metres.
pub const ANCHOR_OFFSET: f64 = 130.0;
/// Minimum centre-to-centre distance of a repositioning move, metres.
const REPOSITION_MIN: f64 = 1500.0;
const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub seed: u64,
    pub n_bikes: usize,
    pub days: u32,
    /// Side of the square city, metres.
    pub extent_m: f64,
    pub cell_size: f64,
    pub n_stations: usize,
    /// Street blocks per side.
    pub street_blocks: usize,
    pub loop_propensity: f64,
    pub reposition_rate: f64,
    pub trips_per_day: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    /// Epoch seconds of the first day.
    pub start: i64,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            seed: 1,
            n_bikes: 100,
            days: 2,
            extent_m: 10_000.0,
            cell_size: 500.0,
            n_stations: 90,
            street_blocks: 10,
            loop_propensity: 0.3,
            reposition_rate: 0.05,
            trips_per_day: 4.0,
            origin_lon: 121.40,
            origin_lat: 31.15,
            start: 1_709_510_400,
        }
    }
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        for (name, p) in [("loop_propensity", self.loop_propensity), ("reposition_rate", self.reposition_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if !(self.extent_m > 0.0 && self.cell_size > 0.0) {
            return bad("extent and cell size must be positive".into());
        }
        let cells = self.extent_m / self.cell_size;
        if cells.fract() != 0.0 || cells < 2.0 {
            return bad(format!("extent {} is not a multiple (>= 2) of cell size {}", self.extent_m, self.cell_size));
        }
        // anchors in neighbouring cells must stay well beyond merge range
        if self.cell_size < 2.0 * ANCHOR_OFFSET + 200.0 {
            return bad(format!("cell size must be at least {} m", 2.0 * ANCHOR_OFFSET + 200.0));
        }
        if self.street_blocks == 0 || !(cells as usize).is_multiple_of(self.street_blocks) {
            return bad(format!("{} street blocks do not tile {cells} cells", self.street_blocks));
        }
        if self.n_stations > (cells as usize).pow(2) {
            return bad("more stations than cells".into());
        }
        if self.n_bikes == 0 || self.days == 0 {
            return bad("n_bikes and days must be positive".into());
        }
        if !(self.trips_per_day > 0.0) {
            return bad("trips_per_day must be positive".into());
        }
        GridSpec::new(self.origin_lon, self.origin_lat, self.cell_size)?;
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            origin_lon: self.origin_lon,
            origin_lat: self.origin_lat,
            cell_size: self.cell_size,
        }
    }

    fn cells_per_side(&self) -> i64 {
        (self.extent_m / self.cell_size) as i64
    }
}

// ---------------------------------------------------------------------------
// Truth records
// ---------------------------------------------------------------------------

/// Ground-truth sidecars are validated before use.
pub trait Truth: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<()>;
}

pub fn write_truth<T: Truth>(path: &Path, truth: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(truth)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_truth<T: Truth>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let t: T = serde_json::from_str(&text)?;
    t.validate()?;
    Ok(t)
}

/// `<dataset>.truth.json` next to `<dataset>.<ext>`.
pub fn truth_path(dataset: &Path) -> std::path::PathBuf {
    let stem = dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dataset.with_file_name(format!("{stem}.truth.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryTruth {
    pub scenario: SynthScenario,
    pub events: usize,
    pub stays: usize,
    pub trips: usize,
    pub segments: usize,
    pub repositionings: usize,
    pub total_loops: u64,
    /// Planted loops per grid cell (`row_col`), cells with loops only.
    pub loops_per_cell: BTreeMap<String, u64>,
}

impl Truth for TrajectoryTruth {
    fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let sum: u64 = self.loops_per_cell.values().sum();
        if sum != self.total_loops || self.loops_per_cell.values().any(|&v| v == 0) {
            return Err(Error::InvalidInput("truth loop counts are inconsistent".into()));
        }
        if self.total_loops as usize > self.stays || self.trips != self.stays {
            return Err(Error::InvalidInput("truth stay/trip counts are inconsistent".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Trajectories {
    pub events: Vec<RawEvent>,
    pub truth: TrajectoryTruth,
}

#[derive(Clone, Copy, PartialEq)]
struct Anchor {
    cell: CellId,
    corner: u8,
}

impl Anchor {
    fn xy(self, cs: f64) -> (f64, f64) {
        let dx = if self.corner & 1 == 0 { -ANCHOR_OFFSET } else { ANCHOR_OFFSET };
        let dy = if self.corner & 2 == 0 { -ANCHOR_OFFSET } else { ANCHOR_OFFSET };
        ((self.cell.col as f64 + 0.5) * cs + dx, (self.cell.row as f64 + 0.5) * cs + dy)
    }
}

struct BikePlan {
    events: Vec<RawEvent>,
    /// Cells of the stays, one list per segment.
    segments: Vec<Vec<CellId>>,
}

fn random_cell(rng: &mut ChaCha8Rng, side: i64) -> CellId {
    CellId::new(rng.random_range(0..side), rng.random_range(0..side))
}

fn other_corner(rng: &mut ChaCha8Rng, avoid: u8) -> u8 {
    (avoid + rng.random_range(1..4u8)) % 4
}

fn plan_bike(sc: &SynthScenario, index: usize) -> BikePlan {
    let mut rng = stream_indexed(sc.seed, "synth/bike", index as u64);
    let side = sc.cells_per_side();
    let cs = sc.cell_size;
    let spec = sc.grid();
    let bike_id = format!("B{index:05}");
    let end = sc.start + sc.days as i64 * DAY;
    let mean_dwell = DAY as f64 / sc.trips_per_day;

    let mut events = Vec::new();
    let mut emit = |t: i64, a: Anchor, kind: EventKind| {
        let (x, y) = a.xy(cs);
        let (lon, lat) = spec.unproject(x, y);
        events.push(RawEvent {
            bike_id: bike_id.clone(),
            timestamp: Timestamp(t),
            lon,
            lat,
            kind,
        });
    };

    let mut t = sc.start + rng.random_range(0..6 * 3600);
    let mut here = Anchor {
        cell: random_cell(&mut rng, side),
        corner: rng.random_range(0..4),
    };
    let mut segments = vec![Vec::new()];
    let mut visited: HashSet<CellId> = HashSet::new();
    emit(t, here, EventKind::Unlock);
    loop {
        let origin = here;
        let dest = if rng.random_bool(sc.loop_propensity) {
            Anchor {
                cell: origin.cell,
                corner: other_corner(&mut rng, origin.corner),
            }
        } else {
            let mut cell = random_cell(&mut rng, side);
            for _ in 0..64 {
                if cell != origin.cell && !visited.contains(&cell) {
                    break;
                }
                cell = random_cell(&mut rng, side);
            }
            let corner = if cell == origin.cell {
                other_corner(&mut rng, origin.corner)
            } else {
                rng.random_range(0..4)
            };
            Anchor { cell, corner }
        };
        t += rng.random_range(300..1800);
        emit(t, dest, EventKind::Lock);
        segments.last_mut().expect("segment").push(dest.cell);
        visited.insert(dest.cell);
        here = dest;

        let dwell = (-mean_dwell * (1.0 - rng.random::<f64>()).ln()).max(600.0) as i64;
        if t + dwell >= end {
            break;
        }
        t += dwell;
        if rng.random_bool(sc.reposition_rate) {
            let (hx, hy) = spec.cell_center_xy(here.cell);
            let far: Vec<CellId> = (0..side)
                .flat_map(|r| (0..side).map(move |c| CellId::new(r, c)))
                .filter(|&c| {
                    let (x, y) = spec.cell_center_xy(c);
                    (x - hx).hypot(y - hy) >= REPOSITION_MIN
                })
                .collect();
            if !far.is_empty() {
                here = Anchor {
                    cell: far[rng.random_range(0..far.len())],
                    corner: rng.random_range(0..4),
                };
                segments.push(Vec::new());
                visited.clear();
            }
        }
        emit(t, here, EventKind::Unlock);
    }
    BikePlan { events, segments }
}

/// Closed-form loop count of one segment: `Σ_cell max(visits − 1, 0)`.
pub fn planted_loops(cells: &[CellId]) -> BTreeMap<CellId, u64> {
    let mut visits: BTreeMap<CellId, u64> = BTreeMap::new();
    for &c in cells {
        *visits.entry(c).or_default() += 1;
    }
    visits.into_iter().filter(|&(_, v)| v > 1).map(|(c, v)| (c, v - 1)).collect()
}

pub fn gen_trajectories(sc: &SynthScenario) -> Result<Trajectories> {
    sc.validate()?;
    let plans: Vec<BikePlan> = (0..sc.n_bikes).into_par_iter().map(|i| plan_bike(sc, i)).collect();
    let mut loops: BTreeMap<String, u64> = BTreeMap::new();
    let (mut stays, mut segments) = (0, 0);
    for plan in &plans {
        for seg in &plan.segments {
            stays += seg.len();
            segments += 1;
            for (cell, n) in planted_loops(seg) {
                *loops.entry(cell.unit_id()).or_default() += n;
            }
        }
    }
    let events: Vec<RawEvent> = plans.into_iter().flat_map(|p| p.events).collect();
    let truth = TrajectoryTruth {
        scenario: sc.clone(),
        events: events.len(),
        stays,
        trips: stays,
        segments,
        repositionings: segments - sc.n_bikes,
        total_loops: loops.values().sum(),
        loops_per_cell: loops,
    };
    Ok(Trajectories { events, truth })
}

// ---------------------------------------------------------------------------
// City: stations, streets, covariates
// ---------------------------------------------------------------------------

/// Covariate columns shared by both unit scales.
pub const COVARIATES: [&str; 12] = [
    "average_age",
    "fixed_occ_pct",
    "nonresident_pct",
    "car_ownership",
    "work_poi",
    "residential_poi",
    "commercial_poi",
    "central",
    "university",
    "cbd",
    "hub",
    "bus_stations",
];

#[derive(Debug, Clone)]
pub struct City {
    pub trajectories: Trajectories,
    pub stations: Vec<Station>,
    pub streets: Vec<Street>,
    pub station_covariates: Table,
    pub street_covariates: Table,
}

fn lognormal_count(rng: &mut ChaCha8Rng, mu: f64, sd: f64) -> f64 {
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    (mu + sd * z).exp().round()
}

fn covariate_table(ids: Vec<String>, rng: &mut ChaCha8Rng, with_ridership: bool) -> Table {
    let n = ids.len();
    let std: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| -> Vec<f64> { (0..n).map(|_| f(&mut *rng)).collect() };
    let mut t = Table::new(ids);
    let cols: Vec<(&str, Vec<f64>)> = vec![
        ("average_age", draw(&mut |r| (42.0_f64 + 5.0 * std.sample(r)).clamp(25.0, 70.0))),
        ("fixed_occ_pct", draw(&mut |r| r.random_range(30.0..80.0))),
        ("nonresident_pct", draw(&mut |r| r.random_range(5.0..60.0))),
        ("car_ownership", draw(&mut |r| (-0.5_f64 + 0.3 * std.sample(r)).exp())),
        ("work_poi", draw(&mut |r| lognormal_count(r, 3.0, 1.0))),
        ("residential_poi", draw(&mut |r| lognormal_count(r, 3.0, 1.0))),
        ("commercial_poi", draw(&mut |r| lognormal_count(r, 3.5, 1.0))),
        ("central", draw(&mut |r| f64::from(u8::from(r.random_bool(0.3))))),
        ("university", draw(&mut |r| f64::from(u8::from(r.random_bool(0.1))))),
        ("cbd", draw(&mut |r| f64::from(u8::from(r.random_bool(0.1))))),
        ("hub", draw(&mut |r| f64::from(u8::from(r.random_bool(0.15))))),
        ("bus_stations", draw(&mut |r| lognormal_count(r, 1.5, 0.6))),
    ];
    for (name, v) in cols {
        t.push_column(name, v).expect("fresh column");
    }
    if with_ridership {
        let v = draw(&mut |r| lognormal_count(r, 10.0, 0.7));
        t.push_column("metro_ridership", v).expect("fresh column");
    }
    t
}

/// Square street blocks tiling the city, `blocks × blocks`, row-major.
pub fn street_lattice(spec: &GridSpec, extent_m: f64, blocks: usize) -> Vec<Street> {
    let size = extent_m / blocks as f64;
    let mut out = Vec::with_capacity(blocks * blocks);
    for r in 0..blocks {
        for c in 0..blocks {
            let (x0, y0) = (c as f64 * size, r as f64 * size);
            let ring = [(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size)]
                .iter()
                .map(|&(x, y)| spec.unproject(x, y))
                .collect();
            out.push(Street {
                id: format!("ST{:03}", r * blocks + c),
                polygon: Polygon::new(ring),
            });
        }
    }
    out
}

pub fn gen_city(sc: &SynthScenario) -> Result<City> {
    let trajectories = gen_trajectories(sc)?;
    let spec = sc.grid();
    let side = sc.cells_per_side();

    let mut rng = stream(sc.seed, "synth/stations");
    let mut cells: Vec<CellId> = (0..side).flat_map(|r| (0..side).map(move |c| CellId::new(r, c))).collect();
    for i in 0..sc.n_stations {
        let j = rng.random_range(i..cells.len());
        cells.swap(i, j);
    }
    cells.truncate(sc.n_stations);
    cells.sort();

    let ids: Vec<String> = (0..sc.n_stations).map(|i| format!("M{:03}", i + 1)).collect();
    let station_covariates = covariate_table(ids.clone(), &mut stream(sc.seed, "synth/cov/station"), true);
    let ridership = station_covariates.column("metro_ridership")?;
    let stations = cells
        .iter()
        .zip(ids)
        .zip(ridership)
        .map(|((&cell, id), &r)| {
            let (lon, lat) = spec.cell_center(cell);
            Station {
                id,
                lon,
                lat,
                ridership: Some(r),
            }
        })
        .collect();

    let streets = street_lattice(&spec, sc.extent_m, sc.street_blocks);
    let street_ids = streets.iter().map(|s| s.id.clone()).collect();
    let street_covariates = covariate_table(street_ids, &mut stream(sc.seed, "synth/cov/street"), false);
    Ok(City {
        trajectories,
        stations,
        streets,
        station_covariates,
        street_covariates,
    })
}

/// Writes `events.csv`, `events.truth.json`, `stations.csv`,
/// `streets.geojson`, `covariates_station.csv` and `covariates_street.csv`.
pub fn write_city(city: &City, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<std::io::BufWriter<fs::File>> {
        let p = dir.join(name);
        Ok(std::io::BufWriter::new(fs::File::create(&p).map_err(|e| Error::io(&p, e))?))
    };
    let io = |name: &'static str| move |e: std::io::Error| Error::io(dir.join(name), e);
    crate::ingest::write_events(&city.trajectories.events, create("events.csv")?).map_err(io("events.csv"))?;
    write_truth(&dir.join("events.truth.json"), &city.trajectories.truth)?;
    crate::gridmap::write_stations(&city.stations, create("stations.csv")?).map_err(io("stations.csv"))?;
    let geo = serde_json::to_string_pretty(&crate::gridmap::streets_to_geojson(&city.streets))?;
    fs::write(dir.join("streets.geojson"), geo + "\n").map_err(io("streets.geojson"))?;
    city.station_covariates.write_csv(create("covariates_station.csv")?)?;
    city.street_covariates.write_csv(create("covariates_street.csv")?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// SAR data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SarTruth {
    pub rho: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl Truth for SarTruth {
    fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.sigma > 0.0 && !self.beta.is_empty()) {
            return Err(Error::InvalidInput("malformed SAR truth".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SarData {
    pub model: ModelMatrix,
    pub eps: Vec<f64>,
    pub truth: SarTruth,
}

/// Rook/queen neighbours on a `side × side` lattice, row-standardized.
pub fn lattice_weights(side: usize, queen: bool) -> WeightsMatrix {
    let mut t = Vec::new();
    for r in 0..side as i64 {
        for c in 0..side as i64 {
            for dr in -1..=1i64 {
                for dc in -1..=1i64 {
                    if (dr, dc) == (0, 0) || (!queen && dr != 0 && dc != 0) {
                        continue;
                    }
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..side as i64).contains(&rr) && (0..side as i64).contains(&cc) {
                        t.push(((r * side as i64 + c) as usize, (rr * side as i64 + cc) as usize, 1.0));
                    }
                }
            }
        }
    }
    WeightsMatrix::from_triplets(side * side, t).expect("lattice weights").row_standardize()
}

/// Reduced-form solve `(I − ρW)⁻¹ v`.
fn spatial_solve(w: &WeightsMatrix, rho: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    if rho == 0.0 {
        return Ok(v.clone());
    }
    let n = w.len();
    (DMatrix::identity(n, n) - w.to_dense() * rho)
        .lu()
        .solve(v)
        .ok_or_else(|| Error::Singular(format!("I - rho W singular at rho = {rho}")))
}

fn check_rho(ctx: &SarContext, rho: f64) -> Result<()> {
    let ok = match ctx.bounds() {
        Some((lo, hi)) => rho >= lo && rho <= hi,
        None => rho == 0.0,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("rho = {rho} outside the admissible interval of W")))
    }
}

/// `y = (I − ρW)⁻¹(Xβ + ε)`, X standard normal with a trailing intercept
/// (the last entry of `beta`), ε iid Normal(0, σ²).
pub fn gen_sar_data(w: &WeightsMatrix, ctx: &SarContext, rho: f64, beta: &[f64], sigma: f64, seed: u64) -> Result<SarData> {
    check_rho(ctx, rho)?;
    if beta.len() < 2 || !(sigma > 0.0) {
        return Err(Error::InvalidInput("need at least one slope plus intercept and sigma > 0".into()));
    }
    let n = w.len();
    let p = beta.len();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream(seed, "synth/sar/x");
    let x = DMatrix::from_fn(n, p, |_, c| if c + 1 == p { 1.0 } else { std.sample(&mut rng) });
    let mut rng = stream(seed, "synth/sar/eps");
    let eps: Vec<f64> = (0..n).map(|_| sigma * std.sample(&mut rng)).collect();
    let mean = &x * DVector::from_column_slice(beta) + DVector::from_column_slice(&eps);
    let y = spatial_solve(w, rho, &mean)?;
    let mut names: Vec<String> = (1..p).map(|j| format!("x{j}")).collect();
    names.push("Constant".into());
    Ok(SarData {
        model: ModelMatrix::new(y.iter().copied().collect(), x, names)?,
        eps,
        truth: SarTruth {
            rho,
            beta: beta.to_vec(),
            sigma,
            seed,
        },
    })
}

/// Street-scale tables with a planted spatial lag: a `side × side` block
/// lattice whose `log1p` intensity follows a SAR process on the queen
/// contiguity of the blocks, driven by the listed regressors.
#[derive(Debug, Clone)]
pub struct PlantedSarCity {
    pub streets: Vec<Street>,
    pub covariates: Table,
    /// `(unit_id, intensity)` rows.
    pub intensity: Vec<(String, f64)>,
    pub truth: SarTruth,
}

/// `regressors` are `(column, log1p?)` pairs; their coefficients are drawn
/// so each contributes comparable variance, with intercept 2.
pub fn gen_planted_sar_city(
    side: usize,
    block_m: f64,
    regressors: &[(&str, bool)],
    rho: f64,
    sigma: f64,
    seed: u64,
) -> Result<PlantedSarCity> {
    let spec = GridSpec::new(121.40, 31.15, block_m)?;
    let streets = street_lattice(&spec, block_m * side as f64, side);
    let polys: Vec<Polygon> = streets.iter().map(|s| s.polygon.clone()).collect();
    let w = build_weights(UnitGeometry::Polygons(&polys), WeightsMode::QueenContiguity)?.row_standardize();
    let ctx = SarContext::new(&w)?;
    check_rho(&ctx, rho)?;

    let ids: Vec<String> = streets.iter().map(|s| s.id.clone()).collect();
    let covariates = covariate_table(ids.clone(), &mut stream(seed, "synth/planted/cov"), false);
    let n = ids.len();
    let mut rng = stream(seed, "synth/planted/beta");
    let mut mean = DVector::from_element(n, 2.0);
    let mut beta = Vec::with_capacity(regressors.len() + 1);
    for &(name, log) in regressors {
        let col: Vec<f64> = covariates
            .column(name)?
            .iter()
            .map(|&v| if log { v.ln_1p() } else { v })
            .collect();
        let sd = crate::linalg::variance(&col).sqrt();
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let b = if sd > 0.0 { sign * 0.3 / sd } else { 0.0 };
        beta.push(b);
        for (m, v) in mean.iter_mut().zip(&col) {
            *m += b * v;
        }
    }
    beta.push(2.0);
    let std = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut rng = stream(seed, "synth/planted/eps");
    for m in mean.iter_mut() {
        *m += std.sample(&mut rng);
    }
    let y = spatial_solve(&w, rho, &mean)?;
    if y.iter().any(|&v| v <= -1.0) {
        return Err(Error::Numerical("planted outcome below log1p domain".into()));
    }
    Ok(PlantedSarCity {
        streets,
        covariates,
        intensity: ids.into_iter().zip(y.iter().map(|v| v.exp_m1())).collect(),
        truth: SarTruth { rho, beta, sigma, seed },
    })
}

// ---------------------------------------------------------------------------
// DML data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Zero,
    /// `x1 + 0.5 x2`
    Linear,
    /// `x1²`
    Quadratic,
    /// `sin(2 x1)`
    Sine,
    /// `1[x1 ≥ midpoint of the covariate range]`
    Step,
}

impl std::str::FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Form::Zero),
            "linear" => Ok(Form::Linear),
            "quadratic" => Ok(Form::Quadratic),
            "sine" => Ok(Form::Sine),
            "step" => Ok(Form::Step),
            other => Err(Error::InvalidInput(format!("unknown functional form `{other}`"))),
        }
    }
}

impl Form {
    fn eval(self, x: &[f64], mid: f64) -> f64 {
        match self {
            Form::Zero => 0.0,
            Form::Linear => x[0] + 0.5 * x[1],
            Form::Quadratic => x[0] * x[0],
            Form::Sine => (2.0 * x[0]).sin(),
            Form::Step => f64::from(u8::from(x[0] >= mid)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlScenario {
    pub n: usize,
    pub theta: f64,
    /// `(θ if x1 < 0, θ if x1 ≥ 0)`; overrides `theta` when set.
    pub theta_by_sign: Option<(f64, f64)>,
    pub g_form: Form,
    pub m_form: Form,
    /// Standard deviation of both ε and ν.
    pub noise: f64,
    pub n_covariates: usize,
    /// Covariates are iid Uniform over this range.
    pub x_range: (f64, f64),
    /// `D = 1[m(X) + ν > 0]` instead of `m(X) + ν`.
    pub binary_treatment: bool,
    pub seed: u64,
}

impl Default for DmlScenario {
    fn default() -> Self {
        DmlScenario {
            n: 2000,
            theta: 0.5,
            theta_by_sign: None,
            g_form: Form::Sine,
            m_form: Form::Quadratic,
            noise: 1.0,
            n_covariates: 4,
            x_range: (0.0, 2.0),
            binary_treatment: false,
            seed: 0,
        }
    }
}

impl Truth for DmlScenario {
    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_covariates < 2 || !(self.noise >= 0.0) || !(self.x_range.0 < self.x_range.1) {
            return Err(Error::InvalidInput("malformed DML scenario".into()));
        }
        Ok(())
    }
}

/// Table with columns `y`, `d`, `x1..xp`; the scenario is its own truth
/// record.
pub fn gen_dml_data(sc: &DmlScenario) -> Result<Table> {
    sc.validate()?;
    let (lo, hi) = sc.x_range;
    let mid = 0.5 * (lo + hi);
    let p = sc.n_covariates;
    let mut rng = stream(sc.seed, "synth/dml/x");
    let xs: Vec<Vec<f64>> = (0..sc.n).map(|_| (0..p).map(|_| rng.random_range(lo..hi)).collect()).collect();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng_nu = stream(sc.seed, "synth/dml/nu");
    let mut rng_eps = stream(sc.seed, "synth/dml/eps");
    let mut y = Vec::with_capacity(sc.n);
    let mut d = Vec::with_capacity(sc.n);
    for x in &xs {
        let nu = sc.noise * std.sample(&mut rng_nu);
        let eps = sc.noise * std.sample(&mut rng_eps);
        let latent = sc.m_form.eval(x, mid) + nu;
        let di = if sc.binary_treatment { f64::from(u8::from(latent > 0.0)) } else { latent };
        let theta = match sc.theta_by_sign {
            Some((neg, pos)) => if x[0] < 0.0 { neg } else { pos },
            None => sc.theta,
        };
        d.push(di);
        y.push(sc.g_form.eval(x, mid) + theta * di + eps);
    }
    let mut t = Table::with_len(sc.n);
    t.push_column("y", y)?;
    t.push_column("d", d)?;
    for j in 0..p {
        t.push_column(format!("x{}", j + 1), xs.iter().map(|x| x[j]).collect())?;
    }
    Ok(t)
}
