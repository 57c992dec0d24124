//! Local metric projection, grid binning, and cell → spatial-unit matching.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ingest::{valid_coordinate, EARTH_RADIUS_M};
use crate::{Error, Result};

/// Equirectangular projection anchored at `origin`, binned into square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub cell_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub row: i64,
    pub col: i64,
}

impl CellId {
    pub fn new(row: i64, col: i64) -> Self {
        CellId { row, col }
    }

    pub fn unit_id(&self) -> String {
        format!("{}_{}", self.row, self.col)
    }

    /// The 3×3 block centred on this cell, in row-major order.
    pub fn neighborhood(&self) -> impl Iterator<Item = CellId> + '_ {
        (-1..=1).flat_map(move |dr| (-1..=1).map(move |dc| CellId::new(self.row + dr, self.col + dc)))
    }
}

impl GridSpec {
    pub fn new(origin_lon: f64, origin_lat: f64, cell_size: f64) -> Result<Self> {
        if !valid_coordinate(origin_lon, origin_lat) {
            return Err(Error::InvalidCoordinate {
                lon: origin_lon,
                lat: origin_lat,
            });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidInput(format!("cell_size must be positive, got {cell_size}")));
        }
        Ok(GridSpec {
            origin_lon,
            origin_lat,
            cell_size,
        })
    }

    /// Same origin, different cell size.
    pub fn with_cell_size(&self, cell_size: f64) -> Result<Self> {
        GridSpec::new(self.origin_lon, self.origin_lat, cell_size)
    }

    fn x_scale(&self) -> f64 {
        EARTH_RADIUS_M * self.origin_lat.to_radians().cos()
    }

    /// `(x, y)` in meters east/north of the origin.
    pub fn project(&self, lon: f64, lat: f64) -> Result<(f64, f64)> {
        if !valid_coordinate(lon, lat) {
            return Err(Error::InvalidCoordinate { lon, lat });
        }
        Ok(self.project_unchecked(lon, lat))
    }

    fn project_unchecked(&self, lon: f64, lat: f64) -> (f64, f64) {
        let x = self.x_scale() * (lon - self.origin_lon).to_radians();
        let y = EARTH_RADIUS_M * (lat - self.origin_lat).to_radians();
        (x, y)
    }

    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let lon = self.origin_lon + (x / self.x_scale()).to_degrees();
        let lat = self.origin_lat + (y / EARTH_RADIUS_M).to_degrees();
        (lon, lat)
    }

    pub fn to_cell(&self, lon: f64, lat: f64) -> Result<CellId> {
        let (x, y) = self.project(lon, lat)?;
        Ok(self.cell_of_xy(x, y))
    }

    pub fn cell_of_xy(&self, x: f64, y: f64) -> CellId {
        CellId::new(
            (y / self.cell_size).floor() as i64,
            (x / self.cell_size).floor() as i64,
        )
    }

    pub fn cell_center_xy(&self, cell: CellId) -> (f64, f64) {
        (
            (cell.col as f64 + 0.5) * self.cell_size,
            (cell.row as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell_center(&self, cell: CellId) -> (f64, f64) {
        let (x, y) = self.cell_center_xy(cell);
        self.unproject(x, y)
    }
}

// ---------------------------------------------------------------------------
// Spatial units
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    /// Average daily ridership, when known.
    pub ridership: Option<f64>,
}

/// Simple polygon in lon/lat with optional holes. Rings need not repeat the
/// first vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
}

impl Polygon {
    pub fn new(exterior: Vec<(f64, f64)>) -> Self {
        Polygon {
            exterior: strip_closing(exterior),
            holes: Vec::new(),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        ring_contains(&self.exterior, x, y) && !self.holes.iter().any(|h| ring_contains(h, x, y))
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_points(self.exterior.iter().copied()).expect("non-empty ring")
    }

    /// Area-weighted centroid of the exterior ring (shoelace).
    pub fn centroid(&self) -> (f64, f64) {
        let r = &self.exterior;
        let n = r.len();
        let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (x0, y0) = r[i];
            let (x1, y1) = r[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            a += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        if a.abs() < f64::EPSILON * 1e-3 {
            let k = n as f64;
            return (
                r.iter().map(|p| p.0).sum::<f64>() / k,
                r.iter().map(|p| p.1).sum::<f64>() / k,
            );
        }
        (cx / (3.0 * a), cy / (3.0 * a))
    }
}

fn strip_closing(mut ring: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring
}

/// Even-odd ray casting.
fn ring_contains(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Street {
    pub id: String,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn from_points(points: impl IntoIterator<Item = (f64, f64)>) -> Option<BBox> {
        let mut it = points.into_iter();
        let (x0, y0) = it.next()?;
        let mut b = BBox {
            min_lon: x0,
            min_lat: y0,
            max_lon: x0,
            max_lat: y0,
        };
        for (x, y) in it {
            b.min_lon = b.min_lon.min(x);
            b.min_lat = b.min_lat.min(y);
            b.max_lon = b.max_lon.max(x);
            b.max_lat = b.max_lat.max(y);
        }
        Some(b)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_lon: self.min_lon.min(other.min_lon),
            min_lat: self.min_lat.min(other.min_lat),
            max_lon: self.max_lon.max(other.max_lon),
            max_lat: self.max_lat.max(other.max_lat),
        }
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.min_lon..=self.max_lon).contains(&lon) && (self.min_lat..=self.max_lat).contains(&lat)
    }
}

/// Cell → station-neighbourhood and cell → street assignments.
#[derive(Debug, Clone)]
pub struct UnitMap {
    pub spec: GridSpec,
    pub stations: Vec<Station>,
    pub streets: Vec<Street>,
    /// Station indices whose 3×3 block contains the cell (ascending).
    pub cell_to_stations: BTreeMap<CellId, Vec<usize>>,
    /// Street index whose polygon contains the cell centroid.
    pub cell_to_street: BTreeMap<CellId, usize>,
}

impl UnitMap {
    pub fn station_cells(&self, station: usize) -> Result<Vec<CellId>> {
        let s = &self.stations[station];
        let c = self.spec.to_cell(s.lon, s.lat)?;
        Ok(c.neighborhood().collect())
    }
}

/// Assigns each station its 3×3 neighbourhood and each in-bbox cell the
/// first street polygon containing its centroid.
pub fn build_unit_map(stations: Vec<Station>, streets: Vec<Street>, spec: GridSpec, bbox: BBox) -> Result<UnitMap> {
    for st in &streets {
        if st.polygon.exterior.len() < 3 {
            return Err(Error::DegeneratePolygon(st.id.clone()));
        }
    }
    let mut cell_to_stations: BTreeMap<CellId, Vec<usize>> = BTreeMap::new();
    for (i, s) in stations.iter().enumerate() {
        let center = spec.to_cell(s.lon, s.lat)?;
        for c in center.neighborhood() {
            cell_to_stations.entry(c).or_default().push(i);
        }
    }

    let lo = spec.to_cell(bbox.min_lon, bbox.min_lat)?;
    let hi = spec.to_cell(bbox.max_lon, bbox.max_lat)?;
    let street_boxes: Vec<BBox> = streets.iter().map(|s| s.polygon.bbox()).collect();
    let mut cell_to_street = BTreeMap::new();
    for row in lo.row..=hi.row {
        for col in lo.col..=hi.col {
            let cell = CellId::new(row, col);
            let (lon, lat) = spec.cell_center(cell);
            if !bbox.contains(lon, lat) {
                continue;
            }
            let hit = streets
                .iter()
                .zip(&street_boxes)
                .position(|(s, b)| b.contains(lon, lat) && s.polygon.contains(lon, lat));
            if let Some(i) = hit {
                cell_to_street.insert(cell, i);
            }
        }
    }
    Ok(UnitMap {
        spec,
        stations,
        streets,
        cell_to_stations,
        cell_to_street,
    })
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Reads `station_id,lon,lat[,ridership]`.
pub fn read_stations<R: Read>(reader: R) -> Result<Vec<Station>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id, lon, lat) = match (col("station_id"), col("lon"), col("lat")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::MalformedHeader(
                "stations file needs station_id,lon,lat[,ridership]".into(),
            ))
        }
    };
    let ridership = col("ridership");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::MalformedRow {
            line: i as u64 + 2,
            reason: format!("bad {what}"),
        };
        let x: f64 = rec[lon].parse().map_err(|_| bad("lon"))?;
        let y: f64 = rec[lat].parse().map_err(|_| bad("lat"))?;
        if !valid_coordinate(x, y) {
            return Err(Error::InvalidCoordinate { lon: x, lat: y });
        }
        let r = match ridership.map(|c| &rec[c]) {
            None | Some("") => None,
            Some(v) => Some(v.parse::<f64>().map_err(|_| bad("ridership"))?),
        };
        out.push(Station {
            id: rec[id].to_string(),
            lon: x,
            lat: y,
            ridership: r,
        });
    }
    Ok(out)
}

pub fn read_stations_file(path: &Path) -> Result<Vec<Station>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_stations(f)
}

pub fn write_stations<W: std::io::Write>(stations: &[Station], mut out: W) -> std::io::Result<()> {
    writeln!(out, "station_id,lon,lat,ridership")?;
    for s in stations {
        let r = s.ridership.map(|r| r.to_string()).unwrap_or_default();
        writeln!(out, "{},{:.8},{:.8},{}", s.id, s.lon, s.lat, r)?;
    }
    Ok(())
}

/// Reads a GeoJSON FeatureCollection of Polygon features carrying a
/// `street_id` property.
pub fn read_streets_geojson(text: &str) -> Result<Vec<Street>> {
    let root: Value = serde_json::from_str(text)?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidInput("GeoJSON: expected a FeatureCollection".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (k, f) in features.iter().enumerate() {
        let id = match f.pointer("/properties/street_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "GeoJSON feature {k}: missing street_id property"
                )))
            }
        };
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::InvalidInput(format!("street `{id}`: missing geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(Error::InvalidInput(format!("street `{id}`: geometry must be a Polygon")));
        }
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput(format!("street `{id}`: missing coordinates")))?;
        let mut parsed = Vec::with_capacity(rings.len());
        for ring in rings {
            let pts = ring
                .as_array()
                .ok_or_else(|| Error::InvalidInput(format!("street `{id}`: bad ring")))?;
            let mut r = Vec::with_capacity(pts.len());
            for p in pts {
                let xy = p.as_array().filter(|a| a.len() >= 2);
                let (x, y) = match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                    Some((Some(x), Some(y))) => (x, y),
                    _ => return Err(Error::InvalidInput(format!("street `{id}`: bad position"))),
                };
                r.push((x, y));
            }
            parsed.push(strip_closing(r));
        }
        let mut rings = parsed.into_iter();
        let exterior = rings.next().unwrap_or_default();
        if exterior.len() < 3 {
            return Err(Error::DegeneratePolygon(id));
        }
        out.push(Street {
            id,
            polygon: Polygon {
                exterior,
                holes: rings.collect(),
            },
        });
    }
    Ok(out)
}

pub fn read_streets_file(path: &Path) -> Result<Vec<Street>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_streets_geojson(&text)
}

pub fn streets_to_geojson(streets: &[Street]) -> Value {
    let close = |ring: &[(f64, f64)]| {
        let mut pts: Vec<Value> = ring.iter().map(|&(x, y)| json!([x, y])).collect();
        if let Some(&(x, y)) = ring.first() {
            pts.push(json!([x, y]));
        }
        Value::Array(pts)
    };
    let features: Vec<Value> = streets
        .iter()
        .map(|s| {
            let mut rings = vec![close(&s.polygon.exterior)];
            rings.extend(s.polygon.holes.iter().map(|h| close(h)));
            json!({
                "type": "Feature",
                "properties": { "street_id": s.id },
                "geometry": { "type": "Polygon", "coordinates": rings },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
