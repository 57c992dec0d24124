//! Single-pass self-loop detection and intensity aggregation.
//!
//! Each chain segment is walked once with a dictionary `cell → last visit`.
//! A first visit records the cell; a revisit emits a loop spanning the
//! recorded visit and the current one, then refreshes the record. Per
//! segment the loop count is therefore `stays − distinct cells`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gridmap::{CellId, GridSpec, UnitMap};
use crate::ingest::{BikeChain, Timestamp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelfLoopEvent {
    pub bike_id: String,
    pub cell: CellId,
    pub start: Timestamp,
    pub end: Timestamp,
}

/// Loop detection over one segment's `(cell, visit time)` sequence.
/// Returns `(cell, start, end)` per loop in detection order.
pub fn scan_segment<I>(visits: I) -> Vec<(CellId, Timestamp, Timestamp)>
where
    I: IntoIterator<Item = (CellId, Timestamp)>,
{
    let mut record: HashMap<CellId, Timestamp> = HashMap::new();
    let mut loops = Vec::new();
    for (cell, t) in visits {
        if let Some(prev) = record.insert(cell, t) {
            loops.push((cell, prev, t));
        }
    }
    loops
}

pub fn detect_self_loops(chain: &BikeChain, spec: &GridSpec) -> Result<Vec<SelfLoopEvent>> {
    let mut out = Vec::new();
    for segment in &chain.segments {
        let visits = segment
            .iter()
            .map(|s| spec.to_cell(s.lon, s.lat).map(|c| (c, s.arrive)))
            .collect::<Result<Vec<_>>>()?;
        out.extend(scan_segment(visits).into_iter().map(|(cell, start, end)| SelfLoopEvent {
            bike_id: chain.bike_id.clone(),
            cell,
            start,
            end,
        }));
    }
    Ok(out)
}

/// Detection across all chains; output follows chain order.
pub fn detect_all(chains: &[BikeChain], spec: &GridSpec) -> Result<Vec<SelfLoopEvent>> {
    let per_bike: Vec<Vec<SelfLoopEvent>> = chains
        .par_iter()
        .map(|c| detect_self_loops(c, spec))
        .collect::<Result<_>>()?;
    Ok(per_bike.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Grid,
    Station,
    Street,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::Grid => "grid",
            Scale::Station => "station",
            Scale::Street => "street",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Scale::Grid),
            "station" => Ok(Scale::Station),
            "street" => Ok(Scale::Street),
            other => Err(Error::InvalidInput(format!("unknown scale `{other}`"))),
        }
    }
}

/// Loops per day per unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityTable {
    pub scale: Scale,
    pub observation_days: u32,
    pub rows: Vec<(String, f64)>,
}

impl IntensityTable {
    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|(_, v)| *v).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "unit_id,intensity")?;
        for (id, v) in &self.rows {
            writeln!(out, "{id},{v}")?;
        }
        Ok(())
    }
}

pub fn loops_per_cell(events: &[SelfLoopEvent]) -> BTreeMap<CellId, u64> {
    let mut counts = BTreeMap::new();
    for e in events {
        *counts.entry(e.cell).or_insert(0u64) += 1;
    }
    counts
}

/// Attributes loops to units. Grid rows cover cells with at least one loop;
/// station and street rows cover every unit in the map, in map order.
pub fn aggregate_intensity(
    events: &[SelfLoopEvent],
    units: &UnitMap,
    scale: Scale,
    observation_days: u32,
) -> Result<IntensityTable> {
    if observation_days == 0 {
        return Err(Error::InvalidInput("observation_days must be at least 1".into()));
    }
    let days = observation_days as f64;
    let per_cell = loops_per_cell(events);
    let rows = match scale {
        Scale::Grid => per_cell
            .iter()
            .map(|(c, &n)| (c.unit_id(), n as f64 / days))
            .collect(),
        Scale::Station => {
            let mut totals = vec![0u64; units.stations.len()];
            for (cell, &n) in &per_cell {
                if let Some(st) = units.cell_to_stations.get(cell) {
                    for &i in st {
                        totals[i] += n;
                    }
                }
            }
            units
                .stations
                .iter()
                .zip(totals)
                .map(|(s, n)| (s.id.clone(), n as f64 / days))
                .collect()
        }
        Scale::Street => {
            let mut totals = vec![0u64; units.streets.len()];
            for (cell, &n) in &per_cell {
                if let Some(&i) = units.cell_to_street.get(cell) {
                    totals[i] += n;
                }
            }
            units
                .streets
                .iter()
                .zip(totals)
                .map(|(s, n)| (s.id.clone(), n as f64 / days))
                .collect()
        }
    };
    Ok(IntensityTable {
        scale,
        observation_days,
        rows,
    })
}

/// Total loops over total non-repositioning trips.
pub fn self_loop_proportion(events: &[SelfLoopEvent], chains: &[BikeChain]) -> Result<f64> {
    let trips: usize = chains.iter().map(|c| c.trips).sum();
    if trips == 0 {
        return Err(Error::InvalidInput("no trips: self-loop proportion undefined".into()));
    }
    Ok(events.len() as f64 / trips as f64)
}

pub fn write_loop_events<W: std::io::Write>(events: &[SelfLoopEvent], mut out: W) -> std::io::Result<()> {
    writeln!(out, "bike_id,row,col,start,end")?;
    for e in events {
        writeln!(out, "{},{},{},{},{}", e.bike_id, e.cell.row, e.cell.col, e.start, e.end)?;
    }
    Ok(())
}
