//! Lock/unlock event parsing and mobility-chain construction.
//!
//! Events are grouped per bike and sorted by `(bike_id, timestamp, kind)`
//! with unlock ordered before lock at equal timestamps. Each lock followed by
//! an unlock yields a candidate stay; a locked displacement larger than
//! `s_sched` is operator repositioning and splits the chain into a new
//! segment. Consecutive candidate stays closer than `s_stay` are merged.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufReader, Read};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    /// Accepts integer epoch seconds or an RFC 3339 / ISO-8601 instant.
    pub fn parse(s: &str) -> Option<Timestamp> {
        let s = s.trim();
        if let Ok(secs) = s.parse::<i64>() {
            return Some(Timestamp(secs));
        }
        DateTime::parse_from_rfc3339(s)
            .ok()
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp()))
    }

    pub fn seconds(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => f.write_str(&dt.to_rfc3339_opts(SecondsFormat::Secs, true)),
            None => write!(f, "{}", self.0),
        }
    }
}

/// Unlock sorts before lock so zero-duration trips keep their pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Unlock,
    Lock,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Unlock => "unlock",
            EventKind::Lock => "lock",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub bike_id: String,
    pub timestamp: Timestamp,
    pub lon: f64,
    pub lat: f64,
    pub kind: EventKind,
}

pub fn valid_coordinate(lon: f64, lat: f64) -> bool {
    lon.is_finite() && lat.is_finite() && (-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat)
}

/// Great-circle distance in meters.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Total order used to arrange events before chain construction.
pub fn event_order(a: &RawEvent, b: &RawEvent) -> Ordering {
    a.bike_id
        .cmp(&b.bike_id)
        .then(a.timestamp.cmp(&b.timestamp))
        .then(a.kind.cmp(&b.kind))
        .then(a.lon.total_cmp(&b.lon))
        .then(a.lat.total_cmp(&b.lat))
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub events: Vec<RawEvent>,
    pub rejected: usize,
}

const HEADER: [&str; 5] = ["bike_id", "timestamp", "lon", "lat", "kind"];

/// Parses the `bike_id,timestamp,lon,lat,kind` CSV format. Rows are returned
/// in input order. Malformed rows are skipped and counted unless `strict`.
pub fn parse_events<R: Read>(reader: R, strict: bool) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .byte_headers()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?
        .clone();
    let mut idx = [usize::MAX; 5];
    for (slot, name) in idx.iter_mut().zip(HEADER) {
        *slot = headers
            .iter()
            .position(|h| h == name.as_bytes())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "expected columns {}, missing `{name}`",
                    HEADER.join(",")
                ))
            })?;
    }

    let mut out = ParseOutcome::default();
    let mut rec = csv::ByteRecord::new();
    let mut line = 1u64;
    loop {
        line += 1;
        match rdr.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => match parse_row(&rec, &idx) {
                Ok(ev) => out.events.push(ev),
                Err(reason) => {
                    if strict {
                        return Err(Error::MalformedRow { line, reason });
                    }
                    out.rejected += 1;
                }
            },
            Err(e) => {
                if strict {
                    return Err(Error::MalformedRow {
                        line,
                        reason: e.to_string(),
                    });
                }
                out.rejected += 1;
            }
        }
    }
    Ok(out)
}

fn parse_row(rec: &csv::ByteRecord, idx: &[usize; 5]) -> std::result::Result<RawEvent, String> {
    let field = |i: usize| -> std::result::Result<&str, String> {
        let raw = rec.get(idx[i]).ok_or_else(|| format!("missing field `{}`", HEADER[i]))?;
        std::str::from_utf8(raw).map_err(|_| format!("field `{}` is not UTF-8", HEADER[i]))
    };
    let bike_id = field(0)?;
    if bike_id.is_empty() {
        return Err("empty bike_id".into());
    }
    let ts = field(1)?;
    let timestamp = Timestamp::parse(ts).ok_or_else(|| format!("bad timestamp `{ts}`"))?;
    let lon: f64 = field(2)?.parse().map_err(|_| "bad lon".to_string())?;
    let lat: f64 = field(3)?.parse().map_err(|_| "bad lat".to_string())?;
    if !valid_coordinate(lon, lat) {
        return Err(format!("coordinate out of range ({lon}, {lat})"));
    }
    let kind = match field(4)? {
        "lock" => EventKind::Lock,
        "unlock" => EventKind::Unlock,
        other => return Err(format!("unknown kind `{other}`")),
    };
    Ok(RawEvent {
        bike_id: bike_id.to_string(),
        timestamp,
        lon,
        lat,
        kind,
    })
}

/// Reads an events file, transparently decompressing `*.gz`.
pub fn read_events_file(path: &Path, strict: bool) -> Result<ParseOutcome> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::with_capacity(1 << 20, file);
    if path.extension().is_some_and(|e| e == "gz") {
        parse_events(flate2::read::MultiGzDecoder::new(reader), strict)
    } else {
        parse_events(reader, strict)
    }
}

pub fn write_events<W: std::io::Write>(events: &[RawEvent], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", HEADER.join(","))?;
    for e in events {
        writeln!(
            out,
            "{},{},{:.8},{:.8},{}",
            e.bike_id,
            e.timestamp,
            e.lon,
            e.lat,
            e.kind.as_str()
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Chains
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StayPoint {
    pub lon: f64,
    pub lat: f64,
    pub arrive: Timestamp,
    pub depart: Timestamp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BikeChain {
    pub bike_id: String,
    /// Consecutive segments are separated by exactly one repositioning.
    pub segments: Vec<Vec<StayPoint>>,
    /// Accepted unlock→lock pairs.
    pub trips: usize,
    pub lock_events: usize,
    pub orphan_locks: usize,
    pub orphan_unlocks: usize,
    pub merged_away: usize,
    /// Time of the unlock that ended each repositioning, one per boundary.
    pub repositionings: Vec<Timestamp>,
}

impl BikeChain {
    pub fn stay_count(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainParams {
    /// Locked displacement (m) above which a move is operator repositioning.
    pub s_sched: f64,
    /// Distance (m) within which consecutive stays merge.
    pub s_stay: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            s_sched: 500.0,
            s_stay: 100.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ChainStats {
    pub events: usize,
    pub bikes: usize,
    pub bikes_omitted: usize,
    pub lock_events: usize,
    pub stays: usize,
    pub trips: usize,
    pub orphan_locks: usize,
    pub orphan_unlocks: usize,
    pub merged_away: usize,
    pub repositionings: usize,
    pub segments: usize,
}

#[derive(Debug, Clone)]
pub struct ChainBuild {
    pub chains: Vec<BikeChain>,
    pub stats: ChainStats,
}

/// Groups, sorts and segments events into per-bike chains. Output is ordered
/// by `bike_id` and independent of input order and thread count.
pub fn build_chains(mut events: Vec<RawEvent>, params: ChainParams) -> Result<ChainBuild> {
    if !(params.s_sched > 0.0) || !(params.s_stay >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "thresholds must satisfy s_sched > 0 and s_stay >= 0 (got {}, {})",
            params.s_sched, params.s_stay
        )));
    }
    if events.is_empty() {
        return Err(Error::InvalidInput("no events".into()));
    }
    events.par_sort_unstable_by(event_order);
    let end_of_data = events.iter().map(|e| e.timestamp).max().unwrap();

    let mut bounds = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].bike_id != events[start].bike_id {
            bounds.push((start, i));
            start = i;
        }
    }

    let chains: Vec<BikeChain> = bounds
        .par_iter()
        .map(|&(s, e)| chain_for_bike(&events[s..e], params, end_of_data))
        .collect();

    let mut stats = ChainStats {
        events: events.len(),
        bikes: chains.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(chains.len());
    for c in chains {
        stats.lock_events += c.lock_events;
        stats.orphan_locks += c.orphan_locks;
        stats.orphan_unlocks += c.orphan_unlocks;
        stats.merged_away += c.merged_away;
        stats.trips += c.trips;
        if c.stay_count() == 0 {
            stats.bikes_omitted += 1;
            continue;
        }
        stats.stays += c.stay_count();
        stats.repositionings += c.repositionings.len();
        stats.segments += c.segments.len();
        kept.push(c);
    }
    Ok(ChainBuild { chains: kept, stats })
}

struct Candidate {
    lon: f64,
    lat: f64,
    arrive: Timestamp,
    depart: Timestamp,
}

#[derive(Default)]
struct MergeRun {
    items: Vec<Candidate>,
}

impl MergeRun {
    fn last(&self) -> Option<&Candidate> {
        self.items.last()
    }

    /// Duration-weighted centroid; equal weights when every stay has zero
    /// duration.
    fn finish(&mut self) -> Option<StayPoint> {
        if self.items.is_empty() {
            return None;
        }
        let total: f64 = self
            .items
            .iter()
            .map(|c| (c.depart.0 - c.arrive.0) as f64)
            .sum();
        let (lon, lat) = if total > 0.0 {
            self.items.iter().fold((0.0, 0.0), |(x, y), c| {
                let w = (c.depart.0 - c.arrive.0) as f64 / total;
                (x + w * c.lon, y + w * c.lat)
            })
        } else {
            let k = self.items.len() as f64;
            self.items
                .iter()
                .fold((0.0, 0.0), |(x, y), c| (x + c.lon / k, y + c.lat / k))
        };
        let stay = StayPoint {
            lon,
            lat,
            arrive: self.items[0].arrive,
            depart: self.items.last().unwrap().depart,
        };
        self.items.clear();
        Some(stay)
    }
}

/// Builds one bike's chain from its sorted events.
///
/// An event that repeats the kind of the previously accepted event is an
/// orphan and dropped, as is a lock with no preceding unlock.
fn chain_for_bike(events: &[RawEvent], params: ChainParams, end_of_data: Timestamp) -> BikeChain {
    let mut chain = BikeChain {
        bike_id: events[0].bike_id.clone(),
        segments: Vec::new(),
        trips: 0,
        lock_events: 0,
        orphan_locks: 0,
        orphan_unlocks: 0,
        merged_away: 0,
        repositionings: Vec::new(),
    };
    let mut segment: Vec<StayPoint> = Vec::new();
    let mut run = MergeRun::default();
    let mut last: Option<&RawEvent> = None;

    let push_candidate = |run: &mut MergeRun, segment: &mut Vec<StayPoint>, chain: &mut BikeChain, c: Candidate| {
        if let Some(prev) = run.last() {
            if haversine_m(prev.lon, prev.lat, c.lon, c.lat) <= params.s_stay {
                chain.merged_away += 1;
                run.items.push(c);
                return;
            }
            segment.extend(run.finish());
        }
        run.items.push(c);
    };

    for ev in events {
        match ev.kind {
            EventKind::Lock => {
                chain.lock_events += 1;
                match last {
                    Some(prev) if prev.kind == EventKind::Unlock => {
                        chain.trips += 1;
                        last = Some(ev);
                    }
                    _ => chain.orphan_locks += 1,
                }
            }
            EventKind::Unlock => match last {
                Some(lock) if lock.kind == EventKind::Lock => {
                    let moved = haversine_m(lock.lon, lock.lat, ev.lon, ev.lat);
                    if moved > params.s_sched {
                        let c = Candidate {
                            lon: lock.lon,
                            lat: lock.lat,
                            arrive: lock.timestamp,
                            depart: ev.timestamp,
                        };
                        push_candidate(&mut run, &mut segment, &mut chain, c);
                        segment.extend(run.finish());
                        chain.segments.push(std::mem::take(&mut segment));
                        chain.repositionings.push(ev.timestamp);
                    } else {
                        let c = Candidate {
                            lon: 0.5 * (lock.lon + ev.lon),
                            lat: 0.5 * (lock.lat + ev.lat),
                            arrive: lock.timestamp,
                            depart: ev.timestamp,
                        };
                        push_candidate(&mut run, &mut segment, &mut chain, c);
                    }
                    last = Some(ev);
                }
                Some(_) => chain.orphan_unlocks += 1,
                None => last = Some(ev),
            },
        }
    }
    if let Some(lock) = last.filter(|e| e.kind == EventKind::Lock) {
        let c = Candidate {
            lon: lock.lon,
            lat: lock.lat,
            arrive: lock.timestamp,
            depart: end_of_data.max(lock.timestamp),
        };
        push_candidate(&mut run, &mut segment, &mut chain, c);
    }
    segment.extend(run.finish());
    chain.segments.push(segment);
    chain
}
