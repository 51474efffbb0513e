//! Vehicle mobility traces: CSV ingestion and a random-waypoint generator.
//!
//! CSV schema (UTF-8, comma separated, header row required):
//!
//! ```text
//! vehicle_id,timestamp,x,y        # planar meters, already in arena frame
//! vehicle_id,timestamp,lat,lon    # WGS84 degrees, projected on ingest
//! ```
//!
//! `timestamp` is integer seconds since the Unix epoch. Latitude/longitude
//! rows are projected with an equirectangular map anchored at the south-west
//! corner of the data's bounding box.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Vec2;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrace {
    pub vehicle_id: String,
    /// `(seconds since epoch, position)`, strictly increasing in time.
    pub points: Vec<(i64, Vec2)>,
}

impl VehicleTrace {
    /// Position at time `t`, linearly interpolated and held constant outside
    /// the sampled span.
    pub fn position_at(&self, t: f64) -> Vec2 {
        let pts = &self.points;
        if pts.is_empty() {
            return Vec2::default();
        }
        let idx = pts.partition_point(|&(ts, _)| (ts as f64) <= t);
        if idx == 0 {
            return pts[0].1;
        }
        if idx == pts.len() {
            return pts[pts.len() - 1].1;
        }
        let (t0, p0) = pts[idx - 1];
        let (t1, p1) = pts[idx];
        let w = (t - t0 as f64) / (t1 - t0) as f64;
        Vec2::new(p0.x + w * (p1.x - p0.x), p0.y + w * (p1.y - p0.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSchema {
    Xy,
    LatLon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub traces: Vec<VehicleTrace>,
    pub skipped_rows: usize,
    pub duplicate_rows: usize,
}

const METERS_PER_DEG_LAT: f64 = 110_540.0;
const METERS_PER_DEG_LON_EQUATOR: f64 = 111_320.0;

pub fn ingest_traces(path: &Path, schema: TraceSchema, arena: [f64; 2]) -> Result<IngestReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traces(&text, schema, arena)
}

pub fn parse_traces(text: &str, schema: TraceSchema, arena: [f64; 2]) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let expected: [&str; 4] = match schema {
        TraceSchema::Xy => ["vehicle_id", "timestamp", "x", "y"],
        TraceSchema::LatLon => ["vehicle_id", "timestamp", "lat", "lon"],
    };
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Data("trace file is empty".into()));
    }
    let cols: Vec<usize> = expected
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<(String, i64, f64, f64)> = Vec::new();
    let mut skipped = 0;
    for rec in reader.records() {
        let Ok(rec) = rec else {
            skipped += 1;
            continue;
        };
        let field = |i: usize| rec.get(cols[i]).unwrap_or("");
        let id = field(0);
        let ts = field(1).parse::<i64>();
        let a = field(2).parse::<f64>();
        let b = field(3).parse::<f64>();
        match (id.is_empty(), ts, a, b) {
            (false, Ok(ts), Ok(a), Ok(b)) if a.is_finite() && b.is_finite() => {
                rows.push((id.to_string(), ts, a, b));
            }
            _ => skipped += 1,
        }
    }

    let rows: Vec<(String, i64, Vec2)> = match schema {
        TraceSchema::Xy => rows.into_iter().map(|(id, t, x, y)| (id, t, Vec2::new(x, y))).collect(),
        TraceSchema::LatLon => {
            let lat_min = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
            let lon_min = rows.iter().map(|r| r.3).fold(f64::INFINITY, f64::min);
            let lat_max = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
            let cos_lat = ((lat_min + lat_max) / 2.0).to_radians().cos();
            rows.into_iter()
                .map(|(id, t, lat, lon)| {
                    let x = (lon - lon_min) * METERS_PER_DEG_LON_EQUATOR * cos_lat;
                    let y = (lat - lat_min) * METERS_PER_DEG_LAT;
                    (id, t, Vec2::new(x, y))
                })
                .collect()
        }
    };

    let mut by_vehicle: BTreeMap<String, Vec<(i64, Vec2)>> = BTreeMap::new();
    for (id, t, p) in rows {
        if p.x < 0.0 || p.y < 0.0 || p.x > arena[0] || p.y > arena[1] {
            skipped += 1;
            continue;
        }
        by_vehicle.entry(id).or_default().push((t, p));
    }
    let mut duplicates = 0;
    let traces: Vec<VehicleTrace> = by_vehicle
        .into_iter()
        .map(|(vehicle_id, mut points)| {
            // stable sort keeps the first row of a duplicated timestamp
            points.sort_by_key(|&(t, _)| t);
            let before = points.len();
            points.dedup_by_key(|&mut (t, _)| t);
            duplicates += before - points.len();
            VehicleTrace { vehicle_id, points }
        })
        .collect();
    if traces.is_empty() {
        return Err(Error::Data(format!(
            "no valid trace rows ({skipped} rows skipped)"
        )));
    }
    Ok(IngestReport {
        traces,
        skipped_rows: skipped,
        duplicate_rows: duplicates,
    })
}

/// Writes traces in the `x,y` schema.
pub fn traces_to_csv(traces: &[VehicleTrace]) -> String {
    let mut out = String::from("vehicle_id,timestamp,x,y\n");
    for tr in traces {
        for (t, p) in &tr.points {
            out.push_str(&format!("{},{},{},{}\n", tr.vehicle_id, t, p.x, p.y));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub arena: [f64; 2],
    pub min_speed: f64,
    /// m/s
    pub max_speed: f64,
    pub max_pause: f64,
    /// Seconds between recorded samples.
    pub sample_interval: i64,
    /// First timestamp (seconds since epoch).
    pub start: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            arena: [10_000.0, 10_000.0],
            min_speed: 3.0,
            max_speed: 15.0,
            max_pause: 120.0,
            sample_interval: 60,
            start: 0,
        }
    }
}

/// Random-waypoint mobility: each vehicle repeatedly picks a uniform waypoint,
/// travels to it at a uniform speed, then pauses.
pub fn synth_traces(
    config: &SynthConfig,
    seed: u64,
    n_vehicles: usize,
    duration: i64,
) -> Result<Vec<VehicleTrace>> {
    if !(config.min_speed > 0.0 && config.max_speed >= config.min_speed) {
        return Err(Error::Config("need 0 < min_speed <= max_speed".into()));
    }
    if config.sample_interval <= 0 || duration < 0 {
        return Err(Error::Config("sample_interval must be positive and duration non-negative".into()));
    }
    let [w, h] = config.arena;
    let mut traces = Vec::with_capacity(n_vehicles);
    for v in 0..n_vehicles {
        let mut r = rng::stream(seed, "waypoint", v as u64);
        let uniform = |r: &mut rng::Stream| Vec2::new(r.random_range(0.0..=w), r.random_range(0.0..=h));
        let mut pos = uniform(&mut r);
        let mut target = uniform(&mut r);
        let mut speed = r.random_range(config.min_speed..=config.max_speed);
        let mut pause_left = 0.0f64;
        let mut points = vec![(config.start, pos)];
        let mut t = config.start;
        while t + config.sample_interval <= config.start + duration {
            let mut budget = config.sample_interval as f64;
            while budget > 0.0 {
                if pause_left > 0.0 {
                    let used = pause_left.min(budget);
                    pause_left -= used;
                    budget -= used;
                    continue;
                }
                let d = pos.dist(target);
                let reach = speed * budget;
                if reach < d {
                    let k = reach / d;
                    pos = Vec2::new(pos.x + k * (target.x - pos.x), pos.y + k * (target.y - pos.y));
                    budget = 0.0;
                } else {
                    budget -= d / speed;
                    pos = target;
                    target = uniform(&mut r);
                    speed = r.random_range(config.min_speed..=config.max_speed);
                    pause_left = r.random_range(0.0..=config.max_pause);
                }
            }
            t += config.sample_interval;
            points.push((t, pos));
        }
        traces.push(VehicleTrace {
            vehicle_id: format!("v{v:04}"),
            points,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARENA: [f64; 2] = [10_000.0, 10_000.0];

    #[test]
    fn empty_file_is_data_error() {
        assert!(matches!(parse_traces("", TraceSchema::Xy, ARENA), Err(Error::Data(_))));
        assert!(matches!(
            parse_traces("vehicle_id,timestamp,x,y\n", TraceSchema::Xy, ARENA),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn malformed_row_is_skipped() {
        let text = "vehicle_id,timestamp,x,y\nbus1,100,10.5,20\nbus1,oops,1,2\n";
        let rep = parse_traces(text, TraceSchema::Xy, ARENA).unwrap();
        assert_eq!(rep.traces.len(), 1);
        assert_eq!(rep.traces[0].points.len(), 1);
        assert_eq!(rep.skipped_rows, 1);
    }

    #[test]
    fn rows_sorted_and_deduplicated() {
        let text = "vehicle_id,timestamp,x,y\nb,30,3,3\na,20,2,2\nb,10,1,1\nb,30,9,9\n";
        let rep = parse_traces(text, TraceSchema::Xy, ARENA).unwrap();
        assert_eq!(rep.traces.len(), 2);
        let b = &rep.traces[1];
        assert_eq!(b.points, vec![(10, Vec2::new(1.0, 1.0)), (30, Vec2::new(3.0, 3.0))]);
        assert_eq!(rep.duplicate_rows, 1);
    }

    #[test]
    fn latlon_projection_anchors_at_southwest() {
        let text = "vehicle_id,timestamp,lat,lon\nr,0,-22.90,-43.20\nr,60,-22.89,-43.19\n";
        let rep = parse_traces(text, TraceSchema::LatLon, ARENA).unwrap();
        let pts = &rep.traces[0].points;
        assert_eq!(pts[0].1, Vec2::new(0.0, 0.0));
        assert!((pts[1].1.y - 1105.4).abs() < 1.0);
        assert!(pts[1].1.x > 1000.0 && pts[1].1.x < 1030.0);
    }

    #[test]
    fn missing_file_is_io_error() {
        let r = ingest_traces(Path::new("/nonexistent/traces.csv"), TraceSchema::Xy, ARENA);
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn synth_is_deterministic_and_speed_bounded() {
        let cfg = SynthConfig::default();
        let a = synth_traces(&cfg, 4, 20, 3600).unwrap();
        assert_eq!(a, synth_traces(&cfg, 4, 20, 3600).unwrap());
        for tr in &a {
            assert_eq!(tr.points.len(), 61);
            for w in tr.points.windows(2) {
                let dt = (w[1].0 - w[0].0) as f64;
                assert!(w[1].1.dist(w[0].1) <= cfg.max_speed * dt + 1e-9);
            }
        }
    }

    #[test]
    fn synth_round_trips_through_csv() {
        let cfg = SynthConfig::default();
        let traces = synth_traces(&cfg, 8, 5, 1800).unwrap();
        let rep = parse_traces(&traces_to_csv(&traces), TraceSchema::Xy, ARENA).unwrap();
        assert_eq!(rep.traces, traces);
        assert_eq!(rep.skipped_rows, 0);
    }

    #[test]
    fn long_run_covers_all_quadrants() {
        let cfg = SynthConfig::default();
        let traces = synth_traces(&cfg, 21, 50, 6 * 3600).unwrap();
        let mut quad = [0usize; 4];
        for tr in &traces {
            for (_, p) in &tr.points {
                let q = usize::from(p.x >= 5000.0) + 2 * usize::from(p.y >= 5000.0);
                quad[q] += 1;
            }
        }
        let total: usize = quad.iter().sum();
        for q in quad {
            assert!(q as f64 > 0.1 * total as f64, "{quad:?}");
        }
    }

    #[test]
    fn interpolation_between_samples() {
        let tr = VehicleTrace {
            vehicle_id: "a".into(),
            points: vec![(0, Vec2::new(0.0, 0.0)), (10, Vec2::new(10.0, 20.0))],
        };
        assert_eq!(tr.position_at(5.0), Vec2::new(5.0, 10.0));
        assert_eq!(tr.position_at(-3.0), Vec2::new(0.0, 0.0));
        assert_eq!(tr.position_at(99.0), Vec2::new(10.0, 20.0));
    }
}
