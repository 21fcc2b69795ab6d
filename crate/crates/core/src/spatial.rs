//! Grid-indexed spatial join of pings to facility footprints, and the visit
//! qualification rule.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::geometry::{LatLon, Polygon};
use crate::ingest::{Facility, PingRecord};
use crate::{Error, Result};

pub const DEFAULT_CELL_DEG: f64 = 0.01;

/// Upper bound on grid cells a single footprint may touch.
const MAX_CELLS_PER_FACILITY: i64 = 1 << 20;

const PINGS_PER_SHARD: usize = 1 << 16;

/// A device qualifies at a facility with more than this many traces.
pub const TRACE_THRESHOLD: u32 = 2;

pub fn qualifies(trace_count: u32) -> bool {
    trace_count > TRACE_THRESHOLD
}

/// Uniform lat/lon grid mapping each cell to the facilities whose bounding
/// box touches it.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_deg: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
    ids: Vec<String>,
    polygons: Vec<Polygon>,
}

impl SpatialIndex {
    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn cell_of(&self, p: LatLon) -> (i64, i64) {
        (
            (p.lat / self.cell_deg).floor() as i64,
            (p.lon / self.cell_deg).floor() as i64,
        )
    }

    pub fn nonempty_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn facility_count(&self) -> usize {
        self.ids.len()
    }

    pub fn facility_id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    /// Facilities whose bounding box touches the cell containing `p`; a
    /// superset of those whose footprint contains `p`.
    pub fn candidates(&self, p: LatLon) -> &[u32] {
        self.cells.get(&self.cell_of(p)).map_or(&[], Vec::as_slice)
    }

    /// Indices of facilities whose footprint contains `p`.
    pub fn containing(&self, p: LatLon) -> impl Iterator<Item = usize> + '_ {
        self.candidates(p)
            .iter()
            .map(|&i| i as usize)
            .filter(move |&i| self.polygons[i].contains(p))
    }
}

pub fn build_index(facilities: &[Facility], cell_deg: f64) -> Result<SpatialIndex> {
    if !(cell_deg > 0.0 && cell_deg.is_finite()) {
        return Err(Error::Config(format!(
            "grid cell size must be positive, got {cell_deg}"
        )));
    }
    let mut index = SpatialIndex {
        cell_deg,
        cells: HashMap::new(),
        ids: Vec::with_capacity(facilities.len()),
        polygons: Vec::with_capacity(facilities.len()),
    };
    for (i, f) in facilities.iter().enumerate() {
        let polygon = f
            .polygon
            .clone()
            .ok_or_else(|| Error::MissingPolygon(f.facility_id.clone()))?;
        let bb = polygon.bbox();
        let (lat0, lon0) = index.cell_of(LatLon::new(bb.min_lat, bb.min_lon));
        let (lat1, lon1) = index.cell_of(LatLon::new(bb.max_lat, bb.max_lon));
        if (lat1 - lat0 + 1).saturating_mul(lon1 - lon0 + 1) > MAX_CELLS_PER_FACILITY {
            return Err(Error::Config(format!(
                "grid cell {cell_deg} is too fine for the footprint of {}",
                f.facility_id
            )));
        }
        for a in lat0..=lat1 {
            for b in lon0..=lon1 {
                index.cells.entry((a, b)).or_default().push(i as u32);
            }
        }
        index.ids.push(f.facility_id.clone());
        index.polygons.push(polygon);
    }
    Ok(index)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct VisitAssignment {
    pub device_id: String,
    pub facility_id: String,
    pub trace_count: u32,
    pub qualifies: bool,
}

impl VisitAssignment {
    pub fn new(device_id: &str, facility_id: &str, trace_count: u32) -> Self {
        Self {
            device_id: device_id.to_owned(),
            facility_id: facility_id.to_owned(),
            trace_count,
            qualifies: qualifies(trace_count),
        }
    }
}

/// Counts contained pings per (device, facility) over the whole window.
///
/// A ping inside overlapping footprints counts toward each of them. The
/// output is sorted by device then facility id and does not depend on ping
/// order, cell size or thread count.
pub fn assign_visits(pings: &[PingRecord], index: &SpatialIndex) -> Vec<VisitAssignment> {
    let counts = pings
        .par_chunks(PINGS_PER_SHARD)
        .map(|chunk| {
            let mut local: HashMap<(&str, u32), u32> = HashMap::new();
            for p in chunk {
                for f in index.containing(p.position()) {
                    *local.entry((p.device_id.as_str(), f as u32)).or_default() += 1;
                }
            }
            local
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut out: Vec<VisitAssignment> = counts
        .into_iter()
        .map(|((device, f), n)| VisitAssignment::new(device, index.facility_id(f as usize), n))
        .collect();
    out.sort();
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedDevices {
    pub qualifying_devices: usize,
    pub multi_facility_devices: usize,
    /// multi / qualifying, or 0 when no device qualifies.
    pub fraction: f64,
}

/// Share of qualifying devices that qualify in at least two facilities.
pub fn shared_device_fraction(assignments: &[VisitAssignment]) -> SharedDevices {
    let mut per_device: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in assignments.iter().filter(|a| a.qualifies) {
        per_device.entry(&a.device_id).or_default().insert(&a.facility_id);
    }
    let qualifying_devices = per_device.len();
    let multi_facility_devices = per_device.values().filter(|s| s.len() >= 2).count();
    let fraction = if qualifying_devices == 0 {
        log::warn!("no device qualifies at any facility; shared-device fraction set to 0");
        0.0
    } else {
        multi_facility_devices as f64 / qualifying_devices as f64
    };
    SharedDevices {
        qualifying_devices,
        multi_facility_devices,
        fraction,
    }
}

const ASSIGNMENT_COLUMNS: [&str; 4] = ["device_id", "facility_id", "trace_count", "qualifies"];

pub fn write_assignments<W: Write>(sink: W, assignments: &[VisitAssignment]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(ASSIGNMENT_COLUMNS)?;
    for a in assignments {
        w.write_record([
            a.device_id.as_str(),
            a.facility_id.as_str(),
            &a.trace_count.to_string(),
            if a.qualifies { "1" } else { "0" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("assignments output", e))?;
    Ok(())
}

pub fn read_assignments<R: Read>(source: R) -> Result<Vec<VisitAssignment>> {
    let mut reader = csv::Reader::from_reader(source);
    if reader.headers()?.iter().ne(ASSIGNMENT_COLUMNS) {
        return Err(Error::Input(format!(
            "assignments header must be {}",
            ASSIGNMENT_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Input(format!("assignments line {line}: bad {what}"));
        let trace_count: u32 = row[2].parse().map_err(|_| bad("trace_count"))?;
        let a = VisitAssignment::new(&row[0], &row[1], trace_count);
        let flag = match &row[3] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("qualifies")),
        };
        if trace_count == 0 || flag != a.qualifies {
            return Err(bad("trace_count/qualifies pair"));
        }
        out.push(a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_from_point;

    fn square(id: &str, lat: f64, lon: f64, half: f64) -> Facility {
        let mut f = Facility::new(id, "CT", "09009");
        f.polygon = Some(
            Polygon::new(vec![
                LatLon::new(lat - half, lon - half),
                LatLon::new(lat - half, lon + half),
                LatLon::new(lat + half, lon + half),
                LatLon::new(lat + half, lon - half),
            ])
            .unwrap(),
        );
        f
    }

    fn ping(device: &str, lat: f64, lon: f64, t: i64) -> PingRecord {
        PingRecord {
            device_id: device.into(),
            latitude: lat,
            longitude: lon,
            timestamp: t,
        }
    }

    #[test]
    fn single_cell_facility() {
        let idx = build_index(&[square("A", 41.305, -72.925, 0.001)], 0.01).unwrap();
        assert_eq!(idx.nonempty_cells(), 1);
    }

    #[test]
    fn disjoint_bboxes() {
        let idx = build_index(
            &[square("A", 41.305, -72.925, 0.001), square("B", 41.505, -72.525, 0.001)],
            0.01,
        )
        .unwrap();
        let c: Vec<_> = idx.candidates(LatLon::new(41.3051, -72.9249)).to_vec();
        assert_eq!(c, vec![0]);
    }

    #[test]
    fn missing_polygon_names_facility() {
        let f = Facility::new("NOPOLY", "CT", "09009");
        match build_index(&[f], 0.01) {
            Err(Error::MissingPolygon(id)) => assert_eq!(id, "NOPOLY"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_cell_size() {
        assert!(build_index(&[], 0.0).is_err());
        assert!(build_index(&[], -1.0).is_err());
        assert!(build_index(&[square("A", 0.0, 0.0, 1.0)], 1e-9).is_err());
    }

    #[test]
    fn threshold_boundary() {
        let idx = build_index(
            &[square("A", 41.3, -72.9, 0.001), square("B", 41.4, -72.9, 0.001)],
            0.01,
        )
        .unwrap();
        let mut pings: Vec<_> = (0..3).map(|t| ping("d1", 41.3, -72.9, t)).collect();
        pings.extend((0..2).map(|t| ping("d2", 41.4, -72.9, t)));
        let out = assign_visits(&pings, &idx);
        assert_eq!(
            out,
            vec![VisitAssignment::new("d1", "A", 3), VisitAssignment::new("d2", "B", 2)]
        );
        assert!(out[0].qualifies);
        assert!(!out[1].qualifies);
    }

    #[test]
    fn overlapping_footprints_count_twice() {
        let idx = build_index(&[square("A", 0.0, 0.0, 0.002), square("B", 0.001, 0.001, 0.002)], 0.01).unwrap();
        let out = assign_visits(&[ping("d", 0.0005, 0.0005, 1)], &idx);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn shared_fraction_direct_count() {
        let mut a: Vec<_> = (0..9).map(|i| VisitAssignment::new(&format!("d{i}"), "A", 5)).collect();
        a.push(VisitAssignment::new("d9", "A", 3));
        a.push(VisitAssignment::new("d9", "B", 4));
        a.push(VisitAssignment::new("d0", "B", 2));
        let s = shared_device_fraction(&a);
        assert_eq!(s.qualifying_devices, 10);
        assert_eq!(s.multi_facility_devices, 1);
        assert!((s.fraction - 0.10).abs() < 1e-15);
    }

    #[test]
    fn shared_fraction_edge_cases() {
        let single: Vec<_> = (0..4).map(|i| VisitAssignment::new(&format!("d{i}"), "A", 3)).collect();
        assert_eq!(shared_device_fraction(&single).fraction, 0.0);
        assert_eq!(shared_device_fraction(&[]).fraction, 0.0);
        assert_eq!(
            shared_device_fraction(&[VisitAssignment::new("d", "A", 1)]).fraction,
            0.0
        );
    }

    #[test]
    fn fallback_footprint_join() {
        let mut f = Facility::new("A", "CT", "09009");
        f.polygon = Some(polygon_from_point(LatLon::new(41.3, -72.9), 30.0).unwrap());
        let idx = build_index(&[f], 0.01).unwrap();
        let pings: Vec<_> = (0..3).map(|t| ping("d", 41.3001, -72.9001, t)).collect();
        let far = ping("d", 41.31, -72.9, 9);
        let out = assign_visits(&[pings, vec![far]].concat(), &idx);
        assert_eq!(out, vec![VisitAssignment::new("d", "A", 3)]);
    }

    #[test]
    fn assignments_file_round_trip() {
        let a = vec![VisitAssignment::new("d,1", "A", 3), VisitAssignment::new("d2", "B", 1)];
        let mut buf = Vec::new();
        write_assignments(&mut buf, &a).unwrap();
        assert_eq!(read_assignments(buf.as_slice()).unwrap(), a);
        let inconsistent = "device_id,facility_id,trace_count,qualifies\nd,A,2,1\n";
        assert!(read_assignments(inconsistent.as_bytes()).is_err());
    }
}
