//! Point-of-interest coverage estimation from WiFi sensor counts.
//!
//! Each record is one sensor at a POI with the number of distinct devices
//! it observed. Nearby sensors double-count passers-by, so the estimator
//! walks every sensor and discounts, per neighbor within the radius, half
//! the co-visit probability times the smaller of the two original counts;
//! sensors discounted to nothing drop out after their pass. The surviving
//! mass over the city population is the fraction of residents at least
//! one sensor saw.

use std::collections::HashMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::PoiError;

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6_371.0;

/// Great-circle distance in km between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

/// One sensor at a point of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub sensor: String,
    pub city: String,
    pub lat: f64,
    pub lon: f64,
    /// Distinct devices observed over the whole collection period.
    pub raw_count: f64,
    /// Distinct devices observed per collection day.
    pub visits_by_day: Vec<f64>,
}

impl PoiRecord {
    pub fn validate(&self, row: usize) -> Result<(), PoiError> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(PoiError::InvalidCoordinates { lat: self.lat, lon: self.lon });
        }
        if self.raw_count < 0.0 {
            return Err(PoiError::Format { row, reason: "negative raw_count".into() });
        }
        Ok(())
    }
}

/// Parses `sensor,city,lat,lon,raw_count,visits_by_day` CSV rows, where
/// `visits_by_day` is a bracketed list like `"[67, 39]"`.
pub fn read_poi_csv<R: Read>(r: R) -> Result<Vec<PoiRecord>, PoiError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let rec = rec.map_err(|e| PoiError::Format { row, reason: e.to_string() })?;
        if rec.len() != 6 {
            return Err(PoiError::Format { row, reason: format!("expected 6 columns, got {}", rec.len()) });
        }
        let parse = |s: &str, what: &str| -> Result<f64, PoiError> {
            s.trim().parse().map_err(|_| PoiError::Format { row, reason: format!("bad {what}: `{s}`") })
        };
        let visits_raw = rec[5].trim();
        let inner = visits_raw
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| PoiError::Format { row, reason: "visits_by_day must be bracketed".into() })?;
        let mut visits_by_day = Vec::new();
        for part in inner.split([',', ';']) {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            visits_by_day.push(parse(part, "visits_by_day entry")?);
        }
        let record = PoiRecord {
            sensor: rec[0].trim().to_string(),
            city: rec[1].trim().to_string(),
            lat: parse(&rec[2], "lat")?,
            lon: parse(&rec[3], "lon")?,
            raw_count: parse(&rec[4], "raw_count")?,
            visits_by_day,
        };
        record.validate(row)?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_poi_csv<W: std::io::Write>(records: &[PoiRecord], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sensor", "city", "lat", "lon", "raw_count", "visits_by_day"])?;
    for r in records {
        let visits = format!(
            "[{}]",
            r.visits_by_day.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", ")
        );
        wtr.write_record([
            r.sensor.clone(),
            r.city.clone(),
            format!("{}", r.lat),
            format!("{}", r.lon),
            format!("{}", r.raw_count),
            visits,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn filter_city<'a>(records: &'a [PoiRecord], city: &str) -> Result<Vec<&'a PoiRecord>, PoiError> {
    let out: Vec<&PoiRecord> = records.iter().filter(|r| r.city == city).collect();
    if out.is_empty() {
        return Err(PoiError::EmptyCityFilter(city.to_string()));
    }
    Ok(out)
}

/// Fraction of `population` observed by at least one sensor, after
/// discounting double counting between sensors within `radius_km`.
///
/// `p` is the probability that a device seen at one sensor also passes a
/// given nearby sensor; each ordered pair (i, j) within the radius
/// removes `p/2 * min(raw_i, raw_j)` from sensor i's count. The minimum
/// always uses the original counts. Sensors driven to zero or below are
/// dropped once the pass that emptied them completes.
pub fn estimate_coverage(
    records: &[&PoiRecord],
    population: f64,
    p: f64,
    radius_km: f64,
) -> Result<f64, PoiError> {
    if population <= 0.0 {
        return Err(PoiError::ZeroPopulation);
    }
    let n = records.len();
    let mut adjusted: Vec<f64> = records.iter().map(|r| r.raw_count).collect();
    let mut active: Vec<bool> = vec![true; n];

    // Spatial hash over ~radius-sized cells keeps the pass near-linear on
    // spread-out data.
    let cell_deg = (radius_km / 111.0).max(1e-6);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let cell_of = |r: &PoiRecord| {
        ((r.lat / cell_deg).floor() as i64, (r.lon / cell_deg).floor() as i64)
    };
    for (i, r) in records.iter().enumerate() {
        grid.entry(cell_of(r)).or_default().push(i);
    }

    for i in 0..n {
        if !active[i] {
            continue;
        }
        let (ci, cj) = cell_of(records[i]);
        // Longitude cells shrink toward the poles; widen the neighborhood.
        let lon_span =
            (1.0 / records[i].lat.to_radians().cos().abs().max(0.01)).ceil() as i64;
        for di in -1..=1 {
            for dj in -lon_span..=lon_span {
                let Some(cell) = grid.get(&(ci + di, cj + dj)) else { continue };
                for &j in cell {
                    if j == i || !active[j] {
                        continue;
                    }
                    let d = haversine_km(
                        (records[i].lat, records[i].lon),
                        (records[j].lat, records[j].lon),
                    );
                    if d <= radius_km {
                        adjusted[i] -= p / 2.0 * records[i].raw_count.min(records[j].raw_count);
                    }
                }
            }
        }
        if adjusted[i] <= 0.0 {
            active[i] = false;
        }
    }

    let total: f64 =
        (0..n).filter(|&i| active[i]).map(|i| adjusted[i].max(0.0)).sum();
    Ok(total / population)
}

/// Fraction of total visits that were repeat visits on later days:
/// `1 - sum(raw) / sum(visits_by_day)`.
pub fn day_overlap(records: &[&PoiRecord]) -> f64 {
    let raw: f64 = records.iter().map(|r| r.raw_count).sum();
    let visits: f64 = records.iter().map(|r| r.visits_by_day.iter().sum::<f64>()).sum();
    if visits <= 0.0 {
        return 0.0;
    }
    1.0 - raw / visits
}

/// Mean visits per distinct observed device.
pub fn visit_frequency(records: &[&PoiRecord]) -> f64 {
    let raw: f64 = records.iter().map(|r| r.raw_count).sum();
    let visits: f64 = records.iter().map(|r| r.visits_by_day.iter().sum::<f64>()).sum();
    if raw <= 0.0 {
        return 0.0;
    }
    visits / raw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub p: f64,
    pub radius_km: f64,
    pub coverage: f64,
}

pub fn coverage_sweep(
    records: &[&PoiRecord],
    population: f64,
    ps: &[f64],
    radii_km: &[f64],
) -> Result<Vec<CoverageCell>, PoiError> {
    let mut out = Vec::with_capacity(ps.len() * radii_km.len());
    for &p in ps {
        for &radius_km in radii_km {
            let coverage = estimate_coverage(records, population, p, radius_km)?;
            out.push(CoverageCell { p, radius_km, coverage });
        }
    }
    Ok(out)
}

/// Synthetic large-city dataset shaped like real wardriving collections:
/// 5,085 close pairs of sensors plus one lone sensor (10,171 in all) laid
/// out on a 6 km grid, every sensor seeing 67 distinct devices over two
/// days with 39 returning the second day.
pub fn synthetic_city_fixture() -> (Vec<PoiRecord>, f64) {
    const PAIRS: usize = 5_085;
    const POPULATION: f64 = 2_326_090.0;
    let base: (f64, f64) = (29.76, -95.36); // city center
    let km_lat = 6.0 / 111.19;
    let km_lon = 6.0 / (111.19 * base.0.to_radians().cos());
    let side = 72usize;
    let mut records: Vec<PoiRecord> = Vec::with_capacity(PAIRS * 2 + 1);
    let place = |n: usize, idx: usize, offset_km_lat: f64| {
        let row = idx / side;
        let col = idx % side;
        PoiRecord {
            sensor: format!("s{n:05}"),
            city: "metro".into(),
            lat: base.0 + row as f64 * km_lat + offset_km_lat / 111.19,
            lon: base.1 + col as f64 * km_lon,
            raw_count: 67.0,
            visits_by_day: vec![67.0, 39.0],
        }
    };
    for idx in 0..PAIRS {
        records.push(place(records.len(), idx, 0.0));
        // Twin 100 m away.
        records.push(place(records.len(), idx, 0.1));
    }
    records.push(place(records.len(), PAIRS, 0.0));
    (records, POPULATION)
}
