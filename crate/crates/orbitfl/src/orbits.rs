//! Circular two-body orbit propagation, ground-station rotation, and the
//! elevation-angle visibility test that together produce deterministic
//! time-indexed connectivity sets.
//!
//! The model is deliberately minimal: spherical Earth, constant rotation
//! rate, no perturbations. Scheduling only needs realistic intermittent and
//! heterogeneous connectivity, not ephemeris-grade accuracy. "Connected
//! during interval i" means one and the same station is visible at every
//! sampled instant of the interval; a handover mid-interval does not count as
//! a sustained link.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::SatId;

/// Mean Earth radius of the spherical model, meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
/// Geocentric gravitational constant, m^3/s^2.
pub const EARTH_MU: f64 = 3.986_004_418e14;
/// Earth rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;

/// Circular-orbit elements: size, plane orientation, and initial phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitalElements {
    pub semi_major_axis_m: f64,
    pub inclination_rad: f64,
    /// Right ascension of the ascending node.
    pub raan_rad: f64,
    /// Initial angle along the orbit, measured from the ascending node.
    pub phase_rad: f64,
}

impl OrbitalElements {
    pub fn validate(&self) -> Result<()> {
        if !self.semi_major_axis_m.is_finite() || self.semi_major_axis_m <= EARTH_RADIUS_M {
            return Err(Error::InvalidElements(format!(
                "semi-major axis {} m must exceed the Earth radius",
                self.semi_major_axis_m
            )));
        }
        for (name, v) in [
            ("inclination", self.inclination_rad),
            ("raan", self.raan_rad),
            ("phase", self.phase_rad),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidElements(format!("non-finite {name}")));
            }
        }
        Ok(())
    }

    /// Mean motion `n = sqrt(mu / a^3)`, rad/s.
    pub fn mean_motion(&self) -> f64 {
        (EARTH_MU / self.semi_major_axis_m.powi(3)).sqrt()
    }

    /// Orbital period, seconds.
    pub fn period_s(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion()
    }
}

/// A ground station on the spherical Earth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub latitude_rad: f64,
    pub longitude_rad: f64,
    pub altitude_m: f64,
}

impl GroundStation {
    pub fn validate(&self) -> Result<()> {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let pi = std::f64::consts::PI;
        if !self.latitude_rad.is_finite() || self.latitude_rad.abs() > half_pi {
            return Err(Error::InvalidStation(format!("latitude {} out of range", self.latitude_rad)));
        }
        if !self.longitude_rad.is_finite() || self.longitude_rad < -pi || self.longitude_rad >= pi {
            return Err(Error::InvalidStation(format!(
                "longitude {} outside [-pi, pi)",
                self.longitude_rad
            )));
        }
        if !self.altitude_m.is_finite() || self.altitude_m < 0.0 {
            return Err(Error::InvalidStation(format!("altitude {} negative", self.altitude_m)));
        }
        Ok(())
    }
}

/// Earth-centered inertial position at time `t` (seconds since epoch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EciPosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

/// Position on the circular orbit at time `t`: phase advances at the mean
/// motion, then the in-plane point is rotated by inclination and RAAN.
pub fn propagate_satellite(elements: &OrbitalElements, t: f64) -> Result<EciPosition> {
    elements.validate()?;
    let a = elements.semi_major_axis_m;
    let theta = elements.phase_rad + elements.mean_motion() * t;
    let (sin_th, cos_th) = theta.sin_cos();
    let (sin_i, cos_i) = elements.inclination_rad.sin_cos();
    let (sin_o, cos_o) = elements.raan_rad.sin_cos();
    Ok(EciPosition {
        x: a * (cos_o * cos_th - sin_o * cos_i * sin_th),
        y: a * (sin_o * cos_th + cos_o * cos_i * sin_th),
        z: a * sin_i * sin_th,
        t,
    })
}

/// Geodetic-to-ECI conversion on the rotating spherical Earth.
pub fn ground_station_position(gs: &GroundStation, t: f64) -> Result<EciPosition> {
    gs.validate()?;
    let r = EARTH_RADIUS_M + gs.altitude_m;
    let lon = gs.longitude_rad + EARTH_ROTATION_RAD_S * t;
    let (sin_lat, cos_lat) = gs.latitude_rad.sin_cos();
    let (sin_lon, cos_lon) = lon.sin_cos();
    Ok(EciPosition { x: r * cos_lat * cos_lon, y: r * cos_lat * sin_lon, z: r * sin_lat, t })
}

/// Angle between the station's zenith direction and the station-to-satellite
/// line. Feasibility is `zenith_angle <= pi/2 - alpha_min`.
pub fn zenith_angle(sat: &EciPosition, gs: &EciPosition) -> Result<f64> {
    let gs_norm = (gs.x * gs.x + gs.y * gs.y + gs.z * gs.z).sqrt();
    if gs_norm == 0.0 {
        return Err(Error::InvalidGeometry("ground station at Earth center".into()));
    }
    let (dx, dy, dz) = (sat.x - gs.x, sat.y - gs.y, sat.z - gs.z);
    let d_norm = (dx * dx + dy * dy + dz * dz).sqrt();
    if d_norm == 0.0 {
        return Err(Error::InvalidGeometry("satellite coincides with the station".into()));
    }
    let cos = ((gs.x * dx + gs.y * dy + gs.z * dz) / (gs_norm * d_norm)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Whether the satellite is visible from the station at or above the minimum
/// elevation angle.
pub fn elevation_feasible(sat: &EciPosition, gs: &EciPosition, alpha_min_rad: f64) -> Result<bool> {
    Ok(zenith_angle(sat, gs)? <= std::f64::consts::FRAC_PI_2 - alpha_min_rad)
}

/// Time-indexed connectivity sets: for each interval `i` of length
/// `t0_seconds`, the sorted ids of satellites with a sustained link to some
/// ground station.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivitySets {
    sets: Vec<Vec<SatId>>,
    num_satellites: u32,
    t0_seconds: f64,
}

impl ConnectivitySets {
    pub fn new(sets: Vec<Vec<SatId>>, num_satellites: u32, t0_seconds: f64) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidConnectivity("horizon must be at least 1".into()));
        }
        if !(t0_seconds.is_finite() && t0_seconds > 0.0) {
            return Err(Error::InvalidConnectivity("t0_seconds must be positive".into()));
        }
        for (i, set) in sets.iter().enumerate() {
            if !set.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidConnectivity(format!(
                    "set {i} is not strictly sorted"
                )));
            }
            if let Some(&k) = set.last() {
                if k >= num_satellites {
                    return Err(Error::InvalidConnectivity(format!(
                        "set {i} names satellite {k} outside 0..{num_satellites}"
                    )));
                }
            }
        }
        Ok(Self { sets, num_satellites, t0_seconds })
    }

    pub fn horizon(&self) -> usize {
        self.sets.len()
    }

    pub fn num_satellites(&self) -> u32 {
        self.num_satellites
    }

    pub fn t0_seconds(&self) -> f64 {
        self.t0_seconds
    }

    /// Connected satellites during interval `i`; empty past the horizon.
    pub fn at(&self, i: usize) -> &[SatId] {
        self.sets.get(i).map(Vec::as_slice).unwrap_or(&[])
    }

    /// A fixed-length view starting at `start`; indices past the horizon read
    /// as empty, so planners near the end of a trace see no contacts there.
    pub fn window(&self, start: usize, len: usize) -> ConnectivityWindow<'_> {
        ConnectivityWindow { trace: self, start, len }
    }
}

/// Borrowed fixed-length slice of a trace, possibly padded with empty sets.
#[derive(Debug, Clone, Copy)]
pub struct ConnectivityWindow<'a> {
    trace: &'a ConnectivitySets,
    start: usize,
    len: usize,
}

impl<'a> ConnectivityWindow<'a> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn num_satellites(&self) -> u32 {
        self.trace.num_satellites()
    }

    /// Connected satellites at `offset` indices into the window.
    pub fn at(&self, offset: usize) -> &'a [SatId] {
        debug_assert!(offset < self.len);
        self.trace.at(self.start + offset)
    }
}

/// Sub-sampled evaluation of "feasible for the whole interval": satellite `k`
/// is in `C_i` iff some single station sees it at every sampled instant of
/// interval `i`.
pub fn compute_connectivity(
    constellation: &[OrbitalElements],
    stations: &[GroundStation],
    alpha_min_rad: f64,
    t0_seconds: f64,
    horizon: usize,
    substep_seconds: f64,
) -> Result<ConnectivitySets> {
    if constellation.is_empty() {
        return Err(Error::InvalidConfig("constellation is empty".into()));
    }
    if stations.is_empty() {
        return Err(Error::InvalidConfig("station list is empty".into()));
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if !(substep_seconds > 0.0 && substep_seconds <= t0_seconds) {
        return Err(Error::InvalidConfig(
            "substep_seconds must be in (0, t0_seconds]".into(),
        ));
    }
    for e in constellation {
        e.validate()?;
    }
    for s in stations {
        s.validate()?;
    }
    let samples_per_index = (t0_seconds / substep_seconds).ceil() as usize;
    let sets: Result<Vec<Vec<SatId>>> = exec::try_indexed_map(horizon, |i| {
        let interval_start = i as f64 * t0_seconds;
        let mut connected = Vec::new();
        for (k, elements) in constellation.iter().enumerate() {
            let sustained = stations.iter().any(|station| {
                (0..samples_per_index).all(|j| {
                    let t = interval_start + j as f64 * substep_seconds;
                    if t >= (i + 1) as f64 * t0_seconds {
                        return true;
                    }
                    let sat = propagate_satellite(elements, t).expect("validated elements");
                    let gs = ground_station_position(station, t).expect("validated station");
                    elevation_feasible(&sat, &gs, alpha_min_rad).expect("station off-center")
                })
            });
            if sustained {
                connected.push(k as SatId);
            }
        }
        Ok(connected)
    });
    ConnectivitySets::new(sets?, constellation.len() as u32, t0_seconds)
}

/// Per-index connection counts and per-satellite visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityStats {
    pub per_index_counts: Vec<usize>,
    pub per_satellite_visits: Vec<usize>,
}

pub fn connectivity_stats(sets: &ConnectivitySets) -> ConnectivityStats {
    let per_index_counts = (0..sets.horizon()).map(|i| sets.at(i).len()).collect();
    let mut per_satellite_visits = vec![0usize; sets.num_satellites() as usize];
    for i in 0..sets.horizon() {
        for &k in sets.at(i) {
            per_satellite_visits[k as usize] += 1;
        }
    }
    ConnectivityStats { per_index_counts, per_satellite_visits }
}

/// Writes a contact trace:
///
/// ```text
/// # horizon=<H> satellites=<K> t0_seconds=<T>
/// time_index,satellite_id
/// 0,3
/// ...
/// ```
///
/// Rows are one `(i, k)` membership each, sorted ascending.
pub fn save_contact_trace(sets: &ConnectivitySets, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# horizon={} satellites={} t0_seconds={}",
        sets.horizon(),
        sets.num_satellites(),
        sets.t0_seconds()
    );
    out.push_str("time_index,satellite_id\n");
    for i in 0..sets.horizon() {
        for &k in sets.at(i) {
            let _ = writeln!(out, "{i},{k}");
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

fn parse_kv<T: std::str::FromStr>(token: &str, key: &str, line: usize) -> Result<T> {
    let value = token
        .strip_prefix(&format!("{key}="))
        .ok_or_else(|| Error::TraceParse { line, msg: format!("expected `{key}=<value>`") })?;
    value
        .parse()
        .map_err(|_| Error::TraceParse { line, msg: format!("bad value for `{key}`: `{value}`") })
}

/// Reads a trace written by [`save_contact_trace`], rejecting unsorted,
/// duplicate, or out-of-range rows with the offending line number.
pub fn load_contact_trace(path: &Path) -> Result<ConnectivitySets> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or(Error::TraceParse { line: 1, msg: "missing comment header".into() })??;
    let tokens: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
    if !header.starts_with('#') || tokens.len() != 3 {
        return Err(Error::TraceParse {
            line: 1,
            msg: "expected `# horizon=<H> satellites=<K> t0_seconds=<T>`".into(),
        });
    }
    let horizon: usize = parse_kv(tokens[0], "horizon", 1)?;
    let num_satellites: u32 = parse_kv(tokens[1], "satellites", 1)?;
    let t0_seconds: f64 = parse_kv(tokens[2], "t0_seconds", 1)?;

    let columns = lines
        .next()
        .ok_or(Error::TraceParse { line: 2, msg: "missing column header".into() })??;
    if columns != "time_index,satellite_id" {
        return Err(Error::TraceParse { line: 2, msg: "expected `time_index,satellite_id`".into() });
    }
    if horizon == 0 {
        return Err(Error::TraceParse { line: 1, msg: "horizon must be at least 1".into() });
    }

    let mut sets: Vec<Vec<SatId>> = vec![Vec::new(); horizon];
    let mut prev: Option<(usize, SatId)> = None;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 3;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Error::TraceParse { line: line_no, msg: "expected two fields".into() })?;
        let i: usize = a.parse().map_err(|_| Error::TraceParse {
            line: line_no,
            msg: format!("bad time_index `{a}`"),
        })?;
        let k: SatId = b.parse().map_err(|_| Error::TraceParse {
            line: line_no,
            msg: format!("bad satellite_id `{b}`"),
        })?;
        if i >= horizon {
            return Err(Error::TraceParse {
                line: line_no,
                msg: format!("time_index {i} outside declared horizon {horizon}"),
            });
        }
        if k >= num_satellites {
            return Err(Error::TraceParse {
                line: line_no,
                msg: format!("satellite_id {k} outside declared range {num_satellites}"),
            });
        }
        if let Some(p) = prev {
            if (i, k) <= p {
                return Err(Error::TraceParse {
                    line: line_no,
                    msg: format!("row ({i},{k}) not sorted after ({},{})", p.0, p.1),
                });
            }
        }
        prev = Some((i, k));
        sets[i].push(k);
    }
    ConnectivitySets::new(sets, num_satellites, t0_seconds)
}

/// Counts sub-sampled ground-track dwell per latitude band ("zone") for each
/// satellite: `visits[k][z]`. Zones split latitude into `zones` equal bands
/// from the south pole up.
pub fn ground_track_zone_visits(
    constellation: &[OrbitalElements],
    zones: usize,
    t0_seconds: f64,
    horizon: usize,
    substep_seconds: f64,
) -> Result<Vec<Vec<u32>>> {
    if zones == 0 {
        return Err(Error::InvalidConfig("zones must be at least 1".into()));
    }
    if constellation.is_empty() {
        return Err(Error::InvalidConfig("constellation is empty".into()));
    }
    if !(substep_seconds > 0.0 && substep_seconds <= t0_seconds) || horizon == 0 {
        return Err(Error::InvalidConfig("invalid sampling parameters".into()));
    }
    for e in constellation {
        e.validate()?;
    }
    let total_samples = ((horizon as f64 * t0_seconds) / substep_seconds) as usize;
    let visits = exec::indexed_map(constellation.len(), |k| {
        let mut counts = vec![0u32; zones];
        for j in 0..total_samples {
            let t = j as f64 * substep_seconds;
            let pos = propagate_satellite(&constellation[k], t).expect("validated elements");
            let r = (pos.x * pos.x + pos.y * pos.y + pos.z * pos.z).sqrt();
            let lat = (pos.z / r).asin();
            let band = (((lat + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI)
                * zones as f64) as usize;
            counts[band.min(zones - 1)] += 1;
        }
        counts
    });
    Ok(visits)
}

/// One shell of a Walker-style constellation: evenly spread planes, evenly
/// spread in-plane phases, with a small inter-plane phase offset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkerGroup {
    pub planes: usize,
    pub sats_per_plane: usize,
    pub altitude_m: f64,
    pub inclination_deg: f64,
}

/// Expands Walker groups into orbital elements; satellites are numbered in
/// group order, plane-major.
pub fn walker_constellation(groups: &[WalkerGroup]) -> Result<Vec<OrbitalElements>> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut elements = Vec::new();
    for g in groups {
        if g.planes == 0 || g.sats_per_plane == 0 {
            return Err(Error::InvalidConfig("walker group must have planes and satellites".into()));
        }
        let total = (g.planes * g.sats_per_plane) as f64;
        for p in 0..g.planes {
            for s in 0..g.sats_per_plane {
                let e = OrbitalElements {
                    semi_major_axis_m: EARTH_RADIUS_M + g.altitude_m,
                    inclination_rad: g.inclination_deg.to_radians(),
                    raan_rad: tau * p as f64 / g.planes as f64,
                    phase_rad: tau * s as f64 / g.sats_per_plane as f64
                        + tau * p as f64 / total,
                };
                e.validate()?;
                elements.push(e);
            }
        }
    }
    if elements.is_empty() {
        return Err(Error::InvalidConfig("no walker groups given".into()));
    }
    Ok(elements)
}

fn station(lat_deg: f64, lon_deg: f64) -> GroundStation {
    GroundStation { latitude_rad: lat_deg.to_radians(), longitude_rad: lon_deg.to_radians(), altitude_m: 0.0 }
}

/// Twelve mixed-latitude stations: polar, mid-latitude, and near-equatorial.
pub fn reference_stations() -> Vec<GroundStation> {
    vec![
        station(78.2, 15.4),    // Svalbard
        station(68.3, -133.5),  // Inuvik
        station(67.9, 21.1),    // Kiruna
        station(64.8, -147.7),  // Fairbanks
        station(-72.0, 2.5),    // Troll
        station(-53.2, -70.9),  // Punta Arenas
        station(-46.5, 168.4),  // Awarua
        station(-42.8, 147.3),  // Hobart
        station(37.9, -75.5),   // Wallops
        station(25.2, 55.3),    // Dubai
        station(19.8, -155.5),  // South Point
        station(13.0, 77.6),    // Bangalore
    ]
}

/// Reference 192-satellite constellation: 8 planes of 24 at 1400 km,
/// sun-synchronous-like inclination.
///
/// The altitude is chosen so that near-overhead passes last longer than one
/// 15-minute time interval: "connected during interval i" requires a single
/// station to stay visible for the whole interval, and below roughly 1100 km
/// no pass is that long, which would leave every connectivity set empty.
pub fn reference_constellation() -> Vec<OrbitalElements> {
    walker_constellation(&[WalkerGroup {
        planes: 8,
        sats_per_plane: 24,
        altitude_m: 1_400_000.0,
        inclination_deg: 97.4,
    }])
    .expect("static reference config")
}
