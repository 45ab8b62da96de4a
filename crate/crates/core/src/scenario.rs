//! Scenario files and road resampling.
//!
//! A scenario is a TOML document (`schema_version = 1`) with the sections
//! `[road]`, `[[chargers]]`, `[vehicle]`, `[battery]`, `[thermal]`, `[costs]`
//! and `[boundary]`. Road breakpoints are given inline as
//! `breakpoints = [[s_m, alt_m, vmin_mps, vmax_mps], ...]` or in a CSV sidecar
//! (`csv = "road.csv"`, header `s_m,alt_m,vmin_mps,vmax_mps`). The battery power
//! limits may likewise come from `power_limits_csv`. Relative sidecar paths are
//! resolved against the scenario file's directory. Units are SI throughout,
//! temperatures are in °C.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BatteryMaps, PowerLimitGrid, ThermalParams, VehicleParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Road gradients are capped to this magnitude (radians).
pub const MAX_GRADE_RAD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadBreakpoint {
    pub s_m: f64,
    pub alt_m: f64,
    pub vmin_mps: f64,
    pub vmax_mps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadProfile {
    pub breakpoints: Vec<RoadBreakpoint>,
}

impl RoadProfile {
    /// Route length `s_f`.
    pub fn length(&self) -> f64 {
        self.breakpoints.last().map_or(0.0, |b| b.s_m)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let expected = ["s_m", "alt_m", "vmin_mps", "vmax_mps"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse(format!(
                "road CSV header must be `{}`",
                expected.join(",")
            )));
        }
        let mut breakpoints = Vec::new();
        for rec in rdr.deserialize() {
            let bp: RoadBreakpoint = rec.map_err(|e| Error::Parse(e.to_string()))?;
            breakpoints.push(bp);
        }
        Ok(RoadProfile { breakpoints })
    }

    /// Road gradient at every breakpoint (central differences of the altitude).
    pub fn gradients(&self) -> Vec<f64> {
        breakpoint_gradients(&self.breakpoints)
    }

    /// `(alpha, vmin, vmax)` at `s`, linear between breakpoints; `gradients`
    /// is the output of [`RoadProfile::gradients`].
    pub fn sample(&self, gradients: &[f64], s: f64) -> (f64, f64, f64) {
        let bps = &self.breakpoints;
        let k = bps.partition_point(|b| b.s_m <= s).clamp(1, bps.len() - 1) - 1;
        let t = ((s - bps[k].s_m) / (bps[k + 1].s_m - bps[k].s_m)).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + t * (b - a);
        (
            lerp(gradients[k], gradients[k + 1]),
            lerp(bps[k].vmin_mps, bps[k + 1].vmin_mps),
            lerp(bps[k].vmax_mps, bps[k + 1].vmax_mps),
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("s_m,alt_m,vmin_mps,vmax_mps\n");
        for b in &self.breakpoints {
            out.push_str(&format!("{},{},{},{}\n", b.s_m, b.alt_m, b.vmin_mps, b.vmax_mps));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let bps = &self.breakpoints;
        if bps.len() < 2 {
            return Err(Error::validation("road.breakpoints", "need at least two breakpoints"));
        }
        if bps[0].s_m != 0.0 {
            return Err(Error::validation("road.breakpoints[0].s_m", "route must start at s = 0"));
        }
        for (i, b) in bps.iter().enumerate() {
            let f = |name: &str| format!("road.breakpoints[{i}].{name}");
            if !b.alt_m.is_finite() {
                return Err(Error::validation(f("alt_m"), "must be finite"));
            }
            if !(b.vmin_mps.is_finite() && b.vmin_mps > 0.0) {
                return Err(Error::validation(f("vmin_mps"), "must be > 0"));
            }
            if !(b.vmax_mps.is_finite() && b.vmax_mps >= b.vmin_mps) {
                return Err(Error::validation(f("vmax_mps"), "must be >= vmin_mps"));
            }
            if i > 0 && !(b.s_m > bps[i - 1].s_m) {
                return Err(Error::validation(f("s_m"), "positions must be strictly increasing"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargerSpec {
    /// Position along the route.
    pub s_chg_m: f64,
    /// Rated grid power.
    pub p_grid_max_w: f64,
    /// Energy price.
    pub c_e_per_kwh: f64,
    /// Occupancy price, charged per second beyond `t_free_s`.
    pub c_t_per_s: f64,
    pub t_free_s: f64,
    pub t_chg_max_s: f64,
}

impl ChargerSpec {
    /// Energy price per joule.
    pub fn c_e_per_joule(&self) -> f64 {
        self.c_e_per_kwh / 3.6e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConditions {
    pub t_b0_c: f64,
    pub soc0: f64,
    pub v0_mps: f64,
    pub t_bf_min_c: f64,
    pub soc_f_min: f64,
    pub t_amb_c: f64,
    pub t_b_min_c: f64,
    pub t_b_max_c: f64,
    pub soc_min: f64,
    pub soc_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    /// Trip-time price per second. Negative values are admitted.
    pub c_t_trip: f64,
}

/// Immutable problem description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub road: RoadProfile,
    pub chargers: Vec<ChargerSpec>,
    pub vehicle: VehicleParams,
    pub battery: BatteryMaps,
    pub thermal: ThermalParams,
    pub costs: CostWeights,
    pub boundary: BoundaryConditions,
}

// ---- file representation ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(default)]
    name: String,
    road: RoadSection,
    #[serde(default)]
    chargers: Vec<ChargerSpec>,
    vehicle: VehicleParams,
    battery: BatterySection,
    thermal: ThermalParams,
    costs: CostWeights,
    boundary: BoundaryConditions,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    csv: Option<PathBuf>,
    /// Rows of `[s_m, alt_m, vmin_mps, vmax_mps]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    breakpoints: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatterySection {
    capacity_ah: f64,
    u0_v: f64,
    u1_v: f64,
    r_ref_ohm: f64,
    t_ref_c: f64,
    k_r_per_k: f64,
    r_floor_ohm: f64,
    r_cap_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power_limits_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    power_limits: Option<PowerLimitGrid>,
}

/// Read and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Scenario::from_toml_str(&text, base)
}

fn read_sidecar(base: &Path, rel: &Path) -> Result<std::fs::File> {
    let p = if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        base.join(rel)
    };
    std::fs::File::open(&p).map_err(|e| Error::io(p, e))
}

impl Scenario {
    /// Parse a scenario document; sidecar paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        let road = match (file.road.csv, file.road.breakpoints) {
            (Some(_), Some(_)) => {
                return Err(Error::validation("road", "give either `csv` or `breakpoints`, not both"))
            }
            (Some(csv), None) => RoadProfile::from_csv_reader(read_sidecar(base_dir, &csv)?)?,
            (None, Some(rows)) => RoadProfile {
                breakpoints: rows
                    .into_iter()
                    .map(|r| RoadBreakpoint {
                        s_m: r[0],
                        alt_m: r[1],
                        vmin_mps: r[2],
                        vmax_mps: r[3],
                    })
                    .collect(),
            },
            (None, None) => return Err(Error::validation("road", "missing `csv` or `breakpoints`")),
        };
        let b = file.battery;
        let power_limits = match (b.power_limits_csv, b.power_limits) {
            (Some(_), Some(_)) => {
                return Err(Error::validation(
                    "battery.power_limits",
                    "give either `power_limits_csv` or `power_limits`, not both",
                ))
            }
            (Some(csv), None) => PowerLimitGrid::from_csv_reader(read_sidecar(base_dir, &csv)?)?,
            (None, Some(g)) => g,
            (None, None) => PowerLimitGrid::default(),
        };
        let scn = Scenario {
            name: file.name,
            road,
            chargers: file.chargers,
            vehicle: file.vehicle,
            battery: BatteryMaps {
                capacity_ah: b.capacity_ah,
                u0_v: b.u0_v,
                u1_v: b.u1_v,
                r_ref_ohm: b.r_ref_ohm,
                t_ref_c: b.t_ref_c,
                k_r_per_k: b.k_r_per_k,
                r_floor_ohm: b.r_floor_ohm,
                r_cap_ohm: b.r_cap_ohm,
                power_limits,
            },
            thermal: file.thermal,
            costs: file.costs,
            boundary: file.boundary,
        };
        scn.validate()?;
        Ok(scn)
    }

    /// Serialize with all data inline (no sidecars).
    pub fn to_toml_string(&self) -> Result<String> {
        let b = &self.battery;
        let file = ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            road: RoadSection {
                csv: None,
                breakpoints: Some(
                    self.road
                        .breakpoints
                        .iter()
                        .map(|p| [p.s_m, p.alt_m, p.vmin_mps, p.vmax_mps])
                        .collect(),
                ),
            },
            chargers: self.chargers.clone(),
            vehicle: self.vehicle.clone(),
            battery: BatterySection {
                capacity_ah: b.capacity_ah,
                u0_v: b.u0_v,
                u1_v: b.u1_v,
                r_ref_ohm: b.r_ref_ohm,
                t_ref_c: b.t_ref_c,
                k_r_per_k: b.k_r_per_k,
                r_floor_ohm: b.r_floor_ohm,
                r_cap_ohm: b.r_cap_ohm,
                power_limits_csv: None,
                power_limits: Some(b.power_limits.clone()),
            },
            thermal: self.thermal.clone(),
            costs: self.costs.clone(),
            boundary: self.boundary.clone(),
        };
        toml::to_string(&file).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Copy with the battery heater and cooler disabled (cabin heating unchanged).
    pub fn without_btm(&self) -> Scenario {
        let mut s = self.clone();
        s.thermal.btm_enabled = false;
        s
    }

    pub fn with_time_weight(&self, c_t_trip: f64) -> Scenario {
        let mut s = self.clone();
        s.costs.c_t_trip = c_t_trip;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.road.validate()?;
        let s_f = self.road.length();
        let mut prev = 0.0;
        for (i, c) in self.chargers.iter().enumerate() {
            let f = |name: &str| format!("chargers[{i}].{name}");
            if !(c.s_chg_m > 0.0 && c.s_chg_m <= s_f) {
                return Err(Error::validation(
                    f("s_chg_m"),
                    format!("position {} outside (0, {s_f}]; the field is s_chg", c.s_chg_m),
                ));
            }
            if i > 0 && !(c.s_chg_m > prev) {
                return Err(Error::validation(f("s_chg_m"), "charger positions must be strictly increasing"));
            }
            prev = c.s_chg_m;
            if !(c.p_grid_max_w.is_finite() && c.p_grid_max_w > 0.0) {
                return Err(Error::validation(f("p_grid_max_w"), "must be > 0"));
            }
            for (name, v) in [
                ("c_e_per_kwh", c.c_e_per_kwh),
                ("c_t_per_s", c.c_t_per_s),
                ("t_free_s", c.t_free_s),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::validation(f(name), "must be >= 0"));
                }
            }
            if !(c.t_chg_max_s.is_finite() && c.t_chg_max_s > crate::dynamics::T_CHG_FLOOR_S) {
                return Err(Error::validation(f("t_chg_max_s"), "must exceed the 1 s charging floor"));
            }
        }
        self.vehicle.validate("vehicle")?;
        self.battery.validate("battery")?;
        self.thermal.validate("thermal")?;
        if !self.costs.c_t_trip.is_finite() {
            return Err(Error::validation("costs.c_t_trip", "must be finite"));
        }
        let bc = &self.boundary;
        let fields = [
            ("t_b0_c", bc.t_b0_c),
            ("soc0", bc.soc0),
            ("v0_mps", bc.v0_mps),
            ("t_bf_min_c", bc.t_bf_min_c),
            ("soc_f_min", bc.soc_f_min),
            ("t_amb_c", bc.t_amb_c),
            ("t_b_min_c", bc.t_b_min_c),
            ("t_b_max_c", bc.t_b_max_c),
            ("soc_min", bc.soc_min),
            ("soc_max", bc.soc_max),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::validation(format!("boundary.{name}"), "must be finite"));
            }
        }
        if !(0.0 <= bc.soc_min && bc.soc_min <= bc.soc0 && bc.soc0 <= bc.soc_max && bc.soc_max <= 1.0) {
            return Err(Error::validation(
                "boundary.soc0",
                "need 0 <= soc_min <= soc0 <= soc_max <= 1",
            ));
        }
        if !(bc.soc_f_min <= bc.soc_max) {
            return Err(Error::validation("boundary.soc_f_min", "must not exceed soc_max"));
        }
        if !(bc.t_b_min_c <= bc.t_b0_c && bc.t_b0_c <= bc.t_b_max_c) {
            return Err(Error::validation("boundary.t_b0_c", "must lie in [t_b_min_c, t_b_max_c]"));
        }
        if bc.t_bf_min_c > bc.t_b_max_c {
            return Err(Error::validation("boundary.t_bf_min_c", "must not exceed t_b_max_c"));
        }
        let first = &self.road.breakpoints[0];
        if !(bc.v0_mps >= first.vmin_mps && bc.v0_mps <= first.vmax_mps) {
            return Err(Error::validation("boundary.v0_mps", "initial speed outside the speed limits at s = 0"));
        }
        Ok(())
    }
}

/// A charger position that was moved onto the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapRecord {
    pub charger: usize,
    pub from_m: f64,
    pub to_m: f64,
}

/// Road data sampled on the distance grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGrid {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub altitude: Vec<f64>,
    pub vmin: Vec<f64>,
    pub vmax: Vec<f64>,
    /// Grid node of each charger, in charger order.
    pub charger_nodes: Vec<usize>,
    pub snaps: Vec<SnapRecord>,
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).min(n - 1).max(1) - 1;
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

impl RoadGrid {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Road gradient at `s`, linear between grid nodes.
    pub fn alpha_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.alpha, s)
    }

    pub fn vmin_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.vmin, s)
    }

    pub fn vmax_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.vmax, s)
    }

    pub fn altitude_at(&self, s: f64) -> f64 {
        interp(&self.s, &self.altitude, s)
    }
}

/// Gradient at each breakpoint from central differences of the altitude.
fn breakpoint_gradients(bps: &[RoadBreakpoint]) -> Vec<f64> {
    let n = bps.len();
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let slope = (bps[b].alt_m - bps[a].alt_m) / (bps[b].s_m - bps[a].s_m);
            slope.atan().clamp(-MAX_GRADE_RAD, MAX_GRADE_RAD)
        })
        .collect()
}

/// Sample the road on a grid of spacing `ds` (the last interval may be shorter)
/// and snap the chargers onto grid nodes.
pub fn resample_road(profile: &RoadProfile, chargers: &[ChargerSpec], ds: f64) -> Result<RoadGrid> {
    if profile.breakpoints.len() < 2 {
        return Err(Error::validation("road.breakpoints", "need at least two breakpoints"));
    }
    if !(ds.is_finite() && ds > 0.0) {
        return Err(Error::validation("ds", "grid spacing must be > 0"));
    }
    let bps = &profile.breakpoints;
    let s_f = profile.length();
    let n_int = ((s_f / ds) - 1e-9).ceil().max(1.0) as usize;
    let mut s: Vec<f64> = (0..n_int).map(|k| k as f64 * ds).collect();
    s.push(s_f);

    let bs: Vec<f64> = bps.iter().map(|b| b.s_m).collect();
    let ga = breakpoint_gradients(bps);
    let alt: Vec<f64> = bps.iter().map(|b| b.alt_m).collect();
    let vmin: Vec<f64> = bps.iter().map(|b| b.vmin_mps).collect();
    let vmax: Vec<f64> = bps.iter().map(|b| b.vmax_mps).collect();

    let mut charger_nodes = Vec::with_capacity(chargers.len());
    let mut snaps = Vec::new();
    for (i, c) in chargers.iter().enumerate() {
        let k = s
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - c.s_chg_m).abs().total_cmp(&(b.1 - c.s_chg_m).abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let dist = (s[k] - c.s_chg_m).abs();
        if dist > 0.5 * ds + 1e-9 {
            return Err(Error::validation(
                format!("chargers[{i}].s_chg_m"),
                format!("cannot snap {} m onto the grid (nearest node {} m)", c.s_chg_m, s[k]),
            ));
        }
        if k == 0 {
            return Err(Error::validation(
                format!("chargers[{i}].s_chg_m"),
                "charger snaps onto the start of the route",
            ));
        }
        if charger_nodes.last().is_some_and(|&prev| prev >= k) {
            return Err(Error::validation(
                format!("chargers[{i}].s_chg_m"),
                "two chargers snap onto the same grid node",
            ));
        }
        if dist > 1e-9 {
            warn!("charger {i} at {} m snapped to grid node {} m", c.s_chg_m, s[k]);
            snaps.push(SnapRecord {
                charger: i,
                from_m: c.s_chg_m,
                to_m: s[k],
            });
        }
        charger_nodes.push(k);
    }

    Ok(RoadGrid {
        alpha: s.iter().map(|&x| interp(&bs, &ga, x)).collect(),
        altitude: s.iter().map(|&x| interp(&bs, &alt, x)).collect(),
        vmin: s.iter().map(|&x| interp(&bs, &vmin, x)).collect(),
        vmax: s.iter().map(|&x| interp(&bs, &vmax, x)).collect(),
        s,
        charger_nodes,
        snaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn flat(length: f64) -> RoadProfile {
        RoadProfile {
            breakpoints: vec![
                RoadBreakpoint { s_m: 0.0, alt_m: 0.0, vmin_mps: 18.0, vmax_mps: 30.0 },
                RoadBreakpoint { s_m: length, alt_m: 0.0, vmin_mps: 18.0, vmax_mps: 30.0 },
            ],
        }
    }

    fn charger_at(s: f64) -> ChargerSpec {
        ChargerSpec {
            s_chg_m: s,
            p_grid_max_w: 150e3,
            c_e_per_kwh: 5.0,
            c_t_per_s: 0.0,
            t_free_s: 0.0,
            t_chg_max_s: 3600.0,
        }
    }

    #[test]
    fn profile_sampling_matches_grid() {
        let scn = reference::reference_scenario();
        let grid = resample_road(&scn.road, &scn.chargers, 2000.0).unwrap();
        let ga = scn.road.gradients();
        for k in 0..grid.len() {
            let (a, lo, hi) = scn.road.sample(&ga, grid.s[k]);
            assert!((a - grid.alpha[k]).abs() < 1e-15);
            assert_eq!((lo, hi), (grid.vmin[k], grid.vmax[k]));
        }
    }

    #[test]
    fn flat_profile_grid() {
        let g = resample_road(&flat(10_000.0), &[], 2000.0).unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.alpha.iter().all(|&a| a == 0.0));
        assert!(g.s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn linear_climb_has_constant_gradient() {
        let mut p = flat(10_000.0);
        p.breakpoints[1].alt_m = 100.0;
        let g = resample_road(&p, &[], 2000.0).unwrap();
        let expected = 0.01f64.atan();
        for a in &g.alpha {
            assert!((a - expected).abs() < 1e-12);
        }
        assert!((expected - 0.01).abs() < 1e-6);
    }

    #[test]
    fn charger_snaps_to_nearest_node() {
        let g = resample_road(&flat(10_000.0), &[charger_at(3100.0)], 2000.0).unwrap();
        assert_eq!(g.s[g.charger_nodes[0]], 4000.0);
        assert_eq!(g.snaps, vec![SnapRecord { charger: 0, from_m: 3100.0, to_m: 4000.0 }]);
    }

    #[test]
    fn uneven_length_gets_short_last_interval() {
        let g = resample_road(&flat(9000.0), &[charger_at(9000.0)], 2000.0).unwrap();
        assert_eq!(g.s, vec![0.0, 2000.0, 4000.0, 6000.0, 8000.0, 9000.0]);
        assert_eq!(g.charger_nodes, vec![5]);
    }

    #[test]
    fn degenerate_profile_rejected() {
        let p = RoadProfile { breakpoints: vec![flat(1.0).breakpoints[0]] };
        assert!(resample_road(&p, &[], 100.0).is_err());
    }

    #[test]
    fn chargers_on_same_node_rejected() {
        let r = resample_road(&flat(10_000.0), &[charger_at(3900.0), charger_at(4100.0)], 2000.0);
        assert!(r.is_err());
    }

    #[test]
    fn reference_round_trip() {
        let scn = reference::reference_scenario();
        let text = scn.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text, Path::new(".")).unwrap();
        assert_eq!(scn, back);
    }

    #[test]
    fn table1_parameter_block() {
        let scn = reference::reference_scenario();
        let v = &scn.vehicle;
        assert_eq!(v.mass_kg, 2200.0);
        assert_eq!(v.drag_coeff, 0.6);
        assert_eq!(v.frontal_area_m2, 1.36);
        assert_eq!(v.roll_coeff, 0.013);
        assert_eq!(v.air_density_kg_m3, 1.29);
        assert_eq!(scn.thermal.cp_mb_j_per_k, 375_000.0);
        assert_eq!(scn.battery.capacity_c(), 200.0 * 3600.0);
    }

    #[test]
    fn charger_beyond_route_is_named() {
        let mut scn = reference::reference_scenario();
        scn.chargers[0].s_chg_m = scn.road.length() + 1.0;
        let err = scn.validate().unwrap_err().to_string();
        assert!(err.contains("s_chg"), "{err}");
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let err = Scenario::from_toml_str("schema_version = [", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn csv_sidecars_are_resolved_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let scn = reference::reference_scenario();
        std::fs::write(dir.path().join("road.csv"), scn.road.to_csv_string()).unwrap();
        std::fs::write(dir.path().join("limits.csv"), scn.battery.power_limits.to_csv_string()).unwrap();
        let mut text = scn.to_toml_string().unwrap();
        let mut doc: toml::Table = toml::from_str(&text).unwrap();
        let road = doc.get_mut("road").unwrap().as_table_mut().unwrap();
        road.remove("breakpoints");
        road.insert("csv".into(), "road.csv".into());
        let bat = doc.get_mut("battery").unwrap().as_table_mut().unwrap();
        bat.remove("power_limits");
        bat.insert("power_limits_csv".into(), "limits.csv".into());
        text = toml::to_string(&doc).unwrap();
        let path = dir.path().join("s.scn");
        std::fs::write(&path, text).unwrap();
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, scn);
    }
}
