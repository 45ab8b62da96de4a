//! Optimized trip in physical units, plus file export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolveDiagnostics;

/// Driving segment between two stops (or the route ends), sampled on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSegment {
    pub s_m: Vec<f64>,
    pub altitude_m: Vec<f64>,
    pub alpha_rad: Vec<f64>,
    pub vmin_mps: Vec<f64>,
    pub vmax_mps: Vec<f64>,
    pub e: Vec<f64>,
    pub v_mps: Vec<f64>,
    pub soc: Vec<f64>,
    pub temp_c: Vec<f64>,
    pub p_hvch_w: Vec<f64>,
    pub p_hvac_w: Vec<f64>,
    pub a_t_mps2: Vec<f64>,
    pub p_b_w: Vec<f64>,
}

impl DriveSegment {
    pub fn len(&self) -> usize {
        self.s_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_m.is_empty()
    }

    /// Trapezoidal travel time over the segment.
    pub fn travel_time_s(&self) -> f64 {
        self.s_m
            .windows(2)
            .zip(self.v_mps.windows(2))
            .map(|(s, v)| (s[1] - s[0]) * 0.5 * (1.0 / v[0] + 1.0 / v[1]))
            .sum()
    }
}

/// One charging stop sampled on the normalized-time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeStop {
    pub charger: usize,
    pub s_m: f64,
    pub t_chg_s: f64,
    /// Billable occupancy time beyond the free period.
    pub sigma_s: f64,
    pub tau: Vec<f64>,
    pub soc: Vec<f64>,
    pub temp_c: Vec<f64>,
    pub p_hvch_w: Vec<f64>,
    pub p_hvac_w: Vec<f64>,
    pub p_grid_w: Vec<f64>,
    pub p_b_w: Vec<f64>,
}

impl ChargeStop {
    /// Grid energy with the grid power held over each interval.
    pub fn grid_energy_j(&self) -> f64 {
        self.tau
            .windows(2)
            .zip(&self.p_grid_w)
            .map(|(t, p)| (t[1] - t[0]) * self.t_chg_s * p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `c_t_trip` times the total trip time including charging.
    pub trip_time_cost: f64,
    pub energy_cost: Vec<f64>,
    pub occupancy_cost: Vec<f64>,
    pub total: f64,
}

impl CostBreakdown {
    pub fn new(trip_time_cost: f64, energy_cost: Vec<f64>, occupancy_cost: Vec<f64>) -> Self {
        let total = trip_time_cost + energy_cost.iter().sum::<f64>() + occupancy_cost.iter().sum::<f64>();
        CostBreakdown { trip_time_cost, energy_cost, occupancy_cost, total }
    }

    pub fn total_energy_cost(&self) -> f64 {
        self.energy_cost.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSummary {
    pub trip_time_s: f64,
    pub driving_time_s: f64,
    pub charging_time_s: f64,
    pub energy_cost: f64,
    /// `trip_min (chg_min) cost`, e.g. `294 (37) 453.0`.
    pub line: String,
}

impl TripSummary {
    pub fn new(driving_time_s: f64, charging_time_s: f64, energy_cost: f64) -> Self {
        let trip_time_s = driving_time_s + charging_time_s;
        TripSummary {
            trip_time_s,
            driving_time_s,
            charging_time_s,
            energy_cost,
            line: summary_line(trip_time_s, charging_time_s, energy_cost),
        }
    }
}

pub fn summary_line(trip_time_s: f64, charging_time_s: f64, energy_cost: f64) -> String {
    format!(
        "{:.0} ({:.0}) {:.1}",
        trip_time_s / 60.0,
        charging_time_s / 60.0,
        energy_cost
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSolution {
    pub scenario: String,
    pub c_t_trip: f64,
    /// Driving segments in route order; stop `i` lies between segments `i` and `i + 1`.
    pub segments: Vec<DriveSegment>,
    pub stops: Vec<ChargeStop>,
    pub costs: CostBreakdown,
    pub summary: TripSummary,
    pub diagnostics: Option<SolveDiagnostics>,
}

impl TripSolution {
    pub fn terminal_soc(&self) -> f64 {
        self.terminal_state().0
    }

    pub fn terminal_temp_c(&self) -> f64 {
        self.terminal_state().1
    }

    fn terminal_state(&self) -> (f64, f64) {
        let last_seg_end = self.segments.last().and_then(|s| s.s_m.last()).copied().unwrap_or(0.0);
        match self.stops.last() {
            Some(stop) if stop.s_m >= last_seg_end => {
                (*stop.soc.last().unwrap_or(&f64::NAN), *stop.temp_c.last().unwrap_or(&f64::NAN))
            }
            _ => {
                let seg = self.segments.last();
                (
                    seg.and_then(|s| s.soc.last()).copied().unwrap_or(f64::NAN),
                    seg.and_then(|s| s.temp_c.last()).copied().unwrap_or(f64::NAN),
                )
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Write `solution.json`, `drive_<k>.csv` and `charge_<i>.csv` into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("solution.json"), &self.to_json()?)?;
        for (k, seg) in self.segments.iter().enumerate() {
            write_file(&dir.join(format!("drive_{k}.csv")), &drive_csv(seg)?)?;
        }
        for (i, stop) in self.stops.iter().enumerate() {
            write_file(&dir.join(format!("charge_{i}.csv")), &charge_csv(stop)?)?;
        }
        Ok(())
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
}

fn ser(e: csv::Error) -> Error {
    Error::Serialize(e.to_string())
}

pub fn drive_csv(seg: &DriveSegment) -> Result<String> {
    let mut w = csv_writer();
    w.write_record([
        "s_m", "v_mps", "soc", "T_b_C", "P_b_W", "P_hvch_W", "P_hvac_W", "P_grid_W", "a_t_mps2",
    ])
    .map_err(ser)?;
    for k in 0..seg.len() {
        let row = [
            seg.s_m[k],
            seg.v_mps[k],
            seg.soc[k],
            seg.temp_c[k],
            seg.p_b_w[k],
            seg.p_hvch_w[k],
            seg.p_hvac_w[k],
            0.0,
            seg.a_t_mps2[k],
        ];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(ser)?;
    }
    finish(w)
}

pub fn charge_csv(stop: &ChargeStop) -> Result<String> {
    let mut w = csv_writer();
    w.write_record([
        "tau", "v_mps", "soc", "T_b_C", "P_b_W", "P_hvch_W", "P_hvac_W", "P_grid_W", "a_t_mps2",
    ])
    .map_err(ser)?;
    for j in 0..stop.tau.len() {
        let row = [
            stop.tau[j],
            0.0,
            stop.soc[j],
            stop.temp_c[j],
            stop.p_b_w[j],
            stop.p_hvch_w[j],
            stop.p_hvac_w[j],
            stop.p_grid_w[j],
            0.0,
        ];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(ser)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_line_format() {
        assert_eq!(summary_line(294.0 * 60.0, 37.0 * 60.0, 453.0), "294 (37) 453.0");
    }

    #[test]
    fn cost_total_is_sum_of_parts() {
        let c = CostBreakdown::new(72.5, vec![40.25, 1.0], vec![0.5, 0.0]);
        assert_eq!(c.total, 72.5 + 41.25 + 0.5);
    }
}
