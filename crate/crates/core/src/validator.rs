//! Independent time-domain replay of an optimized trip.
//!
//! The controls of a [`TripSolution`] are held piecewise constant on their own
//! grids (driving controls over distance, charging controls over normalized
//! time) and fed through the original time-domain equations with a fixed-step
//! RK4 integrator. The battery power is re-solved from the power balance at
//! every stage rather than read from the solution. Only the physical models and
//! the scenario are shared with the optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{accel_air, accel_grade_roll, accel_limits, heat_rates, power_limits, propulsion_power};
use crate::scenario::{CostWeights, Scenario};
use crate::solution::{CostBreakdown, TripSolution};

pub const DEFAULT_DT_S: f64 = 0.1;

/// Pass threshold for every constraint family (scaled violation) and for the
/// relative energy-balance error.
pub const PASS_TOL: f64 = 1e-3;

/// Below this speed the replay is considered stalled.
const V_STALL_MPS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Drive,
    Charge,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Drive => "drive",
            Mode::Charge => "charge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t_s: f64,
    pub s_m: f64,
    pub v_mps: f64,
    pub soc: f64,
    pub temp_c: f64,
    pub p_b_w: f64,
    pub p_grid_w: f64,
    pub mode: Mode,
    pub a_t_mps2: f64,
    pub p_hvch_w: f64,
    pub p_hvac_w: f64,
}

/// Energy flows of one driving segment or charging stop, integrated step by
/// step with the step's own controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEnergy {
    pub mode: Mode,
    pub index: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub soc_start: f64,
    pub soc_end: f64,
    /// Terminal load excluding Joule losses, net of grid power.
    pub load_j: f64,
    pub joule_j: f64,
    pub grid_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeEvent {
    pub charger: usize,
    pub s_m: f64,
    pub arrival_s: f64,
    pub departure_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub samples: Vec<TraceSample>,
    pub events: Vec<ChargeEvent>,
    pub phases: Vec<PhaseEnergy>,
}

impl SimTrace {
    pub fn trip_time_s(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t_s)
    }

    pub fn charging_time_s(&self) -> f64 {
        self.events.iter().fold(0.0, |acc, e| acc + e.departure_s - e.arrival_s)
    }

    pub fn mode_switches(&self) -> usize {
        self.samples.windows(2).filter(|w| w[0].mode != w[1].mode).count()
    }

    pub fn terminal(&self) -> Option<&TraceSample> {
        self.samples.last()
    }

    /// CSV with header `t_s,s_m,v_mps,soc,T_b_C,P_b_W,P_grid_W,mode`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t_s,s_m,v_mps,soc,T_b_C,P_b_W,P_grid_W,mode\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.t_s,
                s.s_m,
                s.v_mps,
                s.soc,
                s.temp_c,
                s.p_b_w,
                s.p_grid_w,
                s.mode.as_str()
            ));
        }
        out
    }
}

/// Time derivatives at one operating point, plus the battery power that
/// closes the power balance there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeRates {
    pub dv: f64,
    pub dsoc: f64,
    pub dtemp: f64,
    pub p_b: f64,
}

/// Low-loss solution of `P_b = load + R_b (P_b / U_oc)^2`.
fn battery_power(load: f64, u_oc: f64, r_b: f64) -> Result<f64> {
    let disc = 1.0 - 4.0 * r_b * load / (u_oc * u_oc);
    if !(disc >= 0.0) {
        return Err(Error::Domain(format!(
            "load of {load:.0} W exceeds the deliverable battery power"
        )));
    }
    Ok(2.0 * load / (1.0 + disc.sqrt()))
}

fn driving_load(scn: &Scenario, v: f64, a_t: f64, hvch: f64, hvac: f64) -> (f64, f64) {
    let (p_prop, loss) = propulsion_power(v, a_t, &scn.vehicle);
    (p_prop + hvch + hvac + scn.thermal.p_hvch_cabin_w + scn.vehicle.aux_power_w, loss)
}

fn charging_load(scn: &Scenario, hvch: f64, hvac: f64, p_grid: f64) -> f64 {
    hvch + hvac + scn.vehicle.aux_power_w - p_grid
}

fn joule(scn: &Scenario, soc: f64, temp: f64, p_b: f64) -> f64 {
    let i = p_b / scn.battery.u_oc(soc);
    scn.battery.r_b(temp) * i * i
}

/// Time-domain driving rates at speed `v` on gradient `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn driving_time_rates(
    scn: &Scenario,
    v: f64,
    soc: f64,
    temp_c: f64,
    p_hvch: f64,
    p_hvac: f64,
    a_t: f64,
    alpha: f64,
) -> Result<TimeRates> {
    let (load, loss) = driving_load(scn, v, a_t, p_hvch, p_hvac);
    let u_oc = scn.battery.u_oc(soc);
    let p_b = battery_power(load, u_oc, scn.battery.r_b(temp_c))?;
    let dv = a_t - accel_air(0.5 * v * v, &scn.vehicle) - accel_grade_roll(alpha, &scn.vehicle);
    let q = heat_rates(soc, temp_c, v, p_b, p_hvch, p_hvac, loss, scn.boundary.t_amb_c, &scn.thermal, &scn.battery);
    Ok(TimeRates {
        dv,
        dsoc: -p_b / (u_oc * scn.battery.capacity_c()),
        dtemp: q.total() / scn.thermal.cp_mb_j_per_k,
        p_b,
    })
}

/// Time-domain rates of a parked vehicle at a charger.
pub fn charging_time_rates(
    scn: &Scenario,
    soc: f64,
    temp_c: f64,
    p_hvch: f64,
    p_hvac: f64,
    p_grid: f64,
) -> Result<TimeRates> {
    let load = charging_load(scn, p_hvch, p_hvac, p_grid);
    let u_oc = scn.battery.u_oc(soc);
    let p_b = battery_power(load, u_oc, scn.battery.r_b(temp_c))?;
    let q = heat_rates(soc, temp_c, 0.0, p_b, p_hvch, p_hvac, 0.0, scn.boundary.t_amb_c, &scn.thermal, &scn.battery);
    Ok(TimeRates { dv: 0.0, dsoc: -p_b / (u_oc * scn.battery.capacity_c()), dtemp: q.total() / scn.thermal.cp_mb_j_per_k, p_b })
}

fn rk4<const N: usize>(
    x: &[f64; N],
    h: f64,
    mut f: impl FnMut(&[f64; N]) -> Result<[f64; N]>,
) -> Result<[f64; N]> {
    let add = |a: &[f64; N], k: &[f64; N], c: f64| {
        let mut out = *a;
        for i in 0..N {
            out[i] += c * k[i];
        }
        out
    };
    let k1 = f(x)?;
    let k2 = f(&add(x, &k1, 0.5 * h))?;
    let k3 = f(&add(x, &k2, 0.5 * h))?;
    let k4 = f(&add(x, &k3, h))?;
    let mut out = *x;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite("replay state".into()))
    }
}

struct Replay<'a> {
    scn: &'a Scenario,
    gradients: Vec<f64>,
    dt: f64,
    t: f64,
    soc: f64,
    temp: f64,
    trace: SimTrace,
}

impl Replay<'_> {
    fn drive_rhs(&self, x: &[f64; 4], u: [f64; 3]) -> Result<[f64; 4]> {
        let [s, v, soc, temp] = *x;
        if !(v > V_STALL_MPS) {
            return Err(Error::Domain(format!("vehicle stalled at s = {s:.1} m")));
        }
        let (alpha, _, _) = self.scn.road.sample(&self.gradients, s);
        let r = driving_time_rates(self.scn, v, soc, temp, u[0], u[1], u[2], alpha)?;
        Ok([v, r.dv, r.dsoc, r.dtemp])
    }

    /// Terminal load and Joule power at `x` under driving controls `u`.
    fn drive_power(&self, x: &[f64; 4], u: [f64; 3]) -> Result<(f64, f64, f64)> {
        let (load, _) = driving_load(self.scn, x[1], u[2], u[0], u[1]);
        let p_b = battery_power(load, self.scn.battery.u_oc(x[2]), self.scn.battery.r_b(x[3]))?;
        Ok((load, joule(self.scn, x[2], x[3], p_b), p_b))
    }

    fn push(&mut self, x: [f64; 4], p_b: f64, p_grid: f64, mode: Mode, u: [f64; 3]) {
        self.trace.samples.push(TraceSample {
            t_s: self.t,
            s_m: x[0],
            v_mps: x[1],
            soc: x[2],
            temp_c: x[3],
            p_b_w: p_b,
            p_grid_w: p_grid,
            mode,
            a_t_mps2: if mode == Mode::Drive { u[2] } else { 0.0 },
            p_hvch_w: u[0],
            p_hvac_w: u[1],
        });
    }

    fn drive_segment(&mut self, index: usize, seg: &crate::solution::DriveSegment) -> Result<()> {
        let mut x = [seg.s_m[0], seg.v_mps[0], self.soc, self.temp];
        let mut phase = PhaseEnergy {
            mode: Mode::Drive,
            index,
            t_start_s: self.t,
            t_end_s: self.t,
            soc_start: self.soc,
            soc_end: self.soc,
            load_j: 0.0,
            joule_j: 0.0,
            grid_j: 0.0,
        };
        if self.trace.samples.is_empty() {
            let u = [seg.p_hvch_w[0], seg.p_hvac_w[0], seg.a_t_mps2[0]];
            let (_, _, p_b) = self.drive_power(&x, u)?;
            self.push(x, p_b, 0.0, Mode::Drive, u);
        }
        for k in 0..seg.len() - 1 {
            let u = [seg.p_hvch_w[k], seg.p_hvac_w[k], seg.a_t_mps2[k]];
            let s_next = seg.s_m[k + 1];
            let max_steps = 10_000_000;
            for _ in 0..max_steps {
                let mut h = self.dt;
                let mut x_new = rk4(&x, h, |y| self.drive_rhs(y, u))?;
                let last = x_new[0] >= s_next;
                if last {
                    // secant on the step length so the step ends on the node
                    let (mut h0, mut f0) = (0.0, x[0] - s_next);
                    let mut f1 = x_new[0] - s_next;
                    for _ in 0..30 {
                        if f1.abs() < 1e-9 || f1 == f0 {
                            break;
                        }
                        let h2 = (h - f1 * (h - h0) / (f1 - f0)).clamp(0.0, self.dt);
                        h0 = h;
                        f0 = f1;
                        h = h2;
                        x_new = rk4(&x, h, |y| self.drive_rhs(y, u))?;
                        f1 = x_new[0] - s_next;
                    }
                    x_new[0] = s_next;
                }
                let (l0, j0, _) = self.drive_power(&x, u)?;
                let (l1, j1, p_b) = self.drive_power(&x_new, u)?;
                phase.load_j += 0.5 * h * (l0 + l1);
                phase.joule_j += 0.5 * h * (j0 + j1);
                x = x_new;
                if h > 0.0 {
                    self.t += h;
                    self.push(x, p_b, 0.0, Mode::Drive, u);
                }
                if last {
                    break;
                }
            }
        }
        self.soc = x[2];
        self.temp = x[3];
        phase.t_end_s = self.t;
        phase.soc_end = self.soc;
        self.trace.phases.push(phase);
        Ok(())
    }

    fn charge_stop(&mut self, index: usize, stop: &crate::solution::ChargeStop) -> Result<()> {
        let arrival = self.t;
        let mut x = [self.soc, self.temp];
        let mut phase = PhaseEnergy {
            mode: Mode::Charge,
            index,
            t_start_s: self.t,
            t_end_s: self.t,
            soc_start: self.soc,
            soc_end: self.soc,
            load_j: 0.0,
            joule_j: 0.0,
            grid_j: 0.0,
        };
        let scn = self.scn;
        let power = |x: &[f64; 2], u: [f64; 3]| -> Result<(f64, f64, f64)> {
            let load = charging_load(scn, u[0], u[1], u[2]);
            let p_b = battery_power(load, scn.battery.u_oc(x[0]), scn.battery.r_b(x[1]))?;
            Ok((load, joule(scn, x[0], x[1], p_b), p_b))
        };
        for j in 0..stop.tau.len() - 1 {
            let u = [stop.p_hvch_w[j], stop.p_hvac_w[j], stop.p_grid_w[j]];
            let span = (stop.tau[j + 1] - stop.tau[j]) * stop.t_chg_s;
            let n_steps = (span / self.dt).ceil().max(1.0) as usize;
            let h = span / n_steps as f64;
            for _ in 0..n_steps {
                let x_new = rk4(&x, h, |y| {
                    let r = charging_time_rates(scn, y[0], y[1], u[0], u[1], u[2])?;
                    Ok([r.dsoc, r.dtemp])
                })?;
                let (l0, j0, _) = power(&x, u)?;
                let (l1, j1, p_b) = power(&x_new, u)?;
                phase.load_j += 0.5 * h * (l0 + l1);
                phase.joule_j += 0.5 * h * (j0 + j1);
                phase.grid_j += h * u[2];
                x = x_new;
                self.t += h;
                self.trace.samples.push(TraceSample {
                    t_s: self.t,
                    s_m: stop.s_m,
                    v_mps: 0.0,
                    soc: x[0],
                    temp_c: x[1],
                    p_b_w: p_b,
                    p_grid_w: u[2],
                    mode: Mode::Charge,
                    a_t_mps2: 0.0,
                    p_hvch_w: u[0],
                    p_hvac_w: u[1],
                });
            }
        }
        self.soc = x[0];
        self.temp = x[1];
        phase.t_end_s = self.t;
        phase.soc_end = self.soc;
        self.trace.phases.push(phase);
        self.trace.events.push(ChargeEvent { charger: stop.charger, s_m: stop.s_m, arrival_s: arrival, departure_s: self.t });
        Ok(())
    }
}

/// Replay `sol` in the time domain with step `dt`. Steps are shortened to end
/// exactly where the driving controls switch.
pub fn simulate_time_domain(scn: &Scenario, sol: &TripSolution, dt: f64) -> Result<SimTrace> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation("dt", "must be > 0"));
    }
    if sol.segments.is_empty() || sol.segments.iter().any(|s| s.len() < 2) {
        return Err(Error::validation("solution.segments", "need at least one segment of two nodes"));
    }
    if sol.stops.len() > sol.segments.len() || sol.stops.iter().any(|s| s.tau.len() < 2) {
        return Err(Error::validation("solution.stops", "stops do not fit between the segments"));
    }
    let mut replay = Replay {
        scn,
        gradients: scn.road.gradients(),
        dt,
        t: 0.0,
        soc: scn.boundary.soc0,
        temp: scn.boundary.t_b0_c,
        trace: SimTrace { samples: Vec::new(), events: Vec::new(), phases: Vec::new() },
    };
    for (i, seg) in sol.segments.iter().enumerate() {
        replay.drive_segment(i, seg)?;
        if let Some(stop) = sol.stops.get(i) {
            replay.charge_stop(i, stop)?;
        }
    }
    Ok(replay.trace)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub name: String,
    /// Largest violation divided by the width of the admissible range.
    pub max_violation: f64,
    pub pass: bool,
}

/// Relative differences between the replay and the optimizer's own values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub terminal_soc_rel: f64,
    pub terminal_temp_rel: f64,
    pub trip_time_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub families: Vec<FamilyResult>,
    pub trip_time_s: f64,
    pub charging_time_s: f64,
    pub costs: CostBreakdown,
    pub terminal_soc: f64,
    pub terminal_temp_c: f64,
    /// Largest relative mismatch between the soc-implied battery energy and
    /// the integrated loads over any phase.
    pub energy_balance_rel_err: f64,
    pub tolerance: f64,
    pub agreement: Option<Agreement>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn family(&self, name: &str) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

fn excess(x: f64, lo: f64, hi: f64) -> f64 {
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    (lo - x).max(x - hi).max(0.0) / range
}

/// Largest relative error of the battery energy balance over the phases of a
/// trace: the soc-implied energy `C * U_oc(soc_mid) * (soc_start - soc_end)`
/// against the integrated load plus Joule losses. `U_oc` is affine in soc, so
/// the midpoint value is exact.
pub fn energy_balance_error(trace: &SimTrace, scn: &Scenario) -> f64 {
    trace
        .phases
        .iter()
        .map(|p| {
            let from_soc = scn.battery.capacity_c()
                * scn.battery.u_oc(0.5 * (p.soc_start + p.soc_end))
                * (p.soc_start - p.soc_end);
            let from_flow = p.load_j + p.joule_j;
            (from_soc - from_flow).abs() / from_flow.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Recompute the trip costs from the trace.
pub fn cost_accounting(trace: &SimTrace, scn: &Scenario, w: &CostWeights) -> CostBreakdown {
    let charge_phases = trace.phases.iter().filter(|p| p.mode == Mode::Charge);
    let mut energy = Vec::new();
    let mut occupancy = Vec::new();
    for (ev, phase) in trace.events.iter().zip(charge_phases) {
        let ch = &scn.chargers[ev.charger];
        energy.push(ch.c_e_per_joule() * phase.grid_j);
        occupancy.push(ch.c_t_per_s * (ev.departure_s - ev.arrival_s - ch.t_free_s).max(0.0));
    }
    CostBreakdown::new(w.c_t_trip * trace.trip_time_s(), energy, occupancy)
}

/// Check every sample of the trace against the scenario's bounds.
pub fn check_constraints(trace: &SimTrace, scn: &Scenario) -> ValidationReport {
    let bc = &scn.boundary;
    let th = &scn.thermal;
    let ga = scn.road.gradients();
    let mut worst = [0.0f64; 7];
    const NAMES: [&str; 7] = ["speed", "soc", "battery_temperature", "battery_power", "traction", "actuators", "terminal"];
    for s in &trace.samples {
        worst[1] = worst[1].max(excess(s.soc, bc.soc_min, bc.soc_max));
        worst[2] = worst[2].max(excess(s.temp_c, bc.t_b_min_c, bc.t_b_max_c));
        let (chg_min, dchg_max) = power_limits(s.soc, s.temp_c, &scn.battery);
        worst[3] = worst[3].max(excess(s.p_b_w, chg_min, dchg_max));
        match s.mode {
            Mode::Drive => {
                let (_, vmin, vmax) = scn.road.sample(&ga, s.s_m);
                worst[0] = worst[0].max(excess(s.v_mps, vmin, vmax));
                let (a_min, a_max) = accel_limits(0.5 * s.v_mps * s.v_mps, &scn.vehicle);
                worst[4] = worst[4].max(excess(s.a_t_mps2, a_min, a_max));
                worst[5] = worst[5]
                    .max(excess(s.p_hvch_w, 0.0, th.hvch_battery_max_driving()))
                    .max(excess(s.p_hvac_w, 0.0, th.hvac_battery_max()));
            }
            Mode::Charge => {
                let p_grid_max = scn.chargers.iter().map(|c| c.p_grid_max_w).fold(0.0, f64::max);
                worst[5] = worst[5]
                    .max(excess(s.p_hvch_w, 0.0, th.hvch_battery_max_charging()))
                    .max(excess(s.p_hvac_w, 0.0, th.hvac_battery_max()))
                    .max(excess(s.p_grid_w, 0.0, p_grid_max));
            }
        }
    }
    if let Some(last) = trace.terminal() {
        worst[6] = ((bc.soc_f_min - last.soc).max(0.0) / (bc.soc_max - bc.soc_min))
            .max((bc.t_bf_min_c - last.temp_c).max(0.0) / (bc.t_b_max_c - bc.t_b_min_c));
    }
    let mut families: Vec<FamilyResult> = NAMES
        .iter()
        .zip(worst)
        .map(|(name, v)| FamilyResult { name: (*name).into(), max_violation: v, pass: v <= PASS_TOL })
        .collect();
    let balance = energy_balance_error(trace, scn);
    families.push(FamilyResult { name: "energy_balance".into(), max_violation: balance, pass: balance <= PASS_TOL });
    let terminal = trace.terminal();
    ValidationReport {
        pass: families.iter().all(|f| f.pass),
        families,
        trip_time_s: trace.trip_time_s(),
        charging_time_s: trace.charging_time_s(),
        costs: cost_accounting(trace, scn, &scn.costs),
        terminal_soc: terminal.map_or(f64::NAN, |s| s.soc),
        terminal_temp_c: terminal.map_or(f64::NAN, |s| s.temp_c),
        energy_balance_rel_err: balance,
        tolerance: PASS_TOL,
        agreement: None,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Replay, check and cost `sol`, and compare against its own terminal state
/// and trip time.
pub fn validate(scn: &Scenario, sol: &TripSolution, dt: f64) -> Result<(SimTrace, ValidationReport)> {
    let trace = simulate_time_domain(scn, sol, dt)?;
    let mut report = check_constraints(&trace, scn);
    report.costs = cost_accounting(&trace, scn, &CostWeights { c_t_trip: sol.c_t_trip });
    report.agreement = Some(Agreement {
        terminal_soc_rel: rel(report.terminal_soc, sol.terminal_soc()),
        terminal_temp_rel: rel(report.terminal_temp_c, sol.terminal_temp_c()),
        trip_time_rel: rel(report.trip_time_s, sol.summary.trip_time_s),
    });
    Ok((trace, report))
}

#[cfg(test)]
mod tests;
