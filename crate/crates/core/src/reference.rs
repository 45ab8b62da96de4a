//! Built-in scenarios used by the examples and tests.
//!
//! `reference_scenario` is a 60 km rolling-hills route with one fast charger
//! halfway, the default vehicle and a cold start at -10 °C. The same data ships
//! as `scenarios/reference.scn`.

use std::f64::consts::PI;

use crate::models::{BatteryMaps, ThermalParams, VehicleParams};
use crate::scenario::{
    BoundaryConditions, ChargerSpec, CostWeights, RoadBreakpoint, RoadProfile, Scenario,
};

pub const KMH: f64 = 1.0 / 3.6;

/// Time weight whose reference trip averages 100 km/h while driving, found by
/// bisection with `pareto::calibrate_time_weight` (0.0428 at the default grid).
pub const REFERENCE_TIME_WEIGHT: f64 = 0.043;

/// Weights of the reference Pareto sweep.
pub const REFERENCE_SWEEP: [f64; 5] = [0.01, 0.02, 0.03, 0.043, 0.06];

fn rolling_road(length_m: f64, amplitude_m: f64, wavelength_m: f64, step_m: f64) -> RoadProfile {
    let n = (length_m / step_m).round() as usize;
    let breakpoints = (0..=n)
        .map(|i| {
            let s = i as f64 * step_m;
            RoadBreakpoint {
                s_m: s,
                alt_m: amplitude_m * (2.0 * PI * s / wavelength_m).sin(),
                vmin_mps: 60.0 * KMH,
                vmax_mps: 120.0 * KMH,
            }
        })
        .collect();
    RoadProfile { breakpoints }
}

fn fast_charger(s_m: f64) -> ChargerSpec {
    ChargerSpec {
        s_chg_m: s_m,
        p_grid_max_w: 150e3,
        c_e_per_kwh: 5.0,
        c_t_per_s: 0.0,
        t_free_s: 0.0,
        t_chg_max_s: 5400.0,
    }
}

fn boundary(temp_c: f64) -> BoundaryConditions {
    BoundaryConditions {
        t_b0_c: temp_c,
        soc0: 0.4,
        v0_mps: 80.0 * KMH,
        t_bf_min_c: -30.0,
        soc_f_min: 0.4,
        t_amb_c: temp_c,
        t_b_min_c: -30.0,
        t_b_max_c: 55.0,
        soc_min: 0.1,
        soc_max: 0.95,
    }
}

/// Cold 60 km route with a charger at 30 km.
pub fn reference_scenario() -> Scenario {
    Scenario {
        name: "reference".into(),
        road: rolling_road(60e3, 30.0, 20e3, 1000.0),
        chargers: vec![fast_charger(30e3)],
        vehicle: VehicleParams::default(),
        battery: BatteryMaps::default(),
        thermal: ThermalParams::default(),
        costs: CostWeights { c_t_trip: REFERENCE_TIME_WEIGHT },
        boundary: boundary(-10.0),
    }
}

/// Flat 40 km route at 30 °C with the thermal actuators disabled; the battery
/// stays on the power-limit plateau throughout.
pub fn warm_plateau_scenario() -> Scenario {
    let road = rolling_road(40e3, 0.0, 20e3, 40e3);
    let thermal = ThermalParams { btm_enabled: false, ..ThermalParams::default() };
    Scenario {
        name: "warm-plateau".into(),
        road,
        chargers: vec![fast_charger(20e3)],
        vehicle: VehicleParams::default(),
        battery: BatteryMaps::default(),
        thermal,
        costs: CostWeights { c_t_trip: REFERENCE_TIME_WEIGHT },
        boundary: boundary(30.0),
    }
}

/// Reference route where the charger bills occupancy beyond five minutes.
pub fn occupancy_scenario() -> Scenario {
    let mut scn = reference_scenario();
    scn.name = "occupancy".into();
    scn.chargers[0].c_t_per_s = 0.05;
    scn.chargers[0].t_free_s = 300.0;
    scn
}
