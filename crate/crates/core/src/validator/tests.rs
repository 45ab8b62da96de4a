use super::*;
use crate::reference::{warm_plateau_scenario, KMH};
use crate::scenario::{RoadBreakpoint, RoadProfile};
use crate::solution::{ChargeStop, DriveSegment, TripSummary};

fn flat(length_m: f64) -> Scenario {
    let mut scn = warm_plateau_scenario();
    scn.road = RoadProfile {
        breakpoints: vec![
            RoadBreakpoint { s_m: 0.0, alt_m: 0.0, vmin_mps: 60.0 * KMH, vmax_mps: 120.0 * KMH },
            RoadBreakpoint { s_m: length_m, alt_m: 0.0, vmin_mps: 60.0 * KMH, vmax_mps: 120.0 * KMH },
        ],
    };
    scn.chargers.clear();
    scn.boundary.soc_f_min = scn.boundary.soc_min;
    scn
}

fn cruise_segment(scn: &Scenario, s0: f64, s1: f64, n: usize, v: f64) -> DriveSegment {
    let a_t = accel_air(0.5 * v * v, &scn.vehicle) + accel_grade_roll(0.0, &scn.vehicle);
    let s_m: Vec<f64> = (0..n).map(|k| s0 + (s1 - s0) * k as f64 / (n - 1) as f64).collect();
    DriveSegment {
        altitude_m: vec![0.0; n],
        alpha_rad: vec![0.0; n],
        vmin_mps: vec![60.0 * KMH; n],
        vmax_mps: vec![120.0 * KMH; n],
        e: vec![0.5 * v * v; n],
        v_mps: vec![v; n],
        soc: vec![scn.boundary.soc0; n],
        temp_c: vec![scn.boundary.t_b0_c; n],
        p_hvch_w: vec![0.0; n],
        p_hvac_w: vec![0.0; n],
        a_t_mps2: vec![a_t; n],
        p_b_w: vec![0.0; n],
        s_m,
    }
}

fn solution(segments: Vec<DriveSegment>, stops: Vec<ChargeStop>, trip_time_s: f64) -> TripSolution {
    TripSolution {
        scenario: "test".into(),
        c_t_trip: 0.03,
        segments,
        stops,
        costs: CostBreakdown::new(0.0, Vec::new(), Vec::new()),
        summary: TripSummary::new(trip_time_s, 0.0, 0.0),
        diagnostics: None,
    }
}

#[test]
fn constant_speed_replay() {
    let scn = flat(10e3);
    let v = 90.0 * KMH;
    let sol = solution(vec![cruise_segment(&scn, 0.0, 10e3, 6, v)], Vec::new(), 10e3 / v);
    let trace = simulate_time_domain(&scn, &sol, DEFAULT_DT_S).unwrap();
    for s in &trace.samples {
        assert!((s.v_mps - v).abs() < 1e-6, "{}", s.v_mps);
    }
    assert!((trace.trip_time_s() - 10e3 / v).abs() < 1e-6);
    assert!(trace.samples.windows(2).all(|w| w[1].t_s > w[0].t_s && w[1].s_m >= w[0].s_m));
    assert_eq!(trace.mode_switches(), 0);
    let report = check_constraints(&trace, &scn);
    assert!(report.pass, "{report:?}");
    assert!(report.families.iter().all(|f| f.max_violation == 0.0 || f.name == "energy_balance"));
    assert!(report.energy_balance_rel_err < 1e-6);
}

#[test]
fn parked_vehicle_at_ambient_is_an_equilibrium() {
    let scn = flat(10e3);
    let t = scn.boundary.t_amb_c;
    // grid power exactly covers the auxiliary load
    let r = charging_time_rates(&scn, 0.5, t, 0.0, 0.0, scn.vehicle.aux_power_w).unwrap();
    assert_eq!((r.dsoc, r.dtemp, r.p_b), (0.0, 0.0, 0.0));
}

#[test]
fn stop_switches_mode_twice_and_costs_its_energy() {
    let mut scn = flat(20e3);
    scn.chargers = warm_plateau_scenario().chargers;
    scn.chargers[0].s_chg_m = 10e3;
    let v = 90.0 * KMH;
    let n_tau = 5;
    let stop = ChargeStop {
        charger: 0,
        s_m: 10e3,
        t_chg_s: 600.0,
        sigma_s: 0.0,
        tau: (0..n_tau).map(|j| j as f64 / (n_tau - 1) as f64).collect(),
        soc: vec![0.4; n_tau],
        temp_c: vec![30.0; n_tau],
        p_hvch_w: vec![0.0; n_tau],
        p_hvac_w: vec![0.0; n_tau],
        p_grid_w: vec![150e3; n_tau],
        p_b_w: vec![0.0; n_tau],
    };
    let sol = solution(
        vec![cruise_segment(&scn, 0.0, 10e3, 6, v), cruise_segment(&scn, 10e3, 20e3, 6, v)],
        vec![stop],
        20e3 / v + 600.0,
    );
    let trace = simulate_time_domain(&scn, &sol, DEFAULT_DT_S).unwrap();
    assert_eq!(trace.mode_switches(), 2);
    assert_eq!(trace.events.len(), 1);
    assert!((trace.charging_time_s() - 600.0).abs() < 1e-9);
    let costs = cost_accounting(&trace, &scn, &scn.costs);
    assert!((costs.energy_cost[0] - 125.0).abs() < 1e-9, "{:?}", costs.energy_cost);
    assert_eq!(costs.occupancy_cost, vec![0.0]);
    let report = check_constraints(&trace, &scn);
    assert!(report.energy_balance_rel_err < 1e-6, "{}", report.energy_balance_rel_err);
    // soc rises while charging
    let ev = &trace.events[0];
    let at = |t: f64| trace.samples.iter().find(|s| s.t_s >= t).unwrap().soc;
    assert!(at(ev.departure_s) > at(ev.arrival_s) + 0.1);
}

#[test]
fn planted_speed_violation_is_scaled_by_the_band() {
    let scn = flat(10e3);
    let v = 90.0 * KMH;
    let sol = solution(vec![cruise_segment(&scn, 0.0, 10e3, 6, v)], Vec::new(), 10e3 / v);
    let mut trace = simulate_time_domain(&scn, &sol, DEFAULT_DT_S).unwrap();
    trace.samples[10].v_mps = 120.0 * KMH + 1.0;
    let report = check_constraints(&trace, &scn);
    let speed = report.family("speed").unwrap();
    assert!((speed.max_violation - 1.0 / (60.0 * KMH)).abs() < 1e-12);
    assert!(!speed.pass && !report.pass);
}

#[test]
fn stalled_vehicle_is_an_error() {
    let scn = flat(10e3);
    let mut seg = cruise_segment(&scn, 0.0, 10e3, 6, 90.0 * KMH);
    seg.a_t_mps2 = vec![-2.0; 6];
    let sol = solution(vec![seg], Vec::new(), 1.0);
    assert!(simulate_time_domain(&scn, &sol, DEFAULT_DT_S).is_err());
    assert!(simulate_time_domain(&scn, &sol, 0.0).is_err());
}

#[test]
fn csv_header_and_rows() {
    let scn = flat(2e3);
    let sol = solution(vec![cruise_segment(&scn, 0.0, 2e3, 2, 25.0)], Vec::new(), 80.0);
    let trace = simulate_time_domain(&scn, &sol, 1.0).unwrap();
    let csv = trace.to_csv_string();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t_s,s_m,v_mps,soc,T_b_C,P_b_W,P_grid_W,mode"));
    assert_eq!(lines.count(), trace.samples.len());
    assert!(csv.trim_end().ends_with(",drive"));
}
