//! End-to-end checks on the reference trip: files, replay, sweeps and the
//! collocation error.

use std::sync::OnceLock;

use ecoroute::dynamics::{driving_rhs, physical_root, DrivingControl, DrivingState, Plant};
use ecoroute::models::propulsion_power;
use ecoroute::pareto::{preconditioning_study, sweep, SweepOptions};
use ecoroute::plan::{plan_trip, Plan, PlanOptions};
use ecoroute::reference::{reference_scenario, warm_plateau_scenario, KMH};
use ecoroute::scenario::{RoadBreakpoint, RoadProfile};
use ecoroute::solver::SolveStatus;
use ecoroute::transcription::{build_nlp, rk4_step, TranscriptionOptions};
use ecoroute::validator::{validate, DEFAULT_DT_S};
use ecoroute::{load_scenario, Scenario, TripSolution};

fn reference_plan() -> &'static Plan {
    static PLAN: OnceLock<Plan> = OnceLock::new();
    PLAN.get_or_init(|| {
        let scn = reference_scenario();
        let plan = plan_trip(&scn, &scn.costs, &PlanOptions::default(), None).unwrap();
        assert_eq!(plan.status(), SolveStatus::Optimal);
        plan
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn shipped_scenario_survives_export_and_reload() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.scn");
    let scn = load_scenario(path).unwrap();
    let plan = plan_trip(&scn, &scn.costs, &PlanOptions::default(), None).unwrap();
    assert_eq!(plan.status(), SolveStatus::Optimal);

    let dir = tempfile::tempdir().unwrap();
    plan.solution.export(dir.path()).unwrap();
    for name in ["solution.json", "drive_0.csv", "drive_1.csv", "charge_0.csv"] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
    let back = TripSolution::load(dir.path().join("solution.json")).unwrap();
    assert_eq!(back, plan.solution);

    let (_, report) = validate(&scn, &back, DEFAULT_DT_S).unwrap();
    assert!(report.pass, "{:#?}", report.families);
}

#[test]
fn replay_converges_in_the_step() {
    let scn = reference_scenario();
    let sol = &reference_plan().solution;
    let (coarse, _) = validate(&scn, sol, DEFAULT_DT_S).unwrap();
    let (fine, _) = validate(&scn, sol, 0.5 * DEFAULT_DT_S).unwrap();
    let d = rel(coarse.trip_time_s(), fine.trip_time_s());
    assert!(d < 1e-4, "trip time moved by {d:.2e} when halving dt");
    let d = rel(coarse.terminal().unwrap().soc, fine.terminal().unwrap().soc);
    assert!(d < 1e-4, "terminal soc moved by {d:.2e}");
}

#[test]
fn planned_costs_match_the_replayed_costs() {
    let scn = reference_scenario();
    let sol = &reference_plan().solution;
    let (_, report) = validate(&scn, sol, DEFAULT_DT_S).unwrap();
    let d = rel(sol.costs.total, report.costs.total);
    assert!(d < 0.01, "planned {} vs replayed {}", sol.costs.total, report.costs.total);
    let d = rel(sol.costs.total_energy_cost(), report.costs.total_energy_cost());
    assert!(d < 0.01, "energy cost off by {d:.2e}");
}

#[test]
fn solved_battery_power_is_on_the_low_loss_branch() {
    let scn = reference_scenario();
    let bat = &scn.battery;
    let sol = &reference_plan().solution;
    let nodes = sol
        .segments
        .iter()
        .flat_map(|s| (0..s.len()).map(move |k| (s.soc[k], s.temp_c[k], s.p_b_w[k])))
        .chain(sol.stops.iter().flat_map(|c| (0..c.tau.len()).map(move |j| (c.soc[j], c.temp_c[j], c.p_b_w[j]))));
    for (soc, temp, p_b) in nodes {
        // the high-loss root lies above U^2 / (2 R)
        let (u, r) = (bat.u_oc(soc), bat.r_b(temp));
        assert!(p_b < 0.5 * u * u / r, "P_b {p_b} on the high-loss branch");
    }
}

#[test]
fn states_are_continuous_across_stops() {
    let sol = &reference_plan().solution;
    assert_eq!(sol.stops.len(), 1);
    for (i, stop) in sol.stops.iter().enumerate() {
        let before = &sol.segments[i];
        let after = &sol.segments[i + 1];
        let last = before.len() - 1;
        assert!((before.s_m[last] - stop.s_m).abs() < 1e-9);
        assert!((after.s_m[0] - stop.s_m).abs() < 1e-9);
        assert!((before.soc[last] - stop.soc[0]).abs() < 1e-7);
        assert!((before.temp_c[last] - stop.temp_c[0]).abs() < 1e-6);
        let end = stop.tau.len() - 1;
        assert!((after.soc[0] - stop.soc[end]).abs() < 1e-7);
        assert!((after.temp_c[0] - stop.temp_c[end]).abs() < 1e-6);
    }
}

#[test]
fn single_weight_sweep_is_a_plain_solve() {
    let scn = reference_scenario();
    let front = sweep(&scn, &[scn.costs.c_t_trip], &SweepOptions::default()).unwrap();
    assert_eq!(front.solutions.len(), 1);
    let direct = &reference_plan().solution;
    assert_eq!(front.solutions[0].segments, direct.segments);
    assert_eq!(front.solutions[0].stops, direct.stops);
    assert_eq!(front.points[0].energy_cost, direct.summary.energy_cost);
}

#[test]
fn warm_cold_and_parallel_sweeps_agree() {
    let scn = reference_scenario();
    let weights = [0.02, 0.03, 0.043];
    let warm = sweep(&scn, &weights, &SweepOptions::default()).unwrap();
    let cold_opts = SweepOptions { warm_start: false, ..SweepOptions::default() };
    let cold = sweep(&scn, &weights, &cold_opts).unwrap();
    let parallel = sweep(&scn, &weights, &SweepOptions { parallel: 3, ..cold_opts }).unwrap();

    // independent solves do not depend on scheduling
    assert_eq!(cold.points, parallel.points);
    for (a, b) in cold.solutions.iter().zip(&parallel.solutions) {
        assert_eq!((&a.segments, &a.stops), (&b.segments, &b.stops));
    }

    for (w, c) in warm.points.iter().zip(&cold.points) {
        assert!(w.is_optimal() && c.is_optimal());
        let obj = |p: &ecoroute::pareto::ParetoPoint| p.c_t_trip * p.trip_time_s + p.energy_cost;
        let d = rel(obj(w), obj(c));
        assert!(d < 1e-4, "c_t {}: warm {} vs cold {}", w.c_t_trip, obj(w), obj(c));
    }
    assert!(warm.is_monotone() && cold.is_monotone());
}

#[test]
fn heating_makes_no_difference_on_a_warm_plateau() {
    let scn = warm_plateau_scenario();
    let r = preconditioning_study(&scn, scn.costs.c_t_trip, &PlanOptions::default()).unwrap();
    assert!(r.case1.is_optimal() && r.case2.is_optimal());
    assert!((r.charging_time_ratio - 1.0).abs() < 1e-6, "ratio {}", r.charging_time_ratio);
}

/// Straight, level road of `length` metres without chargers.
fn level_road(length: f64) -> Scenario {
    let mut scn = reference_scenario();
    scn.chargers.clear();
    scn.boundary.soc_f_min = scn.boundary.soc_min;
    scn.road = RoadProfile {
        breakpoints: [0.0, length]
            .iter()
            .map(|&s| RoadBreakpoint { s_m: s, alt_m: 0.0, vmin_mps: 10.0 * KMH, vmax_mps: 150.0 * KMH })
            .collect(),
    };
    scn
}

#[test]
fn collocation_defects_shrink_with_the_fourth_power_of_the_step() {
    let length = 4000.0;
    let scn = level_road(length);
    let plant = Plant::new(&scn);
    let bat = &scn.battery;
    let (hvch, a_t) = (4000.0, 0.3);
    let load = |y: &[f64; 3]| {
        let (p_prop, _) = propulsion_power((2.0 * y[0]).sqrt(), a_t, &scn.vehicle);
        p_prop + hvch + scn.thermal.p_hvch_cabin_w + scn.vehicle.aux_power_w
    };
    let p_b = |y: &[f64; 3]| physical_root(load(y), bat.u_oc(y[1]), bat.r_b(y[2])).unwrap();
    let rhs = |_: f64, y: &[f64; 3]| {
        let x = DrivingState { e: y[0], soc: y[1], temp_c: y[2] };
        let u = DrivingControl { p_hvch_b: hvch, p_hvac_b: 0.0, a_t, p_b: p_b(y) };
        let d = driving_rhs(&x, &u, 0.0, 1.0, &plant)?;
        Ok([d.e, d.soc, d.temp_c])
    };
    let x0 = [0.5 * 15.0f64.powi(2), 0.6, -10.0];

    // exact states from a fine integration, sampled onto each grid
    let worst_defect = |ds: f64| -> f64 {
        let nlp = build_nlp(&scn, &scn.costs, &TranscriptionOptions { ds_m: ds, ..Default::default() }).unwrap();
        let mut sol = nlp.extract_solution(&nlp.initial_guess()).unwrap();
        let seg = &mut sol.segments[0];
        let mut x = x0;
        let sub = 256;
        for k in 0..seg.len() {
            if k > 0 {
                for _ in 0..sub {
                    x = rk4_step(rhs, x, ds / sub as f64).unwrap();
                }
            }
            seg.e[k] = x[0];
            seg.soc[k] = x[1];
            seg.temp_c[k] = x[2];
            seg.p_hvch_w[k] = hvch;
            seg.p_hvac_w[k] = 0.0;
            seg.a_t_mps2[k] = a_t;
            seg.p_b_w[k] = p_b(&x);
        }
        let z = nlp.pack(&sol).unwrap();
        let scale = [x0[0], 1.0, 1.0];
        nlp.drive_defects(&z)
            .unwrap()
            .iter()
            .flat_map(|d| (0..3).map(move |i| (d[i] / scale[i]).abs()))
            .fold(0.0, f64::max)
    };
    let errs: Vec<f64> = [500.0, 250.0, 125.0, 62.5].iter().map(|&ds| worst_defect(ds)).collect();
    // the one-step error falls by 2^5 once the step resolves the speed
    // change; 1 km steps are still short of that (ratio ~15)
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
    assert!(ratios.iter().all(|&r| r > 16.0), "defects {errs:?}");
    assert!(ratios[ratios.len() - 1] > 2f64.powf(4.5), "defects {errs:?}");
}
