use std::path::Path;

use proptest::prelude::*;

use ecoroute::dynamics::physical_root;
use ecoroute::models::{accel_air, VehicleParams};
use ecoroute::reference::reference_scenario;
use ecoroute::scenario::{resample_road, ChargerSpec, RoadBreakpoint, RoadProfile};
use ecoroute::Scenario;

fn road(steps: &[f64], alts: &[f64]) -> RoadProfile {
    let mut s = 0.0;
    let mut breakpoints = vec![RoadBreakpoint { s_m: 0.0, alt_m: alts[0], vmin_mps: 10.0, vmax_mps: 30.0 }];
    for (ds, alt) in steps.iter().zip(&alts[1..]) {
        s += ds;
        breakpoints.push(RoadBreakpoint { s_m: s, alt_m: *alt, vmin_mps: 10.0, vmax_mps: 30.0 });
    }
    RoadProfile { breakpoints }
}

fn charger(s_m: f64) -> ChargerSpec {
    ChargerSpec { s_chg_m: s_m, p_grid_max_w: 50e3, c_e_per_kwh: 3.0, c_t_per_s: 0.0, t_free_s: 0.0, t_chg_max_s: 3600.0 }
}

proptest! {
    #[test]
    fn resampled_grid_is_monotone_and_holds_the_chargers(
        steps in prop::collection::vec(200.0..5000.0f64, 2..20),
        alts in prop::collection::vec(-50.0..50.0f64, 21),
        ds in 100.0..3000.0f64,
        at in 0.2..0.8f64,
    ) {
        let profile = road(&steps, &alts);
        let length = profile.length();
        prop_assume!(at * length > ds);
        // the charger sits on a grid multiple so it never needs snapping
        let s_chg = (at * length / ds).round() * ds;
        prop_assume!(s_chg > 0.0 && s_chg < length - 1e-6);
        let grid = resample_road(&profile, &[charger(s_chg)], ds).unwrap();
        prop_assert!(grid.s.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(grid.s[0], 0.0);
        prop_assert!((grid.s[grid.len() - 1] - length).abs() < 1e-9);
        prop_assert!(grid.s.windows(2).all(|w| w[1] - w[0] <= ds + 1e-9));
        prop_assert!((grid.s[grid.charger_nodes[0]] - s_chg).abs() < 1e-6);
        prop_assert!(grid.snaps.is_empty());
        prop_assert!(grid.vmin.iter().zip(&grid.vmax).all(|(lo, hi)| lo <= hi));
    }

    #[test]
    fn off_grid_chargers_snap_to_the_nearest_node(
        length in 5000.0..50000.0f64,
        ds in 500.0..2000.0f64,
        at in 0.2..0.8f64,
    ) {
        let profile = road(&[length], &[0.0, 10.0]);
        let s_chg = at * length;
        let grid = resample_road(&profile, &[charger(s_chg)], ds).unwrap();
        let node = grid.s[grid.charger_nodes[0]];
        prop_assert!((node - s_chg).abs() <= 0.5 * ds + 1e-9);
        prop_assert!(grid.s.iter().all(|s| (s - s_chg).abs() >= (node - s_chg).abs() - 1e-9));
    }

    #[test]
    fn physical_root_balances_the_load(load in -2e5..2e5f64, u_oc in 250.0..420.0f64, r_b in 0.01..0.5f64) {
        prop_assume!(4.0 * r_b * load < u_oc * u_oc);
        let p = physical_root(load, u_oc, r_b).unwrap();
        let residual = r_b * p * p / (u_oc * u_oc) - p + load;
        prop_assert!(residual.abs() <= 1e-9 * load.abs().max(1.0));
        // the other root is the high-loss one
        let other = u_oc * u_oc / r_b - p;
        prop_assert!(p.abs() < other.abs());
        prop_assert!(p < 0.5 * u_oc * u_oc / r_b);
    }

    #[test]
    fn air_drag_is_linear_in_kinetic_energy(e1 in 1.0..1000.0f64, e2 in 1.0..1000.0f64, k in 0.0..3.0f64) {
        let p = VehicleParams::default();
        let a = accel_air(e1 + k * e2, &p);
        let b = accel_air(e1, &p) + k * accel_air(e2, &p);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn scenario_files_round_trip(c_t in 0.0..0.2f64, temp in -25.0..35.0f64, soc0 in 0.3..0.9f64) {
        let mut scn = reference_scenario();
        scn.costs.c_t_trip = c_t;
        scn.boundary.t_b0_c = temp;
        scn.boundary.t_amb_c = temp;
        scn.boundary.soc0 = soc0;
        let text = scn.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text, Path::new(".")).unwrap();
        prop_assert_eq!(&back, &scn);
        let road = RoadProfile::from_csv_reader(scn.road.to_csv_string().as_bytes()).unwrap();
        prop_assert_eq!(road, scn.road);
    }
}
