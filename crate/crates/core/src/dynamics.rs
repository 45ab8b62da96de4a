//! Mode dynamics in the transformed domains.
//!
//! Driving is written over distance with the kinetic energy per unit mass
//! `E = v^2 / 2` as the speed state; charging is written over normalized time
//! `tau = t / t_chg`. Both share the same battery and thermal models.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};
use crate::models::{
    accel_air, accel_grade_roll, heat_rates, propulsion_power, BatteryMaps, ThermalParams,
    VehicleParams,
};
use crate::scenario::Scenario;

/// Smallest admissible charging duration; `tau` is undefined for `t_chg = 0`.
pub const T_CHG_FLOOR_S: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingState<S = f64> {
    pub e: S,
    pub soc: S,
    pub temp_c: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingControl<S = f64> {
    pub p_hvch_b: S,
    pub p_hvac_b: S,
    pub a_t: S,
    pub p_b: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingState<S = f64> {
    pub soc: S,
    pub temp_c: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingControl<S = f64> {
    pub p_hvch_b: S,
    pub p_hvac_b: S,
    pub p_grid: S,
    pub p_b: S,
}

/// Parameters shared by both modes.
#[derive(Debug, Clone, Copy)]
pub struct Plant<'a> {
    pub vehicle: &'a VehicleParams,
    pub battery: &'a BatteryMaps,
    pub thermal: &'a ThermalParams,
    pub t_amb_c: f64,
}

impl<'a> Plant<'a> {
    pub fn new(scn: &'a Scenario) -> Self {
        Plant {
            vehicle: &scn.vehicle,
            battery: &scn.battery,
            thermal: &scn.thermal,
            t_amb_c: scn.boundary.t_amb_c,
        }
    }
}

/// `E` replaced by a C¹ floor below `floor` that levels off at `floor / 2`.
/// Used for intermediate integration stages, which may leave the admissible
/// speed band while the optimizer is far from feasibility. The value never
/// reaches zero, so square roots and reciprocals of it keep finite
/// derivatives.
pub fn soft_floor<S: Scalar>(e: S, floor: f64) -> S {
    if e.value() >= floor {
        e
    } else {
        ((e - floor) * (2.0 / floor)).exp() * (0.5 * floor) + 0.5 * floor
    }
}

/// Space-domain rates `(dE/ds, dsoc/ds, dT/ds)` with no domain check; `e_floor`
/// guards the speed used in the `1/v` terms.
pub(crate) fn driving_rates<S: Scalar>(
    x: &DrivingState<S>,
    u: &DrivingControl<S>,
    alpha: S,
    e_floor: f64,
    plant: &Plant,
) -> [S; 3] {
    let p = plant.vehicle;
    let v = (soft_floor(x.e, e_floor) * 2.0).sqrt();
    let de = u.a_t - accel_air(x.e, p) - accel_grade_roll(alpha, p);
    let u_oc = plant.battery.u_oc(x.soc);
    let dsoc = -u.p_b / (u_oc * v * plant.battery.capacity_c());
    let (_, loss) = propulsion_power(v, u.a_t, p);
    let q = heat_rates(
        x.soc,
        x.temp_c,
        v,
        u.p_b,
        u.p_hvch_b,
        u.p_hvac_b,
        loss,
        plant.t_amb_c,
        plant.thermal,
        plant.battery,
    );
    let dtemp = q.total() / (v * plant.thermal.cp_mb_j_per_k);
    [de, dsoc, dtemp]
}

/// Driving dynamics over distance at gradient `alpha`.
pub fn driving_rhs(
    x: &DrivingState,
    u: &DrivingControl,
    alpha: f64,
    e_min: f64,
    plant: &Plant,
) -> Result<DrivingState> {
    if !(x.e >= e_min) || e_min <= 0.0 {
        return Err(Error::Domain(format!(
            "kinetic energy {} below minimum {e_min}",
            x.e
        )));
    }
    let [e, soc, temp_c] = driving_rates(x, u, alpha, e_min, plant);
    Ok(DrivingState { e, soc, temp_c })
}

/// Normalized-time rates `(dsoc/dtau, dT/dtau)`.
pub(crate) fn charging_rates<S: Scalar>(
    x: &ChargingState<S>,
    u: &ChargingControl<S>,
    t_chg: S,
    plant: &Plant,
) -> [S; 2] {
    let u_oc = plant.battery.u_oc(x.soc);
    let dsoc = -(t_chg * u.p_b) / (u_oc * plant.battery.capacity_c());
    let q = heat_rates(
        x.soc,
        x.temp_c,
        S::cst(0.0),
        u.p_b,
        u.p_hvch_b,
        u.p_hvac_b,
        S::cst(0.0),
        plant.t_amb_c,
        plant.thermal,
        plant.battery,
    );
    let dtemp = t_chg * q.total() / plant.thermal.cp_mb_j_per_k;
    [dsoc, dtemp]
}

/// Charging dynamics over normalized time for a stop of length `t_chg`.
pub fn charging_rhs(
    x: &ChargingState,
    u: &ChargingControl,
    t_chg: f64,
    plant: &Plant,
) -> Result<ChargingState> {
    if !(t_chg >= T_CHG_FLOOR_S) {
        return Err(Error::Domain(format!(
            "charging time {t_chg} s below the {T_CHG_FLOOR_S} s floor"
        )));
    }
    let [soc, temp_c] = charging_rates(x, u, t_chg, plant);
    Ok(ChargingState { soc, temp_c })
}

/// Electrical load on the battery terminals excluding Joule losses.
pub(crate) fn driving_load<S: Scalar>(v: S, u: &DrivingControl<S>, plant: &Plant) -> S {
    let (p_prop, _) = propulsion_power(v, u.a_t, plant.vehicle);
    p_prop + u.p_hvch_b + u.p_hvac_b + plant.thermal.p_hvch_cabin_w + plant.vehicle.aux_power_w
}

pub(crate) fn charging_load<S: Scalar>(u: &ChargingControl<S>, plant: &Plant) -> S {
    u.p_hvch_b + u.p_hvac_b + plant.vehicle.aux_power_w - u.p_grid
}

pub(crate) fn balance<S: Scalar>(soc: S, temp_c: S, load: S, p_b: S, battery: &BatteryMaps) -> S {
    let u_oc = battery.u_oc(soc);
    let r_b = battery.r_b(temp_c);
    r_b * p_b.powi2() / u_oc.powi2() + load - p_b
}

/// Operating point of either mode.
pub enum ModePoint<'a> {
    Drive {
        x: &'a DrivingState,
        u: &'a DrivingControl,
        v: f64,
    },
    Charge {
        x: &'a ChargingState,
        u: &'a ChargingControl,
    },
}

/// Battery power balance residual in watts; zero on feasible trajectories.
pub fn power_balance_residual(point: ModePoint, plant: &Plant) -> f64 {
    match point {
        ModePoint::Drive { x, u, v } => balance(
            x.soc,
            x.temp_c,
            driving_load(v, u, plant),
            u.p_b,
            plant.battery,
        ),
        ModePoint::Charge { x, u } => {
            balance(x.soc, x.temp_c, charging_load(u, plant), u.p_b, plant.battery)
        }
    }
}

/// Low-loss root of `R P^2 / U^2 - P + load = 0`. Returns `None` when the
/// load exceeds the deliverable power `U^2 / (4 R)`.
pub fn physical_root(load: f64, u_oc: f64, r_b: f64) -> Option<f64> {
    let disc = 1.0 - 4.0 * r_b * load / (u_oc * u_oc);
    if disc < 0.0 {
        return None;
    }
    Some(2.0 * load / (1.0 + disc.sqrt()))
}

/// Smooth version of [`physical_root`] for use inside the transcription: the
/// discriminant is floored softly so that the root stays defined (and C¹)
/// when an iterate asks for more power than the battery can deliver.
pub(crate) fn smooth_root<S: Scalar>(load: S, u_oc: S, r_b: S) -> S {
    let disc = S::cst(1.0) - r_b * load * 4.0 / u_oc.powi2();
    load * 2.0 / (soft_floor(disc, 0.01).sqrt() + 1.0)
}

/// Driving rates with the battery power taken from the power balance at the
/// given state instead of `u.p_b`.
pub(crate) fn driving_rates_balanced<S: Scalar>(
    x: &DrivingState<S>,
    u: &DrivingControl<S>,
    alpha: S,
    e_floor: f64,
    plant: &Plant,
) -> [S; 3] {
    let v = (soft_floor(x.e, e_floor) * 2.0).sqrt();
    let load = driving_load(v, u, plant);
    let p_b = smooth_root(load, plant.battery.u_oc(x.soc), plant.battery.r_b(x.temp_c));
    driving_rates(x, &DrivingControl { p_b, ..*u }, alpha, e_floor, plant)
}

/// Charging counterpart of [`driving_rates_balanced`].
pub(crate) fn charging_rates_balanced<S: Scalar>(
    x: &ChargingState<S>,
    u: &ChargingControl<S>,
    t_chg: S,
    plant: &Plant,
) -> [S; 2] {
    let load = charging_load(u, plant);
    let p_b = smooth_root(load, plant.battery.u_oc(x.soc), plant.battery.r_b(x.temp_c));
    charging_rates(x, &ChargingControl { p_b, ..*u }, t_chg, plant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::accel_grade_roll;

    fn fixture() -> (VehicleParams, BatteryMaps, ThermalParams) {
        (VehicleParams::default(), BatteryMaps::default(), ThermalParams::default())
    }

    #[test]
    fn steady_cruise_has_zero_energy_rate() {
        let (p, b, t) = fixture();
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: -10.0 };
        let e = 300.0;
        let x = DrivingState { e, soc: 0.5, temp_c: 0.0 };
        let a_t = p.drag_factor() * e + accel_grade_roll(0.0, &p);
        let u = DrivingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, a_t, p_b: 20e3 };
        let r = driving_rhs(&x, &u, 0.0, 100.0, &plant).unwrap();
        assert!(r.e.abs() < 1e-15);
    }

    #[test]
    fn soc_and_temperature_rates() {
        let (p, b, mut t) = fixture();
        t.eps_ed = 0.0;
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: 20.0 };
        // U_oc = 360 V at soc 0.6
        let x = DrivingState { e: 200.0, soc: 0.6, temp_c: 20.0 };
        let u = DrivingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, a_t: 0.0, p_b: 72e3 };
        let r = driving_rhs(&x, &u, 0.0, 100.0, &plant).unwrap();
        assert!((r.soc + 1.3889e-5).abs() < 1e-9);

        // heater only, no Joule heat, no exchange
        let u = DrivingControl { p_hvch_b: 5000.0, p_hvac_b: 0.0, a_t: 0.0, p_b: 0.0 };
        let r = driving_rhs(&x, &u, 0.0, 100.0, &plant).unwrap();
        assert!((r.temp_c - 5.8e-4).abs() < 1e-12);
        assert!((r.temp_c * 20.0 - 0.0116).abs() < 1e-12);
    }

    #[test]
    fn low_speed_is_a_domain_error() {
        let (p, b, t) = fixture();
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: 0.0 };
        let x = DrivingState { e: 10.0, soc: 0.5, temp_c: 0.0 };
        let u = DrivingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, a_t: 0.0, p_b: 0.0 };
        assert!(matches!(driving_rhs(&x, &u, 0.0, 100.0, &plant), Err(Error::Domain(_))));
    }

    #[test]
    fn charging_rates_reference() {
        let (p, mut b, t) = fixture();
        // C_b U_oc = 7.2e5 * 360 = 2.592e8
        b.u0_v = 360.0;
        b.u1_v = 1e-9;
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: 0.0 };
        let x = ChargingState { soc: 0.0, temp_c: 0.0 };
        let u = ChargingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, p_grid: 0.0, p_b: -126e3 };
        let r = charging_rhs(&x, &u, 900.0, &plant).unwrap();
        assert!((r.soc - 0.4375).abs() < 1e-9);
        let r2 = charging_rhs(&x, &u, 1800.0, &plant).unwrap();
        assert!((r2.soc - 2.0 * r.soc).abs() < 1e-12);
        assert!((r2.temp_c - 2.0 * r.temp_c).abs() < 1e-9);

        let idle = ChargingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, p_grid: 0.0, p_b: 0.0 };
        let r = charging_rhs(&x, &idle, 900.0, &plant).unwrap();
        assert_eq!((r.soc, r.temp_c), (0.0, 0.0));
        assert!(charging_rhs(&x, &idle, 0.5, &plant).is_err());
    }

    #[test]
    fn charging_balance_lossless() {
        let (mut p, mut b, t) = fixture();
        p.aux_power_w = 500.0;
        b.r_ref_ohm = 0.0;
        b.r_floor_ohm = 0.0;
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: 0.0 };
        let x = ChargingState { soc: 0.5, temp_c: 25.0 };
        let mut u = ChargingControl { p_hvch_b: 5000.0, p_hvac_b: 0.0, p_grid: 10e3, p_b: -4.5e3 };
        assert!(power_balance_residual(ModePoint::Charge { x: &x, u: &u }, &plant).abs() < 1e-12);
        u.p_b = -4.0e3;
        assert!(power_balance_residual(ModePoint::Charge { x: &x, u: &u }, &plant).abs() > 1.0);
    }

    #[test]
    fn driving_balance_without_loads() {
        let (mut p, b, mut t) = fixture();
        p.aux_power_w = 0.0;
        p.ed_k0_w = 0.0;
        t.p_hvch_cabin_w = 0.0;
        let plant = Plant { vehicle: &p, battery: &b, thermal: &t, t_amb_c: 0.0 };
        let x = DrivingState { e: 200.0, soc: 0.5, temp_c: 25.0 };
        let u = DrivingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, a_t: 0.0, p_b: 0.0 };
        assert_eq!(power_balance_residual(ModePoint::Drive { x: &x, u: &u, v: 0.0 }, &plant), 0.0);
        let u = DrivingControl { p_b: 1000.0, ..u };
        let r = power_balance_residual(ModePoint::Drive { x: &x, u: &u, v: 0.0 }, &plant);
        let r_b = b.r_b(25.0);
        let u_oc = b.u_oc(0.5);
        assert!((r - (r_b * 1e6 / (u_oc * u_oc) - 1000.0)).abs() < 1e-9);
    }

    #[test]
    fn physical_root_is_low_loss_branch() {
        let (u, r) = (350.0, 0.08);
        for load in [-150e3, -20e3, 0.0, 30e3, 200e3] {
            let p = physical_root(load, u, r).unwrap();
            assert!((r * p * p / (u * u) + load - p).abs() < 1e-6 * load.abs().max(1.0));
            assert!(p.abs() <= u * u / (2.0 * r));
        }
        assert!(physical_root(u * u / (4.0 * r) * 1.01, u, r).is_none());
    }

    #[test]
    fn smooth_root_matches_physical_root() {
        for &(load, u, r) in &[(20e3, 340.0, 0.05), (-60e3, 330.0, 0.1), (0.0, 300.0, 0.2)] {
            let exact = physical_root(load, u, r).unwrap();
            assert!((smooth_root(load, u, r) - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        }
        // past the deliverable power the smooth root stays finite
        assert!(smooth_root(1e6, 300.0, 0.1).is_finite());
    }

    #[test]
    fn soft_floor_is_c1() {
        let f = 50.0;
        assert_eq!(soft_floor(60.0, f), 60.0);
        assert!((soft_floor(f - 1e-9, f) - f).abs() < 1e-8);
        assert!(soft_floor(-1e4, f) >= 0.5 * f);
        let deep = soft_floor(crate::ad::Dual::<1>::variable(-1e6, 0), f).sqrt();
        assert!(deep.du[0].is_finite() && deep.re > 0.0);
        let d = crate::ad::Dual::<1>::variable(f - 1e-9, 0);
        assert!((soft_floor(d, f).du[0] - 1.0).abs() < 1e-8);
    }
}
