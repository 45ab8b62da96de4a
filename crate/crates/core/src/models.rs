//! Physical model functions of the vehicle, battery pack and thermal system.
//!
//! All functions are generic over [`Scalar`] so the transcription can evaluate
//! them with dual numbers. Several maps are parameterized surrogates: the
//! open-circuit voltage is affine in state of charge, the internal resistance is
//! a clamped exponential in temperature, the drivetrain loss is quadratic in
//! drive power and speed, and the power limits come from a small table that is
//! smoothed so that it is continuously differentiable.

use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

/// Longitudinal, drivetrain and electric-machine parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub mass_kg: f64,
    pub frontal_area_m2: f64,
    pub drag_coeff: f64,
    pub roll_coeff: f64,
    pub air_density_kg_m3: f64,
    pub gravity_mps2: f64,
    /// Constant auxiliary electrical load.
    pub aux_power_w: f64,
    /// Idle drivetrain loss.
    pub ed_k0_w: f64,
    /// Quadratic drive-power loss coefficient (dimensionless, see `ed_p_base_w`).
    pub ed_k1: f64,
    /// Speed-squared loss coefficient, W·s²/m².
    pub ed_k2: f64,
    /// Normalization power for the quadratic drive-power loss term.
    pub ed_p_base_w: f64,
    /// Absolute traction acceleration cap.
    pub a_cap_mps2: f64,
    /// Electric machine power rating.
    pub p_em_max_w: f64,
    /// Speed floor used in the power-limited acceleration bound.
    pub v_eps_mps: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            mass_kg: 2200.0,
            frontal_area_m2: 1.36,
            drag_coeff: 0.6,
            roll_coeff: 0.013,
            air_density_kg_m3: 1.29,
            gravity_mps2: 9.81,
            aux_power_w: 500.0,
            ed_k0_w: 500.0,
            ed_k1: 0.05,
            ed_k2: 0.3,
            ed_p_base_w: 1.0e5,
            a_cap_mps2: 3.0,
            p_em_max_w: 220.0e3,
            v_eps_mps: 1.0,
        }
    }
}

impl VehicleParams {
    /// Air drag factor `c_a` so that the drag deceleration is `c_a * E`.
    pub fn drag_factor(&self) -> f64 {
        self.air_density_kg_m3 * self.drag_coeff * self.frontal_area_m2 / self.mass_kg
    }

    pub(crate) fn validate(&self, prefix: &str) -> Result<()> {
        let positive = [
            ("mass_kg", self.mass_kg),
            ("frontal_area_m2", self.frontal_area_m2),
            ("drag_coeff", self.drag_coeff),
            ("roll_coeff", self.roll_coeff),
            ("air_density_kg_m3", self.air_density_kg_m3),
            ("gravity_mps2", self.gravity_mps2),
            ("ed_k0_w", self.ed_k0_w),
            ("ed_p_base_w", self.ed_p_base_w),
            ("a_cap_mps2", self.a_cap_mps2),
            ("p_em_max_w", self.p_em_max_w),
            ("v_eps_mps", self.v_eps_mps),
        ];
        for (name, v) in positive {
            check_positive(&format!("{prefix}.{name}"), v)?;
        }
        for (name, v) in [
            ("aux_power_w", self.aux_power_w),
            ("ed_k1", self.ed_k1),
            ("ed_k2", self.ed_k2),
        ] {
            check_nonnegative(&format!("{prefix}.{name}"), v)?;
        }
        Ok(())
    }
}

/// Battery discharge / charge power limits tabulated over (soc, temperature).
///
/// Rows follow `soc`, columns follow `temp_c`. Between nodes the table is
/// interpolated bilinearly and then averaged over a small box around the query
/// point, which keeps every monotonicity of the table and makes the surface
/// continuously differentiable. Queries outside the table are clamped to its
/// edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLimitGrid {
    pub soc: Vec<f64>,
    pub temp_c: Vec<f64>,
    pub dchg_max_w: Vec<Vec<f64>>,
    pub chg_min_w: Vec<Vec<f64>>,
}

/// Smoothing box half-width as a fraction of the smallest node spacing.
const SMOOTHING_FRACTION: f64 = 0.25;

impl Default for PowerLimitGrid {
    fn default() -> Self {
        let soc = vec![0.0, 0.1, 0.25, 0.6, 1.0];
        let temp_c = vec![-30.0, -10.0, 5.0, 25.0, 60.0];
        let dchg_soc = [0.3, 0.6, 1.0, 1.0, 1.0];
        let dchg_temp = [0.2, 0.4, 0.7, 1.0, 1.0];
        let chg_soc = [1.0, 1.0, 1.0, 1.0, 0.0];
        let chg_temp = [0.05, 0.12, 0.4, 1.0, 1.0];
        let dchg_max_w = dchg_soc
            .iter()
            .map(|fs| dchg_temp.iter().map(|ft| 250.0e3 * fs * ft).collect())
            .collect();
        let chg_min_w = chg_soc
            .iter()
            .map(|gs| chg_temp.iter().map(|gt| -160.0e3 * gs * gt).collect())
            .collect();
        PowerLimitGrid {
            soc,
            temp_c,
            dchg_max_w,
            chg_min_w,
        }
    }
}

impl PowerLimitGrid {
    /// Read the grid from CSV with header `soc,T_b_C,P_dchg_max_W,P_chg_min_W`,
    /// row-major over the grid (soc outer, temperature inner).
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let expected = ["soc", "T_b_C", "P_dchg_max_W", "P_chg_min_W"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Parse(format!(
                "power limit CSV header must be `{}`",
                expected.join(",")
            )));
        }
        let mut rows: Vec<[f64; 4]> = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let mut row = [0.0; 4];
            for (j, cell) in rec.iter().enumerate().take(4) {
                row[j] = cell
                    .parse()
                    .map_err(|_| Error::Parse(format!("power limit CSV row {}: bad number `{cell}`", line + 2)))?;
            }
            rows.push(row);
        }
        let mut soc: Vec<f64> = Vec::new();
        let mut temp_c: Vec<f64> = Vec::new();
        for r in &rows {
            if soc.last() != Some(&r[0]) {
                soc.push(r[0]);
            }
            if soc.len() == 1 {
                temp_c.push(r[1]);
            }
        }
        let (ns, nt) = (soc.len(), temp_c.len());
        if ns * nt != rows.len() {
            return Err(Error::Parse(
                "power limit CSV is not a complete row-major grid".into(),
            ));
        }
        let mut dchg_max_w = vec![vec![0.0; nt]; ns];
        let mut chg_min_w = vec![vec![0.0; nt]; ns];
        for (k, r) in rows.iter().enumerate() {
            let (i, j) = (k / nt, k % nt);
            if r[0] != soc[i] || r[1] != temp_c[j] {
                return Err(Error::Parse(format!(
                    "power limit CSV row {} is out of grid order",
                    k + 2
                )));
            }
            dchg_max_w[i][j] = r[2];
            chg_min_w[i][j] = r[3];
        }
        Ok(PowerLimitGrid {
            soc,
            temp_c,
            dchg_max_w,
            chg_min_w,
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("soc,T_b_C,P_dchg_max_W,P_chg_min_W\n");
        for (i, s) in self.soc.iter().enumerate() {
            for (j, t) in self.temp_c.iter().enumerate() {
                out.push_str(&format!(
                    "{s},{t},{},{}\n",
                    self.dchg_max_w[i][j], self.chg_min_w[i][j]
                ));
            }
        }
        out
    }

    pub(crate) fn validate(&self, prefix: &str) -> Result<()> {
        check_axis(&format!("{prefix}.soc"), &self.soc)?;
        check_axis(&format!("{prefix}.temp_c"), &self.temp_c)?;
        let (ns, nt) = (self.soc.len(), self.temp_c.len());
        for (name, table) in [("dchg_max_w", &self.dchg_max_w), ("chg_min_w", &self.chg_min_w)] {
            if table.len() != ns || table.iter().any(|r| r.len() != nt) {
                return Err(Error::validation(
                    format!("{prefix}.{name}"),
                    format!("table must be {ns}x{nt}"),
                ));
            }
            if table.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("{prefix}.{name}"), "non-finite entry"));
            }
        }
        let d = &self.dchg_max_w;
        let c = &self.chg_min_w;
        for i in 0..ns {
            for j in 0..nt {
                if d[i][j] < 0.0 {
                    return Err(Error::validation(format!("{prefix}.dchg_max_w"), "entries must be >= 0"));
                }
                if c[i][j] > 0.0 {
                    return Err(Error::validation(format!("{prefix}.chg_min_w"), "entries must be <= 0"));
                }
                if j + 1 < nt && (d[i][j + 1] < d[i][j] || c[i][j + 1] > c[i][j]) {
                    return Err(Error::validation(
                        prefix,
                        "limits must not shrink with increasing temperature",
                    ));
                }
                if i + 1 < ns && (d[i + 1][j] < d[i][j] || c[i + 1][j] < c[i][j]) {
                    return Err(Error::validation(
                        prefix,
                        "discharge limit must not shrink and charge limit must not grow with soc",
                    ));
                }
            }
        }
        Ok(())
    }

    fn max_slopes(&self, table: &[Vec<f64>]) -> (f64, f64) {
        let mut ls = 0.0f64;
        let mut lt = 0.0f64;
        for i in 0..self.soc.len() {
            for j in 0..self.temp_c.len() {
                if i + 1 < self.soc.len() {
                    ls = ls.max((table[i + 1][j] - table[i][j]).abs() / (self.soc[i + 1] - self.soc[i]));
                }
                if j + 1 < self.temp_c.len() {
                    lt = lt.max(
                        (table[i][j + 1] - table[i][j]).abs() / (self.temp_c[j + 1] - self.temp_c[j]),
                    );
                }
            }
        }
        (ls, lt)
    }

    /// Lipschitz constants (per unit soc, per kelvin) of both limit surfaces.
    pub fn lipschitz(&self) -> (f64, f64) {
        let (a, b) = self.max_slopes(&self.dchg_max_w);
        let (c, d) = self.max_slopes(&self.chg_min_w);
        (a.max(c), b.max(d))
    }

    fn eval<S: Scalar>(&self, soc: S, temp: S) -> (S, S) {
        let ws = smoothed_weights(soc, &self.soc);
        let wt = smoothed_weights(temp, &self.temp_c);
        let mut chg = S::cst(0.0);
        let mut dchg = S::cst(0.0);
        for &(i, wi) in ws.iter().flatten() {
            for &(j, wj) in wt.iter().flatten() {
                let w = wi * wj;
                dchg += w * self.dchg_max_w[i][j];
                chg += w * self.chg_min_w[i][j];
            }
        }
        (chg, dchg)
    }
}

/// Weights of the box-averaged piecewise-linear basis at `x`.
///
/// The linear interpolant is extended linearly beyond the outer nodes and the
/// query is clamped to the node range first. The box half-width is smaller than
/// half of every node spacing, so the box covers at most two cells and at most
/// three basis functions are nonzero.
fn smoothed_weights<S: Scalar>(x: S, nodes: &[f64]) -> [Option<(usize, S)>; 3] {
    let n = nodes.len();
    let min_gap = nodes
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let hw = SMOOTHING_FRACTION * min_gap;
    let x = x.clamp_s(nodes[0], nodes[n - 1]);
    let xv = x.value();
    // cell index in 0..n-1 holding the left edge of the box, extrapolated cells clamped
    let cell_of = |v: f64| -> usize {
        let mut c = 0;
        while c + 2 < n && v >= nodes[c + 1] {
            c += 1;
        }
        c
    };
    let lo = x - hw;
    let hi = x + hw;
    let c_lo = cell_of(xv - hw);
    let c_hi = cell_of(xv + hw);
    let mut acc: [Option<(usize, S)>; 3] = [None, None, None];
    let mut add = |idx: usize, w: S| {
        for slot in acc.iter_mut() {
            match slot {
                Some((i, v)) if *i == idx => {
                    *v += w;
                    return;
                }
                None => {
                    *slot = Some((idx, w));
                    return;
                }
                _ => {}
            }
        }
    };
    let mut piece = |a: S, b: S, c: usize| {
        let (x0, x1) = (nodes[c], nodes[c + 1]);
        let len = b - a;
        let mid = (a + b) * 0.5;
        let inv = 1.0 / (x1 - x0);
        let scale = 1.0 / (2.0 * hw);
        add(c, len * ((-mid + x1) * inv) * scale);
        add(c + 1, len * ((mid - x0) * inv) * scale);
    };
    if c_lo == c_hi {
        piece(lo, hi, c_lo);
    } else {
        let split = S::cst(nodes[c_hi]);
        piece(lo, split, c_lo);
        piece(split, hi, c_hi);
    }
    acc
}

/// Open-circuit voltage, resistance and power-limit maps of the pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryMaps {
    pub capacity_ah: f64,
    /// Open-circuit voltage `U0 + U1 * soc`.
    pub u0_v: f64,
    pub u1_v: f64,
    /// Resistance `R_ref * exp(k_R * (T_ref - T))`, clamped to `[r_floor, r_cap]`.
    pub r_ref_ohm: f64,
    pub t_ref_c: f64,
    pub k_r_per_k: f64,
    pub r_floor_ohm: f64,
    pub r_cap_ohm: f64,
    pub power_limits: PowerLimitGrid,
}

impl Default for BatteryMaps {
    fn default() -> Self {
        BatteryMaps {
            capacity_ah: 200.0,
            u0_v: 300.0,
            u1_v: 100.0,
            r_ref_ohm: 0.05,
            t_ref_c: 25.0,
            k_r_per_k: 0.02,
            r_floor_ohm: 0.01,
            r_cap_ohm: 0.5,
            power_limits: PowerLimitGrid::default(),
        }
    }
}

impl BatteryMaps {
    /// Capacity `C_b` in coulombs.
    pub fn capacity_c(&self) -> f64 {
        self.capacity_ah * 3600.0
    }

    pub fn u_oc<S: Scalar>(&self, soc: S) -> S {
        soc * self.u1_v + self.u0_v
    }

    pub fn r_b<S: Scalar>(&self, temp: S) -> S {
        let r = ((-temp + self.t_ref_c) * self.k_r_per_k).exp() * self.r_ref_ohm;
        r.max_s(S::cst(self.r_floor_ohm)).min_s(S::cst(self.r_cap_ohm))
    }

    /// Smallest open-circuit voltage over the admissible soc range.
    pub fn u_oc_min(&self) -> f64 {
        self.u0_v
    }

    pub(crate) fn validate(&self, prefix: &str) -> Result<()> {
        for (name, v) in [
            ("capacity_ah", self.capacity_ah),
            ("u0_v", self.u0_v),
            ("u1_v", self.u1_v),
            ("r_ref_ohm", self.r_ref_ohm),
            ("r_floor_ohm", self.r_floor_ohm),
            ("r_cap_ohm", self.r_cap_ohm),
        ] {
            check_positive(&format!("{prefix}.{name}"), v)?;
        }
        check_positive(&format!("{prefix}.k_r_per_k"), self.k_r_per_k)?;
        if !self.t_ref_c.is_finite() {
            return Err(Error::validation(format!("{prefix}.t_ref_c"), "must be finite"));
        }
        if self.r_floor_ohm >= self.r_cap_ohm {
            return Err(Error::validation(
                format!("{prefix}.r_floor_ohm"),
                "must be below r_cap_ohm",
            ));
        }
        self.power_limits.validate(&format!("{prefix}.power_limits"))
    }
}

/// Thermal-system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    /// Heat capacity of the pack, `c_p * m_b`.
    pub cp_mb_j_per_k: f64,
    pub eta_hvch: f64,
    pub eta_hvac: f64,
    pub p_hvch_max_w: f64,
    pub p_hvac_max_w: f64,
    /// Cabin heating demand while driving.
    pub p_hvch_cabin_w: f64,
    /// Heat exchange coefficient `gamma(v) = gamma0 + gamma1 * v`.
    pub gamma0_w_per_k: f64,
    pub gamma1_ws_per_km: f64,
    /// Share of drivetrain losses that heats the pack.
    pub eps_ed: f64,
    /// When false the heater and cooler cannot act on the battery.
    #[serde(default = "yes")]
    pub btm_enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            cp_mb_j_per_k: 375.0e3,
            eta_hvch: 0.87,
            eta_hvac: 0.87,
            p_hvch_max_w: 7000.0,
            p_hvac_max_w: 5000.0,
            p_hvch_cabin_w: 1500.0,
            gamma0_w_per_k: 20.0,
            gamma1_ws_per_km: 1.0,
            eps_ed: 0.1,
            btm_enabled: true,
        }
    }
}

impl ThermalParams {
    /// Upper bound of battery heater power while driving.
    pub fn hvch_battery_max_driving(&self) -> f64 {
        if self.btm_enabled {
            (self.p_hvch_max_w - self.p_hvch_cabin_w).max(0.0)
        } else {
            0.0
        }
    }

    /// Upper bound of battery heater power while charging (no cabin demand).
    pub fn hvch_battery_max_charging(&self) -> f64 {
        if self.btm_enabled {
            self.p_hvch_max_w
        } else {
            0.0
        }
    }

    pub fn hvac_battery_max(&self) -> f64 {
        if self.btm_enabled {
            self.p_hvac_max_w
        } else {
            0.0
        }
    }

    pub(crate) fn validate(&self, prefix: &str) -> Result<()> {
        check_positive(&format!("{prefix}.cp_mb_j_per_k"), self.cp_mb_j_per_k)?;
        for (name, v) in [("eta_hvch", self.eta_hvch), ("eta_hvac", self.eta_hvac)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(format!("{prefix}.{name}"), "must lie in (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.eps_ed) {
            return Err(Error::validation(format!("{prefix}.eps_ed"), "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("p_hvch_max_w", self.p_hvch_max_w),
            ("p_hvac_max_w", self.p_hvac_max_w),
            ("p_hvch_cabin_w", self.p_hvch_cabin_w),
            ("gamma1_ws_per_km", self.gamma1_ws_per_km),
        ] {
            check_nonnegative(&format!("{prefix}.{name}"), v)?;
        }
        check_positive(&format!("{prefix}.gamma0_w_per_k"), self.gamma0_w_per_k)?;
        if self.p_hvch_cabin_w > self.p_hvch_max_w {
            return Err(Error::validation(
                format!("{prefix}.p_hvch_cabin_w"),
                "cabin demand exceeds heater rating",
            ));
        }
        Ok(())
    }
}

/// Heat flows into the battery pack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatRates<S> {
    /// Joule heat plus the drivetrain-loss share.
    pub q_pass: S,
    /// Heater minus cooler.
    pub q_act: S,
    /// Exchange with the ambient air.
    pub q_exh: S,
}

impl<S: Scalar> HeatRates<S> {
    pub fn total(&self) -> S {
        self.q_pass + self.q_act + self.q_exh
    }
}

/// Air-drag deceleration, linear in the kinetic energy per unit mass `e`.
pub fn accel_air<S: Scalar>(e: S, p: &VehicleParams) -> S {
    e * p.drag_factor()
}

/// Grade and rolling-resistance deceleration.
pub fn accel_grade_roll<S: Scalar>(alpha: S, p: &VehicleParams) -> S {
    (alpha.sin() + alpha.cos() * p.roll_coeff) * p.gravity_mps2
}

/// Open-circuit voltage and internal resistance.
pub fn battery_maps_eval<S: Scalar>(soc: S, temp: S, maps: &BatteryMaps) -> (S, S) {
    (maps.u_oc(soc), maps.r_b(temp))
}

/// Returns `(P_chg_min <= 0, P_dchg_max >= 0)`.
pub fn power_limits<S: Scalar>(soc: S, temp: S, maps: &BatteryMaps) -> (S, S) {
    maps.power_limits.eval(soc, temp)
}

/// Returns `(P_prop, P_loss_ed)`. The loss is
/// `k0 + k1 * (F v)^2 / P_base + k2 * v^2` with wheel force `F = m a_t`.
pub fn propulsion_power<S: Scalar>(v: S, a_t: S, p: &VehicleParams) -> (S, S) {
    let p_wheel = a_t * v * p.mass_kg;
    let loss = p_wheel.powi2() * (p.ed_k1 / p.ed_p_base_w) + v.powi2() * p.ed_k2 + p.ed_k0_w;
    (p_wheel + loss, loss)
}

#[allow(clippy::too_many_arguments)]
pub fn heat_rates<S: Scalar>(
    soc: S,
    temp: S,
    v: S,
    p_b: S,
    p_hvch_b: S,
    p_hvac_b: S,
    p_loss_ed: S,
    t_amb: f64,
    thermal: &ThermalParams,
    maps: &BatteryMaps,
) -> HeatRates<S> {
    let (u_oc, r_b) = battery_maps_eval(soc, temp, maps);
    let q_pass = r_b * p_b.powi2() / u_oc.powi2() + p_loss_ed * thermal.eps_ed;
    let q_act = p_hvch_b * thermal.eta_hvch - p_hvac_b * thermal.eta_hvac;
    let gamma = v * thermal.gamma1_ws_per_km + thermal.gamma0_w_per_k;
    let q_exh = gamma * (-temp + t_amb);
    HeatRates { q_pass, q_act, q_exh }
}

/// Traction acceleration bounds `(a_min, a_max)` from the torque and power rating.
pub fn accel_limits<S: Scalar>(e: S, p: &VehicleParams) -> (S, S) {
    let v = (e * 2.0).sqrt().max_s(S::cst(p.v_eps_mps));
    let power_limited = S::cst(p.p_em_max_w) / (v * p.mass_kg);
    let a_max = power_limited.min_s(S::cst(p.a_cap_mps2));
    (-a_max, a_max)
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite and > 0, got {v}")))
    }
}

fn check_nonnegative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be finite and >= 0, got {v}")))
    }
}

fn check_axis(field: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::validation(field, "needs at least two nodes"));
    }
    if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(field, "nodes must be finite and strictly increasing"));
    }
    Ok(())
}
