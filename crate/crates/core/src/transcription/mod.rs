//! Direct transcription of the hybrid driving/charging problem into an NLP.
//!
//! Driving segments are discretized on the distance grid and charging stops on
//! a uniform normalized-time grid. Each interval contributes a Runge-Kutta
//! defect with the node's controls held over the interval, and each node a
//! power-balance equality plus the battery-power and traction inequalities.
//! Inside the Runge-Kutta stages the battery power is re-solved from the power
//! balance at the stage state; holding the node value instead lets the
//! optimizer book regeneration at high speed and traction at low speed on
//! alternate intervals.
//! Consecutive phases are linked by copying `(soc, T_b)`; the speed restarts
//! freely after a stop.
//!
//! The NLP seen by the solver is scaled: every variable is divided by a fixed
//! power of two (so scaling round-trips exactly), constraint rows by the scale
//! of the quantity they measure, and the objective by its magnitude at the
//! default initial guess.

mod layout;
mod rk4;

use crate::ad::{Dual, Dual2, Scalar};
use crate::dynamics::{
    balance, charging_load, charging_rates_balanced, driving_load, driving_rates_balanced, physical_root, soft_floor,
    ChargingControl, ChargingState, DrivingControl, DrivingState, Plant, T_CHG_FLOOR_S,
};
use crate::error::{Error, Result};
use crate::models::{accel_grade_roll, accel_limits, power_limits};
use crate::scenario::{resample_road, CostWeights, RoadGrid, Scenario};
use crate::solution::{ChargeStop, CostBreakdown, DriveSegment, TripSolution, TripSummary};
use crate::solver::NlpProblem;

pub use layout::{cv, dv, DecisionLayout, Phase, SegmentLayout, StopLayout, CHARGE_VARS, DRIVE_VARS};
pub use rk4::rk4_step;

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptionOptions {
    pub ds_m: f64,
    pub n_tau: usize,
}

impl Default for TranscriptionOptions {
    fn default() -> Self {
        TranscriptionOptions { ds_m: 2000.0, n_tau: 20 }
    }
}

const DRIVE_SCALE: [f64; DRIVE_VARS] = [256.0, 0.125, 16.0, 4096.0, 4096.0, 0.125, 16384.0];
const CHARGE_SCALE: [f64; CHARGE_VARS] = [0.125, 16.0, 4096.0, 4096.0, 65536.0, 16384.0];
const TIME_SCALE: f64 = 512.0;
const POWER_ROW_SCALE: f64 = 16384.0;

/// Affine constraint `sum(coef * z_phys) + constant`.
#[derive(Debug, Clone)]
struct LinearRow {
    terms: Vec<(usize, f64)>,
    constant: f64,
    scale: f64,
}

impl LinearRow {
    fn value(&self, zp: &[f64]) -> f64 {
        self.terms.iter().map(|&(c, a)| a * zp[c]).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone)]
enum BlockKind {
    DriveInterval { alpha0: f64, alpha1: f64, h: f64 },
    DriveNode,
    ChargeInterval { h: f64 },
    ChargeNode,
}

/// A nonlinear constraint group over a small set of variables.
#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    cols: Vec<usize>,
    eq_row: usize,
    ineq_row: usize,
}

impl Block {
    fn n_eq(&self) -> usize {
        match self.kind {
            BlockKind::DriveInterval { .. } => 3,
            BlockKind::ChargeInterval { .. } => 2,
            BlockKind::DriveNode | BlockKind::ChargeNode => 1,
        }
    }

    fn n_ineq(&self) -> usize {
        match self.kind {
            BlockKind::DriveNode => 4,
            BlockKind::ChargeNode => 1,
            _ => 0,
        }
    }
}

/// The transcribed trip problem.
#[derive(Debug, Clone)]
pub struct TripNlp {
    scn: Scenario,
    grid: RoadGrid,
    layout: DecisionLayout,
    c_t: f64,
    var_scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    blocks: Vec<Block>,
    lin_eq: Vec<LinearRow>,
    lin_ineq: Vec<LinearRow>,
    eq_scale: Vec<f64>,
    ineq_scale: Vec<f64>,
    eq_struct: Vec<(usize, usize)>,
    ineq_struct: Vec<(usize, usize)>,
    hess_struct: Vec<(usize, usize)>,
    obj_scale: f64,
    e_floor: f64,
    guess: Vec<f64>,
}

/// Build the NLP for `scn` with trip-time weight taken from `w`.
pub fn build_nlp(scn: &Scenario, w: &CostWeights, opts: &TranscriptionOptions) -> Result<TripNlp> {
    scn.validate()?;
    if !w.c_t_trip.is_finite() {
        return Err(Error::validation("costs.c_t_trip", "must be finite"));
    }
    let grid = resample_road(&scn.road, &scn.chargers, opts.ds_m)?;
    let layout = DecisionLayout::new(grid.len(), &grid.charger_nodes, opts.n_tau)?;
    let n = layout.n;
    let bc = &scn.boundary;
    let th = &scn.thermal;

    let mut var_scale = vec![1.0; n];
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let p_b_abs = 0.9 * scn.battery.u_oc_min().powi(2) / (2.0 * scn.battery.r_floor_ohm);
    let a_cap = scn.vehicle.a_cap_mps2;

    for (si, seg) in layout.segments.iter().enumerate() {
        for k in 0..seg.n_nodes {
            let g = seg.first_node + k;
            let lo = [
                0.5 * grid.vmin[g].powi(2),
                bc.soc_min,
                bc.t_b_min_c,
                0.0,
                0.0,
                -a_cap,
                -p_b_abs,
            ];
            let hi = [
                0.5 * grid.vmax[g].powi(2),
                bc.soc_max,
                bc.t_b_max_c,
                th.hvch_battery_max_driving(),
                th.hvac_battery_max(),
                a_cap,
                p_b_abs,
            ];
            for v in 0..DRIVE_VARS {
                let i = layout.drive(si, k, v);
                var_scale[i] = DRIVE_SCALE[v];
                lower[i] = lo[v];
                upper[i] = hi[v];
            }
        }
    }
    for (st, stop) in layout.stops.iter().enumerate() {
        let ch = &scn.chargers[stop.charger];
        for (i, lo, hi) in [
            (layout.t_chg(st), T_CHG_FLOOR_S, ch.t_chg_max_s),
            (layout.sigma(st), 0.0, ch.t_chg_max_s),
        ] {
            var_scale[i] = TIME_SCALE;
            lower[i] = lo;
            upper[i] = hi;
        }
        for j in 0..layout.n_tau {
            let lo = [bc.soc_min, bc.t_b_min_c, 0.0, 0.0, 0.0, -p_b_abs];
            let hi = [
                bc.soc_max,
                bc.t_b_max_c,
                th.hvch_battery_max_charging(),
                th.hvac_battery_max(),
                ch.p_grid_max_w,
                0.0,
            ];
            for v in 0..CHARGE_VARS {
                let i = layout.charge(st, j, v);
                var_scale[i] = CHARGE_SCALE[v];
                lower[i] = lo[v];
                upper[i] = hi[v];
            }
        }
    }

    // nonlinear blocks
    let mut blocks = Vec::new();
    let mut eq_row = 0;
    let mut ineq_row = 0;
    let mut eq_scale = Vec::new();
    let mut ineq_scale = Vec::new();
    let mut push = |kind: BlockKind, cols: Vec<usize>, eq_row: &mut usize, ineq_row: &mut usize| {
        let b = Block { kind, cols, eq_row: *eq_row, ineq_row: *ineq_row };
        match b.kind {
            BlockKind::DriveInterval { .. } => eq_scale.extend_from_slice(&DRIVE_SCALE[..3]),
            BlockKind::ChargeInterval { .. } => eq_scale.extend_from_slice(&CHARGE_SCALE[..2]),
            BlockKind::DriveNode => {
                eq_scale.push(POWER_ROW_SCALE);
                ineq_scale.extend_from_slice(&[POWER_ROW_SCALE, POWER_ROW_SCALE, 0.125, 0.125]);
            }
            BlockKind::ChargeNode => {
                eq_scale.push(POWER_ROW_SCALE);
                ineq_scale.push(POWER_ROW_SCALE);
            }
        }
        *eq_row += b.n_eq();
        *ineq_row += b.n_ineq();
        blocks.push(b);
    };
    for (si, seg) in layout.segments.iter().enumerate() {
        for k in 0..seg.n_nodes - 1 {
            let g = seg.first_node + k;
            let mut cols: Vec<usize> = (0..DRIVE_VARS).map(|v| layout.drive(si, k, v)).collect();
            cols.extend((0..3).map(|v| layout.drive(si, k + 1, v)));
            let kind = BlockKind::DriveInterval {
                alpha0: grid.alpha[g],
                alpha1: grid.alpha[g + 1],
                h: grid.s[g + 1] - grid.s[g],
            };
            push(kind, cols, &mut eq_row, &mut ineq_row);
        }
        for k in 0..seg.n_nodes {
            let cols = (0..DRIVE_VARS).map(|v| layout.drive(si, k, v)).collect();
            push(BlockKind::DriveNode, cols, &mut eq_row, &mut ineq_row);
        }
    }
    let h_tau = 1.0 / (layout.n_tau - 1) as f64;
    for st in 0..layout.stops.len() {
        for j in 0..layout.n_tau - 1 {
            let mut cols: Vec<usize> = (0..CHARGE_VARS).map(|v| layout.charge(st, j, v)).collect();
            cols.extend((0..2).map(|v| layout.charge(st, j + 1, v)));
            cols.push(layout.t_chg(st));
            push(BlockKind::ChargeInterval { h: h_tau }, cols, &mut eq_row, &mut ineq_row);
        }
        for j in 0..layout.n_tau {
            let cols = (0..CHARGE_VARS).map(|v| layout.charge(st, j, v)).collect();
            push(BlockKind::ChargeNode, cols, &mut eq_row, &mut ineq_row);
        }
    }

    // linear rows: initial state, phase transitions, terminal state, occupancy slack
    let mut lin_eq = Vec::new();
    let mut lin_ineq = Vec::new();
    let first = |v| layout.drive(0, 0, v);
    for (v, value, scale) in [
        (dv::E, 0.5 * bc.v0_mps.powi(2), DRIVE_SCALE[dv::E]),
        (dv::SOC, bc.soc0, DRIVE_SCALE[dv::SOC]),
        (dv::TEMP, bc.t_b0_c, DRIVE_SCALE[dv::TEMP]),
    ] {
        lin_eq.push(LinearRow { terms: vec![(first(v), 1.0)], constant: -value, scale });
    }
    // (soc, T) slots at the start and end of each phase
    let ends = |ph: Phase| -> ([usize; 2], [usize; 2]) {
        match ph {
            Phase::Drive(s) => {
                let last = layout.segments[s].n_nodes - 1;
                (
                    [layout.drive(s, 0, dv::SOC), layout.drive(s, 0, dv::TEMP)],
                    [layout.drive(s, last, dv::SOC), layout.drive(s, last, dv::TEMP)],
                )
            }
            Phase::Charge(c) => {
                let last = layout.n_tau - 1;
                (
                    [layout.charge(c, 0, cv::SOC), layout.charge(c, 0, cv::TEMP)],
                    [layout.charge(c, last, cv::SOC), layout.charge(c, last, cv::TEMP)],
                )
            }
        }
    };
    for w2 in layout.phases.windows(2) {
        let (_, prev_end) = ends(w2[0]);
        let (next_start, _) = ends(w2[1]);
        for (q, scale) in [(0, DRIVE_SCALE[dv::SOC]), (1, DRIVE_SCALE[dv::TEMP])] {
            lin_eq.push(LinearRow {
                terms: vec![(next_start[q], 1.0), (prev_end[q], -1.0)],
                constant: 0.0,
                scale,
            });
        }
    }
    let (_, terminal) = ends(*layout.phases.last().expect("layout has at least one phase"));
    lin_ineq.push(LinearRow {
        terms: vec![(terminal[0], -1.0)],
        constant: bc.soc_f_min,
        scale: DRIVE_SCALE[dv::SOC],
    });
    lin_ineq.push(LinearRow {
        terms: vec![(terminal[1], -1.0)],
        constant: bc.t_bf_min_c,
        scale: DRIVE_SCALE[dv::TEMP],
    });
    for (st, stop) in layout.stops.iter().enumerate() {
        lin_ineq.push(LinearRow {
            terms: vec![(layout.t_chg(st), 1.0), (layout.sigma(st), -1.0)],
            constant: -scn.chargers[stop.charger].t_free_s,
            scale: TIME_SCALE,
        });
    }
    eq_scale.extend(lin_eq.iter().map(|r| r.scale));
    ineq_scale.extend(lin_ineq.iter().map(|r| r.scale));

    let mut eq_struct = Vec::new();
    let mut ineq_struct = Vec::new();
    for b in &blocks {
        for r in 0..b.n_eq() {
            eq_struct.extend(b.cols.iter().map(|&c| (b.eq_row + r, c)));
        }
        for r in 0..b.n_ineq() {
            // the two power-limit rows do not depend on E, a_t or the heater powers,
            // the traction rows only on E and a_t
            let cols: Vec<usize> = match (&b.kind, r) {
                (BlockKind::DriveNode, 0 | 1) => vec![b.cols[dv::SOC], b.cols[dv::TEMP], b.cols[dv::P_B]],
                (BlockKind::DriveNode, _) => vec![b.cols[dv::E], b.cols[dv::A_T]],
                (BlockKind::ChargeNode, _) => vec![b.cols[cv::SOC], b.cols[cv::TEMP], b.cols[cv::P_B]],
                _ => unreachable!(),
            };
            ineq_struct.extend(cols.into_iter().map(|c| (b.ineq_row + r, c)));
        }
    }
    for (r, row) in lin_eq.iter().enumerate() {
        eq_struct.extend(row.terms.iter().map(|&(c, _)| (eq_row + r, c)));
    }
    for (r, row) in lin_ineq.iter().enumerate() {
        ineq_struct.extend(row.terms.iter().map(|&(c, _)| (ineq_row + r, c)));
    }

    // Hessian: dense per block, then the objective's E diagonal and the
    // charging time times grid power couplings
    let mut hess_struct = Vec::new();
    for b in &blocks {
        for &i in &b.cols {
            hess_struct.extend(b.cols.iter().map(|&j| (i, j)));
        }
    }
    for (si, seg) in layout.segments.iter().enumerate() {
        hess_struct.extend((0..seg.n_nodes).map(|k| {
            let i = layout.drive(si, k, dv::E);
            (i, i)
        }));
    }
    for st in 0..layout.stops.len() {
        let t = layout.t_chg(st);
        for j in 0..layout.n_tau - 1 {
            let pg = layout.charge(st, j, cv::P_GRID);
            hess_struct.extend([(t, pg), (pg, t)]);
        }
    }

    let e_floor = 0.25 * grid.vmin.iter().cloned().fold(f64::INFINITY, f64::min).powi(2);
    let mut nlp = TripNlp {
        scn: scn.clone(),
        grid,
        layout,
        c_t: w.c_t_trip,
        var_scale,
        lower: Vec::new(),
        upper: Vec::new(),
        blocks,
        lin_eq,
        lin_ineq,
        eq_scale,
        ineq_scale,
        eq_struct,
        ineq_struct,
        hess_struct,
        obj_scale: 1.0,
        e_floor,
        guess: Vec::new(),
    };
    nlp.lower = nlp.scale(&lower);
    nlp.upper = nlp.scale(&upper);
    let guess_phys = nlp.initial_guess_physical(&lower, &upper);
    nlp.obj_scale = nlp.objective_physical(&guess_phys).abs().max(1.0);
    nlp.guess = nlp.scale(&guess_phys);
    Ok(nlp)
}

impl TripNlp {
    pub fn layout(&self) -> &DecisionLayout {
        &self.layout
    }

    pub fn grid(&self) -> &RoadGrid {
        &self.grid
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scn
    }

    pub fn time_weight(&self) -> f64 {
        self.c_t
    }

    /// Objective divisor; multipliers of scaled problems with different
    /// divisors differ by the ratio of the divisors.
    pub fn objective_scale(&self) -> f64 {
        self.obj_scale
    }

    pub fn variable_scales(&self) -> &[f64] {
        &self.var_scale
    }

    /// Physical to scaled variables.
    pub fn scale(&self, zp: &[f64]) -> Vec<f64> {
        zp.iter().zip(&self.var_scale).map(|(v, s)| v / s).collect()
    }

    /// Scaled to physical variables.
    pub fn unscale(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.var_scale).map(|(v, s)| v * s).collect()
    }

    fn plant(&self) -> Plant<'_> {
        Plant::new(&self.scn)
    }

    fn check_len(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.layout.n {
            return Err(Error::LayoutMismatch { expected: self.layout.n, got: z.len() });
        }
        Ok(())
    }

    fn drive_defect<S: Scalar>(&self, v: &[S], alpha0: f64, alpha1: f64, h: f64) -> [S; 3] {
        let plant = self.plant();
        let u = DrivingControl { p_hvch_b: v[3], p_hvac_b: v[4], a_t: v[5], p_b: v[6] };
        let step = rk4_step(
            |off, x: &[S; 3]| {
                let alpha = S::cst(alpha0 + (alpha1 - alpha0) * off / h);
                let st = DrivingState { e: x[0], soc: x[1], temp_c: x[2] };
                Ok(driving_rates_balanced(&st, &u, alpha, self.e_floor, &plant))
            },
            [v[0], v[1], v[2]],
            h,
        )
        .expect("driving rates are total");
        [v[7] - step[0], v[8] - step[1], v[9] - step[2]]
    }

    fn drive_node<S: Scalar>(&self, v: &[S]) -> (S, [S; 4]) {
        let plant = self.plant();
        let u = DrivingControl { p_hvch_b: v[3], p_hvac_b: v[4], a_t: v[5], p_b: v[6] };
        let speed = (soft_floor(v[0], self.e_floor) * 2.0).sqrt();
        let r = balance(v[1], v[2], driving_load(speed, &u, &plant), u.p_b, &self.scn.battery);
        let (p_chg_min, p_dchg_max) = power_limits(v[1], v[2], &self.scn.battery);
        let (a_min, a_max) = accel_limits(v[0], &self.scn.vehicle);
        (r, [p_chg_min - u.p_b, u.p_b - p_dchg_max, a_min - u.a_t, u.a_t - a_max])
    }

    fn charge_defect<S: Scalar>(&self, v: &[S], h: f64) -> [S; 2] {
        let plant = self.plant();
        let u = ChargingControl { p_hvch_b: v[2], p_hvac_b: v[3], p_grid: v[4], p_b: v[5] };
        let t = v[8];
        let step = rk4_step(
            |_, x: &[S; 2]| {
                let st = ChargingState { soc: x[0], temp_c: x[1] };
                Ok(charging_rates_balanced(&st, &u, t, &plant))
            },
            [v[0], v[1]],
            h,
        )
        .expect("charging rates are total");
        [v[6] - step[0], v[7] - step[1]]
    }

    fn charge_node<S: Scalar>(&self, v: &[S]) -> (S, S) {
        let plant = self.plant();
        let u = ChargingControl { p_hvch_b: v[2], p_hvac_b: v[3], p_grid: v[4], p_b: v[5] };
        let r = balance(v[0], v[1], charging_load(&u, &plant), u.p_b, &self.scn.battery);
        let (p_chg_min, _) = power_limits(v[0], v[1], &self.scn.battery);
        (r, p_chg_min - u.p_b)
    }

    /// Unscaled constraint values.
    fn constraints_physical(&self, zp: &[f64], c: &mut [f64], g: &mut [f64]) {
        let mut buf = [0.0; 10];
        for b in &self.blocks {
            for (slot, &col) in buf.iter_mut().zip(&b.cols) {
                *slot = zp[col];
            }
            let v = &buf[..b.cols.len()];
            match b.kind {
                BlockKind::DriveInterval { alpha0, alpha1, h } => {
                    c[b.eq_row..b.eq_row + 3].copy_from_slice(&self.drive_defect(v, alpha0, alpha1, h));
                }
                BlockKind::DriveNode => {
                    let (r, ineq) = self.drive_node(v);
                    c[b.eq_row] = r;
                    g[b.ineq_row..b.ineq_row + 4].copy_from_slice(&ineq);
                }
                BlockKind::ChargeInterval { h } => {
                    c[b.eq_row..b.eq_row + 2].copy_from_slice(&self.charge_defect(v, h));
                }
                BlockKind::ChargeNode => {
                    let (r, q) = self.charge_node(v);
                    c[b.eq_row] = r;
                    g[b.ineq_row] = q;
                }
            }
        }
        let e0 = c.len() - self.lin_eq.len();
        for (r, row) in self.lin_eq.iter().enumerate() {
            c[e0 + r] = row.value(zp);
        }
        let i0 = g.len() - self.lin_ineq.len();
        for (r, row) in self.lin_ineq.iter().enumerate() {
            g[i0 + r] = row.value(zp);
        }
    }

    fn seeded<const N: usize>(zp: &[f64], cols: &[usize]) -> [Dual<N>; N] {
        let mut vals = [0.0; N];
        for (v, &c) in vals.iter_mut().zip(cols) {
            *v = zp[c];
        }
        Dual::seed(vals)
    }

    /// Scaled Jacobian values in structure order; `eq` selects the equality
    /// or inequality Jacobian.
    fn jacobian_values(&self, z: &[f64], eq: bool, out: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        let zp = self.unscale(z);
        let mut pos = 0;
        let vs = &self.var_scale;
        let mut put = |row_scale: f64, cols: &[usize], du: &[f64]| {
            for (&c, d) in cols.iter().zip(du) {
                out[pos] = d * vs[c] / row_scale;
                pos += 1;
            }
        };
        for b in &self.blocks {
            match (&b.kind, eq) {
                (&BlockKind::DriveInterval { alpha0, alpha1, h }, true) => {
                    let d = self.drive_defect(&Self::seeded::<10>(&zp, &b.cols), alpha0, alpha1, h);
                    for (r, dr) in d.iter().enumerate() {
                        put(self.eq_scale[b.eq_row + r], &b.cols, &dr.du);
                    }
                }
                (BlockKind::DriveNode, _) => {
                    let (r, ineq) = self.drive_node(&Self::seeded::<7>(&zp, &b.cols));
                    if eq {
                        put(self.eq_scale[b.eq_row], &b.cols, &r.du);
                    } else {
                        let sel = |idx: &[usize], d: &Dual<7>| -> (Vec<usize>, Vec<f64>) {
                            (idx.iter().map(|&i| b.cols[i]).collect(), idx.iter().map(|&i| d.du[i]).collect())
                        };
                        for (q, gq) in ineq.iter().enumerate() {
                            let idx: &[usize] = if q < 2 { &[dv::SOC, dv::TEMP, dv::P_B] } else { &[dv::E, dv::A_T] };
                            let (cols, du) = sel(idx, gq);
                            put(self.ineq_scale[b.ineq_row + q], &cols, &du);
                        }
                    }
                }
                (&BlockKind::ChargeInterval { h }, true) => {
                    let d = self.charge_defect(&Self::seeded::<9>(&zp, &b.cols), h);
                    for (r, dr) in d.iter().enumerate() {
                        put(self.eq_scale[b.eq_row + r], &b.cols, &dr.du);
                    }
                }
                (BlockKind::ChargeNode, _) => {
                    let (r, q) = self.charge_node(&Self::seeded::<6>(&zp, &b.cols));
                    if eq {
                        put(self.eq_scale[b.eq_row], &b.cols, &r.du);
                    } else {
                        let idx = [cv::SOC, cv::TEMP, cv::P_B];
                        let cols: Vec<usize> = idx.iter().map(|&i| b.cols[i]).collect();
                        let du: Vec<f64> = idx.iter().map(|&i| q.du[i]).collect();
                        put(self.ineq_scale[b.ineq_row], &cols, &du);
                    }
                }
                _ => {}
            }
        }
        let rows = if eq { &self.lin_eq } else { &self.lin_ineq };
        for row in rows {
            let cols: Vec<usize> = row.terms.iter().map(|t| t.0).collect();
            let du: Vec<f64> = row.terms.iter().map(|t| t.1).collect();
            put(row.scale, &cols, &du);
        }
        debug_assert_eq!(pos, out.len());
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("constraint Jacobian".into()))
        }
    }

    fn seeded2<const N: usize>(zp: &[f64], cols: &[usize]) -> [Dual2<N>; N] {
        let mut vals = [0.0; N];
        for (v, &c) in vals.iter_mut().zip(cols) {
            *v = zp[c];
        }
        Dual2::seed(vals)
    }

    /// Add `sum_r w_r * hess(out_r) / scale_r` to a block, converting to scaled
    /// variables.
    fn put_hessian<const N: usize>(&self, cols: &[usize], terms: &[(Dual2<N>, f64)], out: &mut [f64]) {
        let vs = &self.var_scale;
        for (a, &ca) in cols.iter().enumerate() {
            for (b, &cb) in cols.iter().enumerate() {
                let v: f64 = terms.iter().map(|(d, w)| w * d.hs[a][b]).sum();
                out[a * cols.len() + b] += v * vs[ca] * vs[cb];
            }
        }
    }

    fn hessian_values(&self, z: &[f64], sigma: f64, eq_w: &[f64], in_w: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        let zp = self.unscale(z);
        out.iter_mut().for_each(|v| *v = 0.0);
        let ew = |r: usize| eq_w[r] / self.eq_scale[r];
        let iw = |r: usize| in_w[r] / self.ineq_scale[r];
        let mut pos = 0;
        for b in &self.blocks {
            let len = b.cols.len() * b.cols.len();
            let dst = &mut out[pos..pos + len];
            match b.kind {
                BlockKind::DriveInterval { alpha0, alpha1, h } => {
                    let d = self.drive_defect(&Self::seeded2::<10>(&zp, &b.cols), alpha0, alpha1, h);
                    let terms: Vec<_> = (0..3).map(|r| (d[r], ew(b.eq_row + r))).collect();
                    self.put_hessian(&b.cols, &terms, dst);
                }
                BlockKind::DriveNode => {
                    let (r, g) = self.drive_node(&Self::seeded2::<7>(&zp, &b.cols));
                    let mut terms = vec![(r, ew(b.eq_row))];
                    terms.extend((0..4).map(|q| (g[q], iw(b.ineq_row + q))));
                    self.put_hessian(&b.cols, &terms, dst);
                }
                BlockKind::ChargeInterval { h } => {
                    let d = self.charge_defect(&Self::seeded2::<9>(&zp, &b.cols), h);
                    let terms: Vec<_> = (0..2).map(|r| (d[r], ew(b.eq_row + r))).collect();
                    self.put_hessian(&b.cols, &terms, dst);
                }
                BlockKind::ChargeNode => {
                    let (r, g) = self.charge_node(&Self::seeded2::<6>(&zp, &b.cols));
                    self.put_hessian(&b.cols, &[(r, ew(b.eq_row)), (g, iw(b.ineq_row))], dst);
                }
            }
            pos += len;
        }
        let l = &self.layout;
        let vs = &self.var_scale;
        let f = sigma / self.obj_scale;
        for (si, seg) in l.segments.iter().enumerate() {
            for k in 0..seg.n_nodes {
                let g = seg.first_node + k;
                // trapezoid weights of the node in the two adjacent intervals
                let mut w = 0.0;
                if k > 0 {
                    w += 0.5 * (self.grid.s[g] - self.grid.s[g - 1]);
                }
                if k + 1 < seg.n_nodes {
                    w += 0.5 * (self.grid.s[g + 1] - self.grid.s[g]);
                }
                let i = l.drive(si, k, dv::E);
                out[pos] = f * self.c_t * w * 3.0 * (2.0 * zp[i]).powf(-2.5) * vs[i] * vs[i];
                pos += 1;
            }
        }
        let h = 1.0 / (l.n_tau - 1) as f64;
        for (st, stop) in l.stops.iter().enumerate() {
            let ce = self.scn.chargers[stop.charger].c_e_per_joule();
            let t = l.t_chg(st);
            for j in 0..l.n_tau - 1 {
                let v = f * h * ce * vs[t] * vs[l.charge(st, j, cv::P_GRID)];
                out[pos] = v;
                out[pos + 1] = v;
                pos += 2;
            }
        }
        debug_assert_eq!(pos, out.len());
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("Lagrangian Hessian".into()))
        }
    }

    /// Physical objective: trip-time cost plus energy and occupancy costs.
    pub fn objective_physical(&self, zp: &[f64]) -> f64 {
        let l = &self.layout;
        let mut j = 0.0;
        for (si, seg) in l.segments.iter().enumerate() {
            for k in 0..seg.n_nodes - 1 {
                let g = seg.first_node + k;
                let ds = self.grid.s[g + 1] - self.grid.s[g];
                let inv0 = 1.0 / (2.0 * zp[l.drive(si, k, dv::E)]).sqrt();
                let inv1 = 1.0 / (2.0 * zp[l.drive(si, k + 1, dv::E)]).sqrt();
                j += self.c_t * ds * 0.5 * (inv0 + inv1);
            }
        }
        let h = 1.0 / (l.n_tau - 1) as f64;
        for (st, stop) in l.stops.iter().enumerate() {
            let ch = &self.scn.chargers[stop.charger];
            let t = zp[l.t_chg(st)];
            let grid_sum: f64 = (0..l.n_tau - 1).map(|q| zp[l.charge(st, q, cv::P_GRID)]).sum();
            j += t * h * ((l.n_tau - 1) as f64 * self.c_t + ch.c_e_per_joule() * grid_sum);
            j += ch.c_t_per_s * zp[l.sigma(st)];
        }
        j
    }

    fn objective_grad_physical(&self, zp: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|v| *v = 0.0);
        let l = &self.layout;
        for (si, seg) in l.segments.iter().enumerate() {
            for k in 0..seg.n_nodes - 1 {
                let g = seg.first_node + k;
                let w = self.c_t * (self.grid.s[g + 1] - self.grid.s[g]) * 0.5;
                for kk in [k, k + 1] {
                    let i = l.drive(si, kk, dv::E);
                    grad[i] -= w * (2.0 * zp[i]).powf(-1.5);
                }
            }
        }
        let h = 1.0 / (l.n_tau - 1) as f64;
        for (st, stop) in l.stops.iter().enumerate() {
            let ch = &self.scn.chargers[stop.charger];
            let t = zp[l.t_chg(st)];
            let ce = ch.c_e_per_joule();
            let grid_sum: f64 = (0..l.n_tau - 1).map(|q| zp[l.charge(st, q, cv::P_GRID)]).sum();
            grad[l.t_chg(st)] += h * ((l.n_tau - 1) as f64 * self.c_t + ce * grid_sum);
            for q in 0..l.n_tau - 1 {
                grad[l.charge(st, q, cv::P_GRID)] += t * h * ce;
            }
            grad[l.sigma(st)] += ch.c_t_per_s;
        }
    }

    fn initial_guess_physical(&self, lower: &[f64], upper: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let bc = &self.scn.boundary;
        let plant = self.plant();
        let mut zp = vec![0.0; l.n];
        let target_t = bc.t_amb_c.max(20.0);
        let soc_at = |s: f64| (bc.soc0 - 0.2 * s / 100e3).clamp(bc.soc_min, bc.soc_max);
        let temp_at = |s: f64| {
            (target_t + (bc.t_b0_c - target_t) * (-s / 100e3).exp()).clamp(bc.t_b_min_c, bc.t_b_max_c)
        };
        let c_a = self.scn.vehicle.drag_factor();
        for (si, seg) in l.segments.iter().enumerate() {
            for k in 0..seg.n_nodes {
                let g = seg.first_node + k;
                let s = self.grid.s[g];
                let v = 0.5 * (self.grid.vmin[g] + self.grid.vmax[g]);
                let e = 0.5 * v * v;
                let soc = soc_at(s);
                let temp = temp_at(s);
                let a_t = c_a * e + accel_grade_roll(self.grid.alpha[g], &self.scn.vehicle);
                let u = DrivingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, a_t, p_b: 0.0 };
                let load = driving_load(v, &u, &plant);
                let (u_oc, r_b) = (self.scn.battery.u_oc(soc), self.scn.battery.r_b(temp));
                let p_b = physical_root(load, u_oc, r_b).unwrap_or(0.5 * u_oc * u_oc / r_b);
                let vals = [e, soc, temp, 0.0, 0.0, a_t, p_b];
                for (var, val) in vals.iter().enumerate() {
                    zp[l.drive(si, k, var)] = *val;
                }
            }
        }
        for (st, stop) in l.stops.iter().enumerate() {
            let ch = &self.scn.chargers[stop.charger];
            let t = 0.5 * ch.t_chg_max_s;
            zp[l.t_chg(st)] = t;
            zp[l.sigma(st)] = (t - ch.t_free_s).max(0.0);
            let s = self.grid.s[stop.grid_node];
            let (soc, temp) = (soc_at(s), temp_at(s));
            let p_grid = 0.5 * ch.p_grid_max_w;
            let u = ChargingControl { p_hvch_b: 0.0, p_hvac_b: 0.0, p_grid, p_b: 0.0 };
            let load = charging_load(&u, &plant);
            let (u_oc, r_b) = (self.scn.battery.u_oc(soc), self.scn.battery.r_b(temp));
            let p_b = physical_root(load, u_oc, r_b).unwrap_or(0.0);
            for j in 0..l.n_tau {
                let vals = [soc, temp, 0.0, 0.0, p_grid, p_b];
                for (var, val) in vals.iter().enumerate() {
                    zp[l.charge(st, j, var)] = *val;
                }
            }
        }
        for ((v, lo), hi) in zp.iter_mut().zip(lower).zip(upper) {
            *v = v.clamp(*lo, *hi);
        }
        zp
    }

    /// Default starting point (scaled).
    pub fn initial_guess(&self) -> Vec<f64> {
        self.guess.clone()
    }

    /// Physical driving defects `[E, soc, T_b]` of every interval in layout order.
    pub fn drive_defects(&self, z: &[f64]) -> Result<Vec<[f64; 3]>> {
        self.check_len(z)?;
        let zp = self.unscale(z);
        let mut out = Vec::new();
        for b in &self.blocks {
            if let BlockKind::DriveInterval { alpha0, alpha1, h } = b.kind {
                let v: Vec<f64> = b.cols.iter().map(|&c| zp[c]).collect();
                out.push(self.drive_defect(&v, alpha0, alpha1, h));
            }
        }
        Ok(out)
    }

    /// Scaled variables from a solution of the same layout.
    pub fn pack(&self, sol: &TripSolution) -> Result<Vec<f64>> {
        let l = &self.layout;
        if sol.segments.len() != l.segments.len() || sol.stops.len() != l.stops.len() {
            return Err(Error::LayoutMismatch {
                expected: l.segments.len() + l.stops.len(),
                got: sol.segments.len() + sol.stops.len(),
            });
        }
        let mut zp = vec![0.0; l.n];
        for (si, seg) in l.segments.iter().enumerate() {
            let d = &sol.segments[si];
            if d.len() != seg.n_nodes {
                return Err(Error::LayoutMismatch { expected: seg.n_nodes, got: d.len() });
            }
            for k in 0..seg.n_nodes {
                let vals = [d.e[k], d.soc[k], d.temp_c[k], d.p_hvch_w[k], d.p_hvac_w[k], d.a_t_mps2[k], d.p_b_w[k]];
                for (var, val) in vals.iter().enumerate() {
                    zp[l.drive(si, k, var)] = *val;
                }
            }
        }
        for st in 0..l.stops.len() {
            let c = &sol.stops[st];
            if c.tau.len() != l.n_tau {
                return Err(Error::LayoutMismatch { expected: l.n_tau, got: c.tau.len() });
            }
            zp[l.t_chg(st)] = c.t_chg_s;
            zp[l.sigma(st)] = c.sigma_s;
            for j in 0..l.n_tau {
                let vals = [c.soc[j], c.temp_c[j], c.p_hvch_w[j], c.p_hvac_w[j], c.p_grid_w[j], c.p_b_w[j]];
                for (var, val) in vals.iter().enumerate() {
                    zp[l.charge(st, j, var)] = *val;
                }
            }
        }
        Ok(self.scale(&zp))
    }

    /// Physical trajectories, costs and summary from scaled variables.
    pub fn extract_solution(&self, z: &[f64]) -> Result<TripSolution> {
        self.check_len(z)?;
        let zp = self.unscale(z);
        let l = &self.layout;
        let g = &self.grid;
        let mut segments = Vec::new();
        for (si, seg) in l.segments.iter().enumerate() {
            let nodes = seg.first_node..seg.first_node + seg.n_nodes;
            let col = |var: usize| -> Vec<f64> { (0..seg.n_nodes).map(|k| zp[l.drive(si, k, var)]).collect() };
            let e = col(dv::E);
            segments.push(DriveSegment {
                s_m: g.s[nodes.clone()].to_vec(),
                altitude_m: g.altitude[nodes.clone()].to_vec(),
                alpha_rad: g.alpha[nodes.clone()].to_vec(),
                vmin_mps: g.vmin[nodes.clone()].to_vec(),
                vmax_mps: g.vmax[nodes].to_vec(),
                v_mps: e.iter().map(|e| (2.0 * e).sqrt()).collect(),
                e,
                soc: col(dv::SOC),
                temp_c: col(dv::TEMP),
                p_hvch_w: col(dv::HVCH),
                p_hvac_w: col(dv::HVAC),
                a_t_mps2: col(dv::A_T),
                p_b_w: col(dv::P_B),
            });
        }
        let h = 1.0 / (l.n_tau - 1) as f64;
        let mut stops = Vec::new();
        let mut energy_cost = Vec::new();
        let mut occupancy_cost = Vec::new();
        for (st, stop) in l.stops.iter().enumerate() {
            let ch = &self.scn.chargers[stop.charger];
            let col = |var: usize| -> Vec<f64> { (0..l.n_tau).map(|j| zp[l.charge(st, j, var)]).collect() };
            let c = ChargeStop {
                charger: stop.charger,
                s_m: g.s[stop.grid_node],
                t_chg_s: zp[l.t_chg(st)],
                sigma_s: zp[l.sigma(st)],
                tau: (0..l.n_tau).map(|j| j as f64 * h).collect(),
                soc: col(cv::SOC),
                temp_c: col(cv::TEMP),
                p_hvch_w: col(cv::HVCH),
                p_hvac_w: col(cv::HVAC),
                p_grid_w: col(cv::P_GRID),
                p_b_w: col(cv::P_B),
            };
            let grid_sum: f64 = c.p_grid_w[..l.n_tau - 1].iter().sum();
            energy_cost.push(ch.c_e_per_joule() * c.t_chg_s * h * grid_sum);
            occupancy_cost.push(ch.c_t_per_s * c.sigma_s);
            stops.push(c);
        }
        let driving_time: f64 = segments.iter().map(|s| s.travel_time_s()).sum();
        let charging_time: f64 = stops.iter().map(|s| s.t_chg_s).sum();
        let costs = CostBreakdown::new(self.c_t * (driving_time + charging_time), energy_cost, occupancy_cost);
        let summary = TripSummary::new(driving_time, charging_time, costs.total_energy_cost());
        Ok(TripSolution {
            scenario: self.scn.name.clone(),
            c_t_trip: self.c_t,
            segments,
            stops,
            costs,
            summary,
            diagnostics: None,
        })
    }
}

impl NlpProblem for TripNlp {
    fn n(&self) -> usize {
        self.layout.n
    }

    fn n_eq(&self) -> usize {
        self.eq_scale.len()
    }

    fn n_ineq(&self) -> usize {
        self.ineq_scale.len()
    }

    fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn initial_point(&self) -> Vec<f64> {
        self.guess.clone()
    }

    fn objective(&self, z: &[f64]) -> Result<f64> {
        self.check_len(z)?;
        Ok(self.objective_physical(&self.unscale(z)) / self.obj_scale)
    }

    fn objective_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        self.objective_grad_physical(&self.unscale(z), grad);
        for (g, s) in grad.iter_mut().zip(&self.var_scale) {
            *g *= s / self.obj_scale;
        }
        Ok(())
    }

    fn eq_constraints(&self, z: &[f64], c: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        let mut g = vec![0.0; self.n_ineq()];
        self.constraints_physical(&self.unscale(z), c, &mut g);
        for (v, s) in c.iter_mut().zip(&self.eq_scale) {
            *v /= s;
        }
        Ok(())
    }

    fn ineq_constraints(&self, z: &[f64], g: &mut [f64]) -> Result<()> {
        self.check_len(z)?;
        let mut c = vec![0.0; self.n_eq()];
        self.constraints_physical(&self.unscale(z), &mut c, g);
        for (v, s) in g.iter_mut().zip(&self.ineq_scale) {
            *v /= s;
        }
        Ok(())
    }

    fn eq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.eq_struct.clone()
    }

    fn ineq_jacobian_structure(&self) -> Vec<(usize, usize)> {
        self.ineq_struct.clone()
    }

    fn eq_jacobian(&self, z: &[f64], values: &mut [f64]) -> Result<()> {
        self.jacobian_values(z, true, values)
    }

    fn ineq_jacobian(&self, z: &[f64], values: &mut [f64]) -> Result<()> {
        self.jacobian_values(z, false, values)
    }

    fn hessian_structure(&self) -> Option<Vec<(usize, usize)>> {
        Some(self.hess_struct.clone())
    }

    fn lagrangian_hessian(
        &self,
        z: &[f64],
        sigma: f64,
        eq_w: &[f64],
        ineq_w: &[f64],
        values: &mut [f64],
    ) -> Result<()> {
        self.hessian_values(z, sigma, eq_w, ineq_w, values)
    }
}
