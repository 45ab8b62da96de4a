//! Time-weight sweeps and the thermal-preconditioning comparison.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::{plan_trip, Plan, PlanOptions};
use crate::scenario::{CostWeights, Scenario};
use crate::solution::TripSolution;
use crate::solver::SolveStatus;

/// Relative slack used when comparing trip times and costs of sweep points;
/// about what a 1e-6 KKT tolerance leaves in the objective.
pub const TIE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub c_t_trip: f64,
    /// Including charging.
    pub trip_time_s: f64,
    pub chg_time_s: f64,
    pub energy_cost: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    /// Negative time weights reward long trips; only the bounds keep the
    /// problem bounded.
    pub negative_weight: bool,
}

impl ParetoPoint {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParetoFront {
    pub points: Vec<ParetoPoint>,
    pub solutions: Vec<TripSolution>,
}

impl ParetoFront {
    pub fn optimal_points(&self) -> impl Iterator<Item = &ParetoPoint> {
        self.points.iter().filter(|p| p.is_optimal())
    }

    /// Pairs of optimal points where the shorter trip is also the cheaper one
    /// in energy, beyond [`TIE_TOL`].
    pub fn reversal_count(&self) -> usize {
        let pts: Vec<&ParetoPoint> = self.optimal_points().collect();
        let mut n = 0;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                let (fast, slow) = if a.trip_time_s <= b.trip_time_s { (a, b) } else { (b, a) };
                let dt = slow.trip_time_s - fast.trip_time_s;
                let dc = slow.energy_cost - fast.energy_cost;
                if dt > TIE_TOL * slow.trip_time_s && dc > TIE_TOL * fast.energy_cost.abs().max(1.0) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Whether trip time is nonincreasing and energy cost nondecreasing in
    /// the weight, over optimal points.
    pub fn is_monotone(&self) -> bool {
        let pts: Vec<&ParetoPoint> = self.optimal_points().collect();
        pts.windows(2).all(|w| {
            w[1].trip_time_s <= w[0].trip_time_s * (1.0 + TIE_TOL)
                && w[1].energy_cost >= w[0].energy_cost - TIE_TOL * w[0].energy_cost.abs().max(1.0)
        })
    }

    /// CSV with header `c_t_trip,trip_time_s,chg_time_s,energy_cost,status`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("c_t_trip,trip_time_s,chg_time_s,energy_cost,status\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.c_t_trip, p.trip_time_s, p.chg_time_s, p.energy_cost, p.status
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub plan: PlanOptions,
    /// Start each solve from the previous weight's solution. Points are
    /// solved in order when set.
    pub warm_start: bool,
    /// Worker threads when `warm_start` is off.
    pub parallel: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { plan: PlanOptions::default(), warm_start: true, parallel: 1 }
    }
}

fn point(w: f64, plan: &Plan) -> ParetoPoint {
    let s = &plan.solution.summary;
    ParetoPoint {
        c_t_trip: w,
        trip_time_s: s.trip_time_s,
        chg_time_s: s.charging_time_s,
        energy_cost: s.energy_cost,
        status: plan.status(),
        kkt_residual: plan.result.kkt_residual,
        negative_weight: w < 0.0,
    }
}

/// Solve `scn` once per time weight. `weights` must be nonempty and sorted
/// ascending.
pub fn sweep(scn: &Scenario, weights: &[f64], opts: &SweepOptions) -> Result<ParetoFront> {
    scn.validate()?;
    if weights.is_empty() {
        return Err(Error::validation("weights", "need at least one time weight"));
    }
    if weights.iter().any(|w| !w.is_finite()) || weights.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::validation("weights", "must be finite and sorted ascending"));
    }
    for &w in weights.iter().filter(|&&w| w < 0.0) {
        warn!("negative time weight {w}: the solution is held only by the bounds");
    }

    let plans: Vec<Plan> = if opts.warm_start || opts.parallel <= 1 {
        let mut plans: Vec<Plan> = Vec::with_capacity(weights.len());
        for &w in weights {
            let prev = if opts.warm_start { plans.last() } else { None };
            let plan = plan_trip(scn, &CostWeights { c_t_trip: w }, &opts.plan, prev)?;
            info!("c_t_trip {w}: {} ({})", plan.solution.summary.line, plan.status());
            plans.push(plan);
        }
        plans
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<Plan>>>> = Mutex::new((0..weights.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..opts.parallel.min(weights.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= weights.len() {
                        break;
                    }
                    let r = plan_trip(scn, &CostWeights { c_t_trip: weights[i] }, &opts.plan, None);
                    slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .unwrap_or_else(|e| e.into_inner())
            .into_iter()
            .map(|r| r.expect("every weight is claimed by a worker"))
            .collect::<Result<_>>()?
    };

    Ok(ParetoFront {
        points: weights.iter().zip(&plans).map(|(&w, p)| point(w, p)).collect(),
        solutions: plans.into_iter().map(|p| p.solution).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub label: String,
    pub status: Option<SolveStatus>,
    pub trip_time_s: f64,
    pub chg_time_s: f64,
    pub energy_cost: f64,
    /// Solver or model failure, if the case did not produce a solution.
    pub error: Option<String>,
}

impl CaseResult {
    fn from_plan(label: &str, plan: Result<Plan>) -> (Self, Option<TripSolution>) {
        match plan {
            Ok(p) => {
                let s = &p.solution.summary;
                let case = CaseResult {
                    label: label.into(),
                    status: Some(p.status()),
                    trip_time_s: s.trip_time_s,
                    chg_time_s: s.charging_time_s,
                    energy_cost: s.energy_cost,
                    error: None,
                };
                (case, Some(p.solution))
            }
            Err(e) => (
                CaseResult {
                    label: label.into(),
                    status: None,
                    trip_time_s: f64::NAN,
                    chg_time_s: f64::NAN,
                    energy_cost: f64::NAN,
                    error: Some(e.to_string()),
                },
                None,
            ),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Some(SolveStatus::Optimal)
    }
}

/// Case 1 (thermal actuators available) against Case 2 (battery heater and
/// cooler disabled, cabin heating unchanged).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreconditioningReport {
    pub c_t_trip: f64,
    pub case1: CaseResult,
    pub case2: CaseResult,
    /// Case 2 over Case 1.
    pub charging_time_ratio: f64,
    pub trip_time_ratio: f64,
    pub energy_cost_ratio: f64,
    #[serde(skip)]
    pub solutions: [Option<TripSolution>; 2],
}

impl PreconditioningReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }
}

pub fn preconditioning_study(scn: &Scenario, c_t_trip: f64, opts: &PlanOptions) -> Result<PreconditioningReport> {
    scn.validate()?;
    if scn.chargers.is_empty() {
        return Err(Error::validation("chargers", "the comparison needs at least one charger"));
    }
    let w = CostWeights { c_t_trip };
    let (case1, sol1) = CaseResult::from_plan("case1_btm", plan_trip(scn, &w, opts, None));
    let (case2, sol2) = CaseResult::from_plan("case2_no_btm", plan_trip(&scn.without_btm(), &w, opts, None));
    Ok(PreconditioningReport {
        c_t_trip,
        charging_time_ratio: case2.chg_time_s / case1.chg_time_s,
        trip_time_ratio: case2.trip_time_s / case1.trip_time_s,
        energy_cost_ratio: case2.energy_cost / case1.energy_cost,
        case1,
        case2,
        solutions: [sol1, sol2],
    })
}

/// Average driving speed of a solution (distance over driving time).
pub fn average_speed(sol: &TripSolution) -> f64 {
    let dist: f64 = sol.segments.iter().map(|s| s.s_m[s.len() - 1] - s.s_m[0]).sum();
    dist / sol.summary.driving_time_s
}

/// Time weight whose optimal trip has the given average driving speed, by
/// bisection on `[lo, hi]` until the bracket is narrower than `tol`.
pub fn calibrate_time_weight(
    scn: &Scenario,
    target_speed_mps: f64,
    (mut lo, mut hi): (f64, f64),
    tol: f64,
    opts: &PlanOptions,
) -> Result<f64> {
    if !(lo < hi && tol > 0.0) {
        return Err(Error::validation("calibration", "need lo < hi and tol > 0"));
    }
    let mut prev: Option<Plan> = None;
    let mut speed_at = |w: f64| -> Result<f64> {
        let plan = plan_trip(scn, &CostWeights { c_t_trip: w }, opts, prev.as_ref())?;
        let v = average_speed(&plan.solution);
        prev = Some(plan);
        Ok(v)
    };
    let (v_lo, v_hi) = (speed_at(lo)?, speed_at(hi)?);
    if !(v_lo <= target_speed_mps && target_speed_mps <= v_hi) {
        return Err(Error::validation(
            "calibration",
            format!("target speed {target_speed_mps:.3} m/s outside [{v_lo:.3}, {v_hi:.3}]"),
        ));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if speed_at(mid)? < target_speed_mps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(w: f64, t: f64, c: f64, status: SolveStatus) -> ParetoPoint {
        ParetoPoint {
            c_t_trip: w,
            trip_time_s: t,
            chg_time_s: 0.0,
            energy_cost: c,
            status,
            kkt_residual: 0.0,
            negative_weight: w < 0.0,
        }
    }

    #[test]
    fn reversal_count_ignores_non_optimal_points() {
        let mut front = ParetoFront {
            points: vec![
                pt(0.01, 3000.0, 70.0, SolveStatus::Optimal),
                pt(0.02, 2900.0, 75.0, SolveStatus::Optimal),
                pt(0.03, 2800.0, 60.0, SolveStatus::MaxIter),
            ],
            solutions: Vec::new(),
        };
        assert_eq!(front.reversal_count(), 0);
        assert!(front.is_monotone());
        front.points[2].status = SolveStatus::Optimal;
        assert_eq!(front.reversal_count(), 2);
        assert!(!front.is_monotone());
    }

    #[test]
    fn ties_are_not_reversals() {
        let front = ParetoFront {
            points: vec![pt(0.01, 3000.0, 70.0, SolveStatus::Optimal), pt(0.02, 3000.0, 70.0 + 1e-3, SolveStatus::Optimal)],
            solutions: Vec::new(),
        };
        assert_eq!(front.reversal_count(), 0);
    }

    #[test]
    fn csv_has_one_row_per_weight() {
        let front = ParetoFront {
            points: vec![pt(-0.01, 3000.0, 70.0, SolveStatus::Optimal), pt(0.02, 2900.0, 75.0, SolveStatus::MaxIter)],
            solutions: Vec::new(),
        };
        let csv = front.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "c_t_trip,trip_time_s,chg_time_s,energy_cost,status");
        assert_eq!(lines[2], "0.02,2900,0,75,max_iter");
        assert!(front.points[0].negative_weight);
    }

    #[test]
    fn weights_must_be_sorted_and_nonempty() {
        let scn = crate::reference::warm_plateau_scenario();
        let opts = SweepOptions::default();
        assert!(sweep(&scn, &[], &opts).is_err());
        assert!(sweep(&scn, &[0.02, 0.01], &opts).is_err());
    }
}
