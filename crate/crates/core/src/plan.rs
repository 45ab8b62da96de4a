//! Scenario-level solve: transcribe, solve and extract in one call.

use crate::error::Result;
use crate::scenario::{CostWeights, Scenario};
use crate::solution::TripSolution;
use crate::solver::{solve_warm, NlpProblem, NlpResult, SolveStatus, SolverOptions, WarmStart};
use crate::transcription::{build_nlp, TranscriptionOptions, TripNlp};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanOptions {
    pub transcription: TranscriptionOptions,
    pub solver: SolverOptions,
}

/// A solved trip together with what is needed to warm-start a neighbour.
#[derive(Debug, Clone)]
pub struct Plan {
    pub solution: TripSolution,
    pub result: NlpResult,
    /// Divisor applied to the objective inside the NLP.
    pub objective_scale: f64,
}

impl Plan {
    pub fn status(&self) -> SolveStatus {
        self.result.status
    }

    /// Warm start for a problem of the same layout whose objective is divided
    /// by `objective_scale`. Multipliers are rescaled to that objective.
    pub fn warm_start_for(&self, objective_scale: f64) -> WarmStart {
        let r = self.objective_scale / objective_scale;
        WarmStart {
            z: self.result.z.clone(),
            eq: Some(self.result.multipliers.eq.iter().map(|v| v * r).collect()),
            ineq: Some(self.result.multipliers.ineq.iter().map(|v| v * r).collect()),
            penalty: None,
        }
    }
}

fn finish(nlp: &TripNlp, result: NlpResult) -> Result<Plan> {
    let mut solution = nlp.extract_solution(&result.z)?;
    solution.diagnostics = Some(result.diagnostics());
    Ok(Plan { solution, objective_scale: nlp.objective_scale(), result })
}

/// Solve `scn` under weights `w`, optionally starting from an earlier plan on
/// the same grid.
pub fn plan_trip(scn: &Scenario, w: &CostWeights, opts: &PlanOptions, previous: Option<&Plan>) -> Result<Plan> {
    let nlp = build_nlp(scn, w, &opts.transcription)?;
    let warm = match previous {
        Some(p) if p.result.z.len() == nlp.n() => p.warm_start_for(nlp.objective_scale()),
        _ => WarmStart { z: nlp.initial_point(), ..Default::default() },
    };
    let result = solve_warm(&nlp, &opts.solver, &warm)?;
    finish(&nlp, result)
}
