mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use ecoroute::pareto::{preconditioning_study, sweep, SweepOptions};
use ecoroute::plan::{plan_trip, PlanOptions};
use ecoroute::reference::REFERENCE_SWEEP;
use ecoroute::solver::{SolveStatus, SolverOptions};
use ecoroute::transcription::TranscriptionOptions;
use ecoroute::validator::{validate, DEFAULT_DT_S};
use ecoroute::{load_scenario, Scenario, TripSolution};

/// Exit code for a run that finished but did not meet its bar (non-optimal
/// solve, failed validation).
const EXIT_NOT_OK: u8 = 2;

#[derive(Parser)]
#[command(name = "ecoroute", version, about = "Eco-driving, battery thermal management and charging planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and export the trajectories.
    Solve {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Replay a solution in the time domain and check every constraint.
    Validate {
        solution: PathBuf,
        scenario: PathBuf,
        #[arg(short, long, default_value = "out")]
        out: PathBuf,
        /// Integration step in seconds.
        #[arg(long, default_value_t = DEFAULT_DT_S)]
        dt: f64,
    },
    /// Sweep the trip-time weight and write the charging-cost/trip-time front.
    Sweep {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Comma-separated time weights, ascending.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        weights: Option<Vec<f64>>,
        /// Solve the points independently on N threads instead of warm-starting
        /// each from the previous one.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Compare the trip with and without battery heating and cooling.
    Study {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Render SVG panels from a solution.
    Plot {
        solution: PathBuf,
        /// Defaults to the solution's directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Grid spacing of the driving phases in metres.
    #[arg(long, default_value_t = 2000.0)]
    ds: f64,
    /// Nodes per charging stop.
    #[arg(long, default_value_t = 20)]
    ntau: usize,
    #[arg(long, default_value_t = 1e-6)]
    kkt_tol: f64,
    /// Disable the battery heater and cooler (cabin heating unchanged).
    #[arg(long)]
    no_btm: bool,
    /// Accepted for reproducible scripts; the solver is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            transcription: TranscriptionOptions { ds_m: self.ds, n_tau: self.ntau },
            solver: SolverOptions { kkt_tol: self.kkt_tol, ..SolverOptions::default() },
        }
    }

    fn scenario(&self, path: &Path) -> Result<Scenario> {
        let scn = load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
        Ok(if self.no_btm { scn.without_btm() } else { scn })
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ok_if(good: bool) -> u8 {
    if good {
        0
    } else {
        EXIT_NOT_OK
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve { scenario, common } => {
            let scn = common.scenario(&scenario)?;
            let plan = plan_trip(&scn, &scn.costs, &common.plan_options(), None)?;
            plan.solution.export(&common.out)?;
            let d = &plan.result;
            println!("{}", plan.solution.summary.line);
            println!(
                "status {} kkt {:.2e} outer {} inner {} time {:.2} s",
                d.status, d.kkt_residual, d.outer_iterations, d.inner_iterations, d.wall_time_s
            );
            info!("wrote {}", common.out.display());
            Ok(ok_if(plan.status() == SolveStatus::Optimal))
        }
        Command::Validate { solution, scenario, out, dt } => {
            let sol = TripSolution::load(&solution).with_context(|| format!("loading {}", solution.display()))?;
            let scn = load_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let (trace, report) = validate(&scn, &sol, dt)?;
            write(&out.join("validation.json"), &report.to_json()?)?;
            write(&out.join("trace.csv"), &trace.to_csv_string())?;
            for f in &report.families {
                println!("{:<20} {:>10.3e} {}", f.name, f.max_violation, if f.pass { "ok" } else { "FAIL" });
            }
            if let Some(a) = &report.agreement {
                println!(
                    "agreement: soc {:.2e}, T_b {:.2e}, trip time {:.2e} (relative)",
                    a.terminal_soc_rel, a.terminal_temp_rel, a.trip_time_rel
                );
            }
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
            Ok(ok_if(report.pass))
        }
        Command::Sweep { scenario, common, weights, parallel } => {
            let scn = common.scenario(&scenario)?;
            let weights = weights.unwrap_or_else(|| REFERENCE_SWEEP.to_vec());
            if parallel == 0 {
                bail!("--parallel must be at least 1");
            }
            let opts = SweepOptions { plan: common.plan_options(), warm_start: parallel == 1, parallel };
            let front = sweep(&scn, &weights, &opts)?;
            let csv = front.to_csv_string();
            write(&common.out.join("pareto.csv"), &csv)?;
            for (p, sol) in front.points.iter().zip(&front.solutions) {
                sol.export(common.out.join(format!("c_t_{}", p.c_t_trip)))?;
            }
            print!("{csv}");
            if front.points.iter().any(|p| p.negative_weight) {
                eprintln!("warning: negative time weights reward longer trips; those points rest on the bounds");
            }
            println!("order reversals: {}", front.reversal_count());
            Ok(ok_if(front.points.iter().all(|p| p.is_optimal())))
        }
        Command::Study { scenario, common } => {
            let scn = common.scenario(&scenario)?;
            let report = preconditioning_study(&scn, scn.costs.c_t_trip, &common.plan_options())?;
            write(&common.out.join("study.json"), &report.to_json()?)?;
            for (sol, case) in report.solutions.iter().zip([&report.case1, &report.case2]) {
                if let Some(sol) = sol {
                    sol.export(common.out.join(&case.label))?;
                }
            }
            for case in [&report.case1, &report.case2] {
                match &case.error {
                    None => println!(
                        "{:<14} {} trip {:.1} min, charging {:.1} min, {:.2}",
                        case.label,
                        case.status.map_or("-".into(), |s| s.to_string()),
                        case.trip_time_s / 60.0,
                        case.chg_time_s / 60.0,
                        case.energy_cost
                    ),
                    Some(e) => println!("{:<14} error: {e}", case.label),
                }
            }
            println!("charging time ratio (case 2 / case 1): {:.3}", report.charging_time_ratio);
            Ok(ok_if(report.case1.is_optimal() && report.case2.is_optimal()))
        }
        Command::Plot { solution, out } => {
            let sol = TripSolution::load(&solution).with_context(|| format!("loading {}", solution.display()))?;
            let dir = out.unwrap_or_else(|| solution.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for path in plot::render_all(&sol, &dir)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ECOROUTE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
