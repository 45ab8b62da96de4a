use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ecoroute::pareto::{sweep, SweepOptions};
use ecoroute::plan::{plan_trip, PlanOptions};
use ecoroute::solution::drive_csv;
use ecoroute::transcription::TranscriptionOptions;
use ecoroute::load_scenario;

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios/reference.scn")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecoroute")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_validate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ref");
    let o = run(&["solve", s(&scenario()), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    // same bytes as the library call
    let scn = load_scenario(scenario()).unwrap();
    let plan = plan_trip(&scn, &scn.costs, &PlanOptions::default(), None).unwrap();
    for (k, seg) in plan.solution.segments.iter().enumerate() {
        let file = fs::read_to_string(out.join(format!("drive_{k}.csv"))).unwrap();
        assert_eq!(file, drive_csv(seg).unwrap());
    }
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with(&plan.solution.summary.line), "{stdout}");

    let solution = out.join("solution.json");
    let o = run(&["validate", s(&solution), s(&scenario()), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t_s,s_m,v_mps,soc,T_b_C,P_b_W,P_grid_W,mode\n"));
    assert!(out.join("validation.json").is_file());

    let plots = dir.path().join("plots");
    let o = run(&["plot", s(&solution), "-o", s(&plots)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for (name, label) in [
        ("speed.svg", "speed [km/h]"),
        ("soc.svg", "soc [-]"),
        ("temperature.svg", "temperature"),
        ("powers.svg", "power [kW]"),
    ] {
        let svg = fs::read_to_string(plots.join(name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains(label), "{name}");
    }
}

#[test]
fn bad_scenario_exits_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scn");
    fs::write(&bad, "schema_version = 1\nname = \"x\"\n").unwrap();
    let o = run(&["solve", s(&bad), "-o", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));

    let o = run(&["solve", s(&dir.path().join("missing.scn"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_the_library_front() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", s(&scenario()), "-o", s(dir.path()), "--ds", "4000", "--weights", "0.02,0.043"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let scn = load_scenario(scenario()).unwrap();
    let opts = SweepOptions {
        plan: PlanOptions {
            transcription: TranscriptionOptions { ds_m: 4000.0, ..Default::default() },
            ..Default::default()
        },
        ..Default::default()
    };
    let front = sweep(&scn, &[0.02, 0.043], &opts).unwrap();
    assert_eq!(csv, front.to_csv_string());
    assert!(dir.path().join("c_t_0.043/solution.json").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("order reversals: 0"));
}

#[test]
fn no_btm_solve_is_the_second_study_case() {
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("single");
    let study = dir.path().join("study");
    let o = run(&["solve", s(&scenario()), "--no-btm", "-o", s(&single)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["study", s(&scenario()), "-o", s(&study)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(study.join("study.json").is_file());
    for name in ["drive_0.csv", "drive_1.csv", "charge_0.csv"] {
        let a = fs::read(single.join(name)).unwrap();
        let b = fs::read(study.join("case2_no_btm").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}
