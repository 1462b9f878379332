use std::path::Path;
use std::process::Command;

use ve_wane::estimator::{EstimationError, WeightMode};
use ve_wane::harness::{
    estimate_report, run_mc_study, EstimateReport, HarnessError, MonteCarloSummary, RunConfig, RunMode,
    WeightSelection, SUMMARY_SCHEMA,
};
use ve_wane::model::{write_records_path, DataError, Dataset, Gamma};
use ve_wane::sim::{generate_dataset, ScenarioConfig, ScenarioPreset};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ve-wane"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn cli_simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(&d.join("sim.toml"), "mode = \"simulate\"\npreset = \"i-b\"\n");
    let stdout = run_ok(
        bin()
            .args(["simulate", "--config"])
            .arg(d.join("sim.toml"))
            .arg("--out")
            .arg(d.join("sim"))
            .args(["--seed", "5"]),
    );
    assert!(stdout.trim().ends_with("dataset.csv"));
    assert!(d.join("sim/scenario.json").exists());

    write(&d.join("est.toml"), "mode = \"estimate\"\ndata = \"sim/dataset.csv\"\n");
    let stdout = run_ok(
        bin()
            .args(["estimate", "--config"])
            .arg(d.join("est.toml"))
            .arg("--out")
            .arg(d.join("est"))
            .args(["--weights", "both", "--threads", "2"]),
    );
    assert!(stdout.contains("VE<=20") && stdout.contains("Kish ESS"));
    let report: EstimateReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("est/result.json")).unwrap()).unwrap();
    assert_eq!(report.n, 30_000);
    let modes: Vec<WeightMode> = report.runs.iter().map(|r| r.weight_mode).collect();
    assert_eq!(modes, [WeightMode::Unit, WeightMode::Estimated]);
    for f in ["result.txt", "weights_diag.csv", "nuisance.json"] {
        assert!(d.join("est").join(f).exists(), "{f} missing");
    }
    let diag = std::fs::read_to_string(d.join("est/weights_diag.csv")).unwrap();
    assert!(diag.starts_with("weight_mode,process,n_exposures,min,max,mean,ess,rank,participant,weight"));
}

#[test]
fn cli_mc_study_writes_tables_that_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        &d.join("mc.json"),
        r#"{"mode": "mc-study", "preset": "ii-b", "weights": "both", "reps": 3}"#,
    );
    let stdout = run_ok(
        bin()
            .args(["mc-study", "--config"])
            .arg(d.join("mc.json"))
            .arg("--out")
            .arg(d)
            .args(["--threads", "2"]),
    );
    assert!(stdout.contains("unit weights (3 completed, 0 failed)"));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("summary.json")).unwrap()).unwrap();
    let schema: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&json).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let from_json: MonteCarloSummary = serde_json::from_value(json).unwrap();
    let from_csv = MonteCarloSummary::from_csv(&std::fs::read_to_string(d.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(from_json, from_csv);
    let reps = std::fs::read_to_string(d.join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 3 * 2);
    assert!(d.join("summary.txt").exists());
}

#[test]
fn schema_rejects_out_of_range_coverage() {
    let schema: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let bad = serde_json::json!({
        "preset": "i-a", "n": 10, "reps": 1, "seed": 1, "alpha": 0.05,
        "blocks": [{"weight_mode": "unit", "completed": 1, "failures": 0, "tests": [],
            "estimands": [{"name": "θ₁", "truth": 0.0, "mean": 0.0, "median": 0.0, "sd": null,
                "mean_se": 0.1, "coverage": 1.5}]}]
    });
    assert!(!validator.is_valid(&bad));
}

#[test]
fn cli_rejects_missing_config() {
    let out = bin()
        .args(["estimate", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reading config"));
}

#[test]
fn study_summary_does_not_depend_on_thread_count() {
    let mut cfg = RunConfig::for_preset(RunMode::McStudy, ScenarioPreset::IIB);
    cfg.weights = WeightSelection::Both;
    cfg.reps = 4;
    cfg.seed = 99;
    cfg.threads = Some(1);
    let one = run_mc_study(&cfg).unwrap();
    cfg.threads = Some(4);
    let four = run_mc_study(&cfg).unwrap();
    assert_eq!(one.summary, four.summary);
    assert_eq!(one.replications, four.replications);
}

#[test]
fn too_many_failures_is_a_study_error() {
    let mut cfg = RunConfig::for_preset(RunMode::McStudy, ScenarioPreset::IA);
    cfg.scenario.n = Some(300);
    cfg.weights = WeightSelection::Unit;
    cfg.reps = 4;
    match run_mc_study(&cfg) {
        Err(HarnessError::TooManyFailures { failed, reps, .. }) => assert!(failed > 0 && reps == 4),
        other => panic!("expected TooManyFailures, got {other:?}"),
    }
}

fn data_config(dir: &Path, csv: &str) -> RunConfig {
    let path = dir.join("data.csv");
    write(&path, csv);
    let mut cfg = RunConfig::for_preset(RunMode::Estimate, ScenarioPreset::IA);
    cfg.preset = None;
    cfg.data = Some(path);
    cfg.weights = WeightSelection::Unit;
    cfg
}

#[test]
fn empty_csv_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data_config(dir.path(), "entry,arm,u,delta,r,gamma,psi,x1\n");
    assert!(matches!(
        estimate_report(&cfg),
        Err(HarnessError::Data(DataError::Empty))
    ));
}

#[test]
fn invalid_records_are_itemized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data_config(
        dir.path(),
        "entry,arm,u,delta,r,gamma,psi,x1\n\
         1.0,1,30.0,1,30.0,0,,0.5\n\
         15.0,0,30.0,1,30.0,0,,0.5\n\
         2.0,0,40.0,1,25.0,2,,0.1\n",
    );
    match estimate_report(&cfg) {
        Err(HarnessError::InvalidData(items)) => {
            assert_eq!(items.len(), 2, "{items:?}");
            assert!(items[0].starts_with("record 1 (line 3)"));
            assert!(items[1].starts_with("record 2 (line 4)") && items[1].contains("Ψ is required"));
        }
        other => panic!("expected InvalidData, got {other:?}"),
    }
}

#[test]
fn no_unblinded_participants_name_theta1() {
    let scen = ScenarioConfig::preset(ScenarioPreset::IB);
    let mut records = generate_dataset(&scen, scen.n, 3).unwrap();
    for r in &mut records {
        r.gamma = Gamma::Infection;
        r.r_time = r.infect_time;
        r.psi = false;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blinded.csv");
    write_records_path(&path, &Dataset::new(records)).unwrap();
    let mut cfg = RunConfig::for_preset(RunMode::Estimate, ScenarioPreset::IB);
    cfg.preset = None;
    cfg.data = Some(path);
    cfg.weights = WeightSelection::Unit;
    match estimate_report(&cfg) {
        Err(HarnessError::Estimation(EstimationError::Identifiability { coordinate, .. })) => {
            assert_eq!(coordinate, "θ₁")
        }
        other => panic!("expected identifiability error, got {other:?}"),
    }
}
