//! Wire-format contract tests: the CLI pipeline (gen-env → run → report),
//! file schemas, and JSON round trips.

use formation_forge::env::{generate_environment, EnvSpec};
use formation_forge::sim::TrialSummary;
use formation_forge::Environment;
use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_formation-forge"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn environment_json_round_trips_exactly() {
    let env = generate_environment(123, &EnvSpec::default()).unwrap();
    let json = serde_json::to_string_pretty(&env).unwrap();
    let back: Environment = serde_json::from_str(&json).unwrap();
    assert_eq!(env, back);

    // Spot-check the schema a consumer would rely on.
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(value["seed"], 123);
    assert!(value["width"].is_f64() && value["height"].is_f64());
    let first = &value["entities"][0];
    assert!(first["id"].is_u64());
    assert!(first["kind"].is_string());
    assert!(first["x"].is_f64() && first["y"].is_f64() && first["radius"].is_f64());
    assert!(value["waypoints"][0].as_array().map(|w| w.len()) == Some(2));
}

#[test]
fn cli_pipeline_writes_documented_files() {
    let work = tempfile::tempdir().unwrap();
    let env_path = work.path().join("env.json");
    let sim_config = work.path().join("sim.json");
    std::fs::write(&sim_config, r#"{ "total_steps": 200 }"#).unwrap();

    let status = binary()
        .args(["gen-env", "--seed", "5", "--out"])
        .arg(&env_path)
        .status()
        .unwrap();
    assert!(status.success());

    for (method, has_weights) in [("FP_AW", true), ("FP", true), ("FS", false), ("AF", false)] {
        let out = work.path().join(method);
        let status = binary()
            .args(["run", "--env"])
            .arg(&env_path)
            .args(["--method", method, "--trial", "0", "--out"])
            .arg(&out)
            .args(["--config"])
            .arg(&sim_config)
            .arg("--svg")
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "run {method} failed");

        let prefix = format!("{method}_trial0");
        assert_eq!(out.join(format!("{prefix}_weights.csv")).exists(), has_weights);
        let plan = read(&out.join(format!("{prefix}_plan.csv")));
        assert!(plan.starts_with("step,agent_id,x_plan,y_plan,surrogate_value\n"));
        let commands = read(&out.join(format!("{prefix}_commands.csv")));
        assert!(commands.starts_with("step,agent_id,ux,uy,saturated,filtered\n"));
        // 200 steps × 4 agents plus the header.
        assert_eq!(commands.lines().count(), 1 + 200 * 4);
        if has_weights {
            let weights = read(&out.join(format!("{prefix}_weights.csv")));
            assert!(weights
                .starts_with("step,alpha_1,alpha_2,alpha_3,alpha_4,alpha_5,w_t,tau_x,accepted,fit_residual\n"));
            assert_eq!(weights.lines().count(), 1 + 200);
        }
        assert!(read(&out.join(format!("{prefix}_trajectory.svg"))).starts_with("<svg"));

        let summary: TrialSummary =
            serde_json::from_str(&read(&out.join(format!("{prefix}_summary.json")))).unwrap();
        assert_eq!(summary.env_seed, 5);
        assert_eq!(summary.method.name(), method);
        assert_eq!(summary.trial_index, 0);
        assert!(!summary.aborted);
    }

    // report rebuilds tables from the summaries written above.
    let output = binary()
        .args(["report", "--logs"])
        .arg(work.path())
        .args(["--format", "csv"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let report = String::from_utf8(output.stdout).unwrap();
    assert!(report.starts_with("row,FP_AW,FP,FS,AF\n"));
    assert!(report.contains("env 5 P"));
    assert!(report.contains("\ntotal,"));

    let output = binary()
        .args(["report", "--logs"])
        .arg(work.path())
        .args(["--format", "svg"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8(output.stdout).unwrap().starts_with("<svg"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let work = tempfile::tempdir().unwrap();
    let env_path = work.path().join("env.json");
    let sim_config = work.path().join("sim.json");
    std::fs::write(&sim_config, r#"{ "total_steps": 150 }"#).unwrap();
    assert!(binary()
        .args(["gen-env", "--seed", "9", "--out"])
        .arg(&env_path)
        .status()
        .unwrap()
        .success());

    let run = |out: &Path| {
        assert!(binary()
            .args(["run", "--env"])
            .arg(&env_path)
            .args(["--method", "FP_AW", "--trial", "2", "--out"])
            .arg(out)
            .arg("--config")
            .arg(&sim_config)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap()
            .success());
    };
    let dir_a = work.path().join("a");
    let dir_b = work.path().join("b");
    run(&dir_a);
    run(&dir_b);
    for file in [
        "FP_AW_trial2_weights.csv",
        "FP_AW_trial2_plan.csv",
        "FP_AW_trial2_commands.csv",
        "FP_AW_trial2_summary.json",
    ] {
        assert_eq!(
            std::fs::read(dir_a.join(file)).unwrap(),
            std::fs::read(dir_b.join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn diagnose_reports_identifiability() {
    let work = tempfile::tempdir().unwrap();
    let env_path = work.path().join("env.json");
    assert!(binary()
        .args(["gen-env", "--seed", "7", "--out"])
        .arg(&env_path)
        .status()
        .unwrap()
        .success());
    let output = binary()
        .args(["diagnose", "--env"])
        .arg(&env_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("sigma_min"));
    assert!(text.contains("random sweep"));
}

#[test]
fn malformed_inputs_fail_cleanly() {
    let work = tempfile::tempdir().unwrap();
    let bogus = work.path().join("bogus.json");
    std::fs::write(&bogus, "{ not json").unwrap();
    let output = binary()
        .args(["run", "--env"])
        .arg(&bogus)
        .args(["--method", "FS", "--out"])
        .arg(work.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("environment"));

    let output = binary()
        .args(["run", "--env"])
        .arg(&bogus)
        .args(["--method", "NOPE", "--out"])
        .arg(work.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
}
