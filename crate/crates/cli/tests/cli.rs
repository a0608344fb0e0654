use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lagflow::scenario::{self, RunReport};

fn lagflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagflow"))
        .args(args)
        .env_remove("LAGFLOW_THREADS")
        .output()
        .expect("the binary runs")
}

fn scenario_path(name: &str) -> PathBuf {
    scenario::scenarios_dir().join(format!("{name}.toml"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn heat_text() -> String {
    std::fs::read_to_string(scenario_path("heat_identity")).unwrap()
}

#[test]
fn list_scenarios_shows_every_bundled_scenario() {
    let o = lagflow(&["list-scenarios"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["heat_identity", "sine_sigma_1d", "diag_sigma_2d", "additive_2d"] {
        assert!(text.contains(name), "{name} missing from:\n{text}");
    }
}

#[test]
fn missing_nu_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &heat_text().replace("nu = 0.1\n", ""));
    let out = dir.path().join("out");
    let o = lagflow(&["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`nu`"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &heat_text().replace("seed = ", "sead = 1\nseed = "));
    let o = lagflow(&["run", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sead"), "{}", stderr(&o));
}

#[test]
fn unreadable_config_is_exit_status_2() {
    let o = lagflow(&["run", "/nonexistent/scenario.toml", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_check_is_exit_status_1_with_partial_results() {
    let dir = tempfile::tempdir().unwrap();
    // an observable that does not vanish near the label boundary fails the
    // conservation check; the martingale check still runs and passes
    let text = heat_text()
        .replace("h0 = [\"exp(-x1^2/0.5)\", \"exp(-(x1 - 0.5)^2/0.5)\"]", "h0 = \"1\"")
        .replace("rho0 = \"0.001 + exp(-x1^2/2)\"", "rho0 = \"1\"")
        .replace(
            "checks = [\n    \"determinant_consistency\",\n    \"martingale_M\",\n    \"conservation\",",
            "checks = [\n    \"conservation\",\n    \"martingale_M\",",
        )
        .replace("    \"entropy_mc\",\n    \"entropy_oracle\",\n    \"jensen\",\n    \"feynman_kac_vs_oracle\",\n", "");
    let config = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = lagflow(&[
        "run",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--realizations",
        "200",
    ]);
    assert_eq!(o.status.code(), Some(1), "{}\n{}", stdout(&o), stderr(&o));
    let report = RunReport::from_toml(&std::fs::read_to_string(out.join("report.toml")).unwrap()).unwrap();
    assert!(!report.passed);
    assert_eq!(report.checks.len(), 2);
    assert!(report.checks[0].detail.contains("support escape"), "{:?}", report.checks[0]);
    assert_eq!(report.checks[1].verdict, scenario::Verdict::Pass);
    assert!(out.join("martingale_M_probe0.csv").exists());
}

#[test]
fn run_overrides_seed_and_realizations_and_writes_series() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_lagflow"))
        .args([
            "run",
            scenario_path("sine_sigma_1d").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "9",
            "--realizations",
            "1000",
        ])
        .env("LAGFLOW_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}\n{}", stdout(&o), stderr(&o));
    let report = RunReport::from_toml(&std::fs::read_to_string(out.join("report.toml")).unwrap()).unwrap();
    assert_eq!(report.seed, 9);
    assert_eq!(report.realizations, 1000);
    assert_eq!(report.threads, Some(2));
    assert_eq!(report.checks.len(), 7);
    let series = std::fs::read_to_string(out.join("conservation_h0.csv")).unwrap();
    let mut lines = series.lines();
    assert_eq!(lines.next(), Some("t,value,se"));
    assert_eq!(lines.count(), 5);
    let fields = std::fs::read_to_string(out.join("mc_fields_4.csv")).unwrap();
    assert!(fields.starts_with("x1,f,f_se,rho,rho_se,masked\n"));
}

#[test]
fn converge_rejects_a_single_level() {
    let o = lagflow(&["converge", scenario_path("sine_sigma_1d").to_str().unwrap(), "--levels", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least 2 levels"), "{}", stderr(&o));
}

#[test]
fn converge_orders_match_the_noise_type() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("table.csv");
    let o = lagflow(&[
        "converge",
        scenario_path("additive_2d").to_str().unwrap(),
        "--levels",
        "3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("dt,rms_sde,rms_lambda\n"));

    let additive = scenario::ScenarioConfig::load(&scenario_path("additive_2d")).unwrap();
    let table = scenario::convergence_study(&additive, 3).unwrap();
    let order = table.order().unwrap();
    assert!(order >= 0.9, "additive order {order}");

    let sine = scenario::ScenarioConfig::load(&scenario_path("sine_sigma_1d")).unwrap();
    let table = scenario::convergence_study(&sine, 3).unwrap();
    assert_eq!(table.order_sde, None, "the 1D D_sde pair is algebraically exact");
    let order = table.order().unwrap();
    assert!((0.4..=1.1).contains(&order), "sine order {order}");
}

/// Every bundled scenario passes all of its checks and reproduces its golden
/// report exactly (timing aside).
#[test]
fn bundled_scenarios_match_golden_reports() {
    let dir = scenario::scenarios_dir();
    for (name, config) in scenario::bundled_scenarios(&dir).unwrap() {
        let out = tempfile::tempdir().unwrap();
        let report = scenario::run(&config, out.path()).unwrap();
        assert!(report.passed, "{name}: {:?}", report.failed_checks());
        let golden_text = std::fs::read_to_string(scenario::golden_path(&dir, &name))
            .unwrap_or_else(|e| panic!("{name}: no golden report ({e}); run with --bless"));
        let golden = RunReport::from_toml(&golden_text).unwrap();
        assert_eq!(report.without_timing(), golden, "{name} drifted from its golden report");
    }
}
