use lagflow::scenario::{self, CheckKind, RunReport, ScenarioConfig, Verdict};

const TINY: &str = r#"
name = "tiny"
description = "Small variable-sigma problem for end-to-end runs."
dimension = 1
nu = 0.1
seed = 3
realizations = 300
field_realizations = 150
checks = [
    "determinant_consistency",
    "martingale_M",
    "conservation",
    "entropy_mc",
    "entropy_oracle",
    "jensen",
    "feynman_kac_vs_oracle",
]

[coefficients]
sigma = [["1 + 0.3*sin(x1)"]]
velocity = ["0.2"]
potential = "0"

[data]
f0 = "exp(-x1^2)"
rho0 = "0.05 + exp(-x1^2/2)"
h0 = ["exp(-4*x1^2)", "exp(-4*(x1 - 0.5)^2)"]
phi_terminal = "1"
entropy = "square"

[grid]
lo = [-4.0]
hi = [4.0]
label_spacing = 0.1

[time]
horizon = 0.2
dt = 0.005
outputs = [0.1, 0.2]

[queries]
lo = [-3.0]
hi = [3.0]
spacing = 0.1

[oracle]
spacing = 0.05
dt = 0.005
"#;

#[test]
fn every_check_runs_and_writes_its_files() {
    let config = ScenarioConfig::from_toml(TINY).unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = scenario::run(&config, out.path()).unwrap();
    assert!(report.passed, "{:?}", report.checks);
    assert_eq!(report.config_hash, config.hash());
    assert_eq!(report.checks.len(), CheckKind::ALL.len());
    for check in &report.checks {
        assert_eq!(check.verdict, Verdict::Pass, "{}: {}", check.check.name(), check.detail);
        for file in &check.files {
            assert!(out.path().join(file).exists(), "{file} missing");
        }
    }
    let on_disk = RunReport::from_toml(&std::fs::read_to_string(out.path().join("report.toml")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    let feynman_kac = std::fs::read_to_string(out.path().join("feynman_kac.csv")).unwrap();
    assert!(feynman_kac.starts_with("x1,f_mc,f_se,f_oracle\n"));
    assert_eq!(feynman_kac.lines().count(), 1 + 61);
    let martingale = std::fs::read_to_string(out.path().join("martingale_M_probe1.csv")).unwrap();
    let first = martingale.lines().nth(1).unwrap();
    assert_eq!(first, "0,1,0", "M starts at phi(a, 0) = 1 with no spread");
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let mut config = ScenarioConfig::from_toml(TINY).unwrap();
    config.checks = vec![CheckKind::MartingaleM, CheckKind::Conservation, CheckKind::Jensen];
    let run_with = |threads: usize| {
        let out = tempfile::tempdir().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let report = pool.install(|| scenario::run(&config, out.path())).unwrap();
        (report.without_timing(), scenario::read_csv_outputs(out.path()).unwrap())
    };
    let (report_1, files_1) = run_with(1);
    let (report_3, files_3) = run_with(3);
    assert_eq!(report_1, report_3);
    assert_eq!(files_1, files_3);
}

#[test]
fn a_support_touching_the_boundary_fails_only_its_check() {
    let text = TINY.replace("h0 = [\"exp(-4*x1^2)\", \"exp(-4*(x1 - 0.5)^2)\"]", "h0 = \"1\"");
    let mut config = ScenarioConfig::from_toml(&text).unwrap();
    config.checks = vec![CheckKind::Conservation, CheckKind::EntropyOracle];
    let out = tempfile::tempdir().unwrap();
    let report = scenario::run(&config, out.path()).unwrap();
    assert!(!report.passed);
    assert_eq!(report.failed_checks(), vec![CheckKind::Conservation]);
    assert_eq!(report.check(CheckKind::EntropyOracle).unwrap().verdict, Verdict::Pass);
}

#[test]
fn field_checks_without_queries_are_a_config_error() {
    let text = TINY.replace("[queries]\nlo = [-3.0]\nhi = [3.0]\nspacing = 0.1\n", "");
    let err = ScenarioConfig::from_toml(&text).and_then(|c| c.validate()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("queries"), "{err}");
}
