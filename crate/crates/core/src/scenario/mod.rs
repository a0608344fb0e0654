//! Scenario files, the check runner and run reports.
//!
//! A scenario is a TOML file describing coefficients, initial and terminal
//! data, discretization parameters and a list of checks. [`run`] executes the
//! checks and writes a `report.toml` plus CSV data into an output directory.

mod config;
mod report;
mod run;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    CheckKind, CoefficientsSection, DataSection, GridSection, OneOrMany, OracleSection, QuerySection,
    ScenarioConfig, Setup, TimeSection,
};
pub use report::{CheckReport, RunReport, Verdict};
pub use run::{
    convergence_study, feynman_kac_calibration, run, ConvergenceTable, DETERMINANT_LEVELS, FEYNMAN_KAC_CONSTANT,
    MIN_ORDER, ORACLE_ENTROPY_SLACK, RATIO_RANGE,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config error{}: {message}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
    Config { field: Option<String>, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("study failed: {0}")]
    Study(String),
}

impl ScenarioError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Study(_) => 1,
            _ => 2,
        }
    }
}

/// The directory holding the bundled scenarios.
pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Every `*.toml` scenario directly inside `dir`, sorted by file name.
pub fn bundled_scenarios(dir: &Path) -> Result<Vec<(String, ScenarioConfig)>, ScenarioError> {
    let io = |source| ScenarioError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let config = ScenarioConfig::load(&p)?;
            Ok((config.name.clone(), config))
        })
        .collect()
}

/// Path of the golden report of a bundled scenario.
pub fn golden_path(dir: &Path, name: &str) -> PathBuf {
    dir.join("golden").join(format!("{name}.report.toml"))
}

/// The bytes of every CSV file in `dir`, keyed by file name.
pub fn read_csv_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, ScenarioError> {
    let io = |source| ScenarioError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, std::fs::read(&path).map_err(io)?);
        }
    }
    Ok(out)
}
