//! Run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::CheckKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Skip,
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: CheckKind,
    pub verdict: Verdict,
    pub detail: String,
    /// Realizations dropped because a path failed.
    pub discarded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    /// CSV files written by the check, relative to the output directory.
    pub files: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn new(check: CheckKind) -> Self {
        Self {
            check,
            verdict: Verdict::Skip,
            detail: String::new(),
            discarded: 0,
            elapsed_seconds: None,
            files: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn set(&mut self, pass: bool, detail: String) {
        self.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        self.detail = detail;
    }
}

/// Everything a run produced, serialized as `report.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub realizations: usize,
    pub field_realizations: usize,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    pub checks: Vec<CheckReport>,
}

impl RunReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("reports always serialize")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// The report with timing and thread count removed; this is what golden
    /// reports store.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.threads = None;
        r.elapsed_seconds = None;
        for c in &mut r.checks {
            c.elapsed_seconds = None;
        }
        r
    }

    pub fn check(&self, kind: CheckKind) -> Option<&CheckReport> {
        self.checks.iter().find(|c| c.check == kind)
    }

    pub fn failed_checks(&self) -> Vec<CheckKind> {
        self.checks
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.check)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_round_trips_through_toml() {
        let mut c = CheckReport::new(CheckKind::Conservation);
        c.metric("max_abs_z", 1.25);
        c.metric("initial_0", 0.5);
        c.set(true, "fine".into());
        c.elapsed_seconds = Some(0.1);
        c.files.push("conservation_h0.csv".into());
        let r = RunReport {
            scenario: "x".into(),
            version: "0.1.0".into(),
            config_hash: "0123456789abcdef".into(),
            seed: 1,
            realizations: 100,
            field_realizations: 100,
            passed: true,
            threads: Some(2),
            elapsed_seconds: Some(1.5),
            checks: vec![c],
        };
        let text = r.to_toml();
        assert!(text.contains("[[checks]]"), "{text}");
        assert_eq!(RunReport::from_toml(&text).unwrap(), r);
        let g = r.without_timing();
        assert_eq!(g.threads, None);
        assert_eq!(g.checks[0].elapsed_seconds, None);
        assert!(g.failed_checks().is_empty());
    }
}
