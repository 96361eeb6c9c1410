//! Experiment reports: one row per trial, a summary, JSON and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::network::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    /// Residual must be within tolerance.
    Pass,
    /// Residual must exceed the failure threshold.
    Fail,
    /// Recorded only.
    Report,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub case: String,
    pub transform: String,
    pub residual: f64,
    pub tolerance: f64,
    /// `residual <= tolerance`.
    pub pass: bool,
    pub expected: Expectation,
    /// Whether the outcome matches the expectation.
    pub ok: bool,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub fingerprint: String,
}

/// Threshold above which an expected failure counts as clearly failing.
pub const FAIL_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub matched: usize,
    pub max_pass_residual: f64,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub summary: Summary,
}

/// Builder that assigns trial ids in insertion order.
#[derive(Debug, Default)]
pub struct TrialLog {
    trials: Vec<Trial>,
    metrics: BTreeMap<String, f64>,
}

pub struct TrialSpec<'a> {
    pub case: &'a str,
    pub transform: String,
    pub residual: f64,
    pub tolerance: f64,
    pub expected: Expectation,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub fingerprint: String,
}

impl TrialLog {
    pub fn push(&mut self, t: TrialSpec<'_>) {
        let pass = t.residual <= t.tolerance;
        let ok = match t.expected {
            Expectation::Pass => pass,
            Expectation::Fail => t.residual > t.tolerance.max(FAIL_THRESHOLD),
            Expectation::Report => true,
        };
        self.trials.push(Trial {
            id: self.trials.len(),
            case: t.case.to_string(),
            transform: t.transform,
            residual: t.residual,
            tolerance: t.tolerance,
            pass,
            expected: t.expected,
            ok,
            seed: t.seed,
            layer_sizes: t.layer_sizes,
            fingerprint: t.fingerprint,
        });
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn finish(self, experiment: &str, seed: u64) -> ExperimentReport {
        let matched = self.trials.iter().filter(|t| t.ok).count();
        let max_pass_residual = self
            .trials
            .iter()
            .filter(|t| t.expected == Expectation::Pass)
            .map(|t| t.residual)
            .fold(0.0, f64::max);
        let summary = Summary {
            trials: self.trials.len(),
            matched,
            max_pass_residual,
            pass: matched == self.trials.len(),
            metrics: self.metrics,
        };
        ExperimentReport { experiment: experiment.to_string(), seed, trials: self.trials, summary }
    }
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,case,transform,residual,tolerance,pass,expected,ok,seed,layer_sizes,fingerprint\n");
        for t in &self.trials {
            let sizes: Vec<String> = t.layer_sizes.iter().map(|v| v.to_string()).collect();
            let expected = match t.expected {
                Expectation::Pass => "pass",
                Expectation::Fail => "fail",
                Expectation::Report => "report",
            };
            let _ = writeln!(
                s,
                "{},{},{},{:e},{:e},{},{},{},{},{},{}",
                t.id,
                t.case,
                t.transform,
                t.residual,
                t.tolerance,
                t.pass,
                expected,
                t.ok,
                t.seed,
                sizes.join(" "),
                t.fingerprint
            );
        }
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(|t| !t.ok)
    }

    pub fn case(&self, case: &str) -> impl Iterator<Item = &Trial> + '_ {
        let case = case.to_string();
        self.trials.iter().filter(move |t| t.case == case)
    }
}

/// FNV-1a over the bit patterns of every weight.
pub fn fingerprint(net: &Network) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in net.params() {
        for v in p.values {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }
    format!("{h:016x}")
}

/// Max absolute difference of two equal-length vectors.
pub fn vec_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
