//! The error report written after a run.

use odenet::bounds::BoundReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunConfig;

pub const REPORT_SCHEMA_VERSION: &str = "1.0.0";

/// JSON schema for [`ErrorReport`], shipped with the crate.
pub const REPORT_SCHEMA: &str = include_str!("../schema/error_report.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRow {
    pub name: String,
    pub measured: f64,
    pub certified: Option<f64>,
    /// `ε/3` for the three construction stages.
    pub budget: Option<f64>,
    pub passed: bool,
}

impl StageRow {
    pub fn new(name: &str, measured: f64, certified: Option<f64>, budget: Option<f64>) -> Self {
        let within_budget = budget.is_none_or(|b| measured <= b);
        let within_cert = certified.is_none_or(|c| {
            measured <= c * (1.0 + odenet::bounds::RELATIVE_TOLERANCE) + odenet::bounds::ABSOLUTE_TOLERANCE
        });
        StageRow {
            name: name.to_string(),
            measured,
            certified,
            budget,
            passed: measured.is_finite() && within_budget && within_cert,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Totals {
    /// `max_ξ |S_f(T)ξ - S_h(T)ξ|` over the domain grid.
    pub flow: f64,
    /// `max_ξ |S_f(T)ξ - resnet(ξ)|` when a ResNet was extracted.
    pub resnet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpTotals {
    pub p: f64,
    pub flow: f64,
    pub resnet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Construction {
    pub slices: usize,
    pub tau: f64,
    pub widths: Vec<usize>,
    pub repeats: Vec<usize>,
    pub chain_holds: bool,
    pub delta: f64,
    pub delta_rule: odenet::pipeline::DeltaRule,
    pub eps_prime_formula: f64,
    pub resnet_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        let canonical = serde_json::to_string(cfg).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        Provenance {
            config_sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReport {
    pub schema_version: String,
    pub epsilon: f64,
    pub horizon: f64,
    pub budgets_met: bool,
    pub stages: Vec<StageRow>,
    pub total_measured: Option<Totals>,
    pub l_p_measured: Option<LpTotals>,
    pub bound_reports: Vec<BoundReport>,
    pub construction: Option<Construction>,
    pub failure: Option<Failure>,
    pub provenance: Provenance,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Every certified value dominates its measured partner.
    pub fn certificates_hold(&self) -> bool {
        self.bound_reports.iter().all(BoundReport::holds)
            && self.stages.iter().all(|s| {
                s.certified.is_none_or(|c| {
                    s.measured <= c * (1.0 + odenet::bounds::RELATIVE_TOLERANCE) + odenet::bounds::ABSOLUTE_TOLERANCE
                })
            })
    }
}
