//! Versioned run reports, serialized as JSON.

use serde::{Deserialize, Serialize};

use crate::derivation::{ResidualReport, ScanResult, SeriesSolution};
use crate::scenario::MechanismChoice;

pub const REPORT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub p: f64,
    pub q: f64,
    pub s: f64,
}

impl From<MechanismChoice> for MechanismEcho {
    fn from(m: MechanismChoice) -> Self {
        let spec = m.spec();
        Self {
            name: m.name().map(str::to_string),
            p: spec.weight.exponent(),
            q: spec.lever.exponent(),
            s: spec.lever.scale(),
        }
    }
}

/// Per-good results. Fields a command does not compute are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoodReport {
    pub good: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub funding: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimal_funding: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contributions: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub foc_residuals: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub welfare: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utilities: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_sum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contributions_determined: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_residuals: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeReport {
    pub weight: ResidualReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lever: Option<ResidualReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lever_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub solution: SeriesSolution,
    pub max_coefficient_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub tool_version: String,
    pub command: String,
    pub mechanism: MechanismEcho,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goods: Vec<GoodReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separated: Option<ResidualReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesReport>,
    /// Wall-clock milliseconds; the only field that varies between runs.
    pub timing_ms: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// The report text with the timing field removed, for byte comparisons.
pub fn body_without_timing(json: &str) -> serde_json::Result<String> {
    let mut v: serde_json::Value = serde_json::from_str(json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing_ms");
    }
    serde_json::to_string_pretty(&v)
}
