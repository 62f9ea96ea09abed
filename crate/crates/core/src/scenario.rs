//! Scenario files.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! mechanism = "qf"              # "qf", "linear" or { p = 0.5, q = 2.0, s = 1.0 }
//! goods = ["park", "library"]
//!
//! [[citizens]]
//! id = "alice"
//! value = { family = "sqrt", a = 1.0 }   # or log1p {b}, power {a, alpha}
//! overrides = { library = { family = "log1p", b = 2.0 } }   # optional
//!
//! [solver]                      # optional, defaults shown
//! damping = 0.5
//! max_sweeps = 500
//! foc_tolerance = 1e-10
//! step_tolerance = 1e-12
//!
//! [contributions]               # optional fixed contributions per good
//! park = [4.0, 9.0]
//!
//! [series]                      # optional, used by `series-demo`
//! k = 0.5
//! y0 = 1.0
//! h0 = 1.0
//! d0 = 0.5
//! order = 12
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::equilibrium::SolverOptions;
use crate::mechanism::{ContributionProfile, MechanismSpec};
use crate::preferences::{Society, ValueFunction};

pub const SUPPORTED_MECHANISMS: &str = "qf, linear, or a table { p, q, s }";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}", Located(*.line, message))]
    Validation { line: Option<usize>, message: String },
}

struct Located<'a>(Option<usize>, &'a String);

impl fmt::Display for Located<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(line) => write!(f, "validation error at line {line}: {}", self.1),
            None => write!(f, "validation error: {}", self.1),
        }
    }
}

impl ScenarioError {
    /// Process exit code: 2 for malformed or invalid files, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Io { .. } => 4,
            ScenarioError::Parse { .. } | ScenarioError::Validation { .. } => 2,
        }
    }

    fn invalid(line: Option<usize>, message: impl Into<String>) -> Self {
        ScenarioError::Validation {
            line,
            message: message.into(),
        }
    }
}

/// The funding rule as written in the scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MechanismChoice {
    Qf,
    Linear,
    Power { p: f64, q: f64, s: f64 },
}

impl MechanismChoice {
    pub fn spec(&self) -> MechanismSpec {
        match *self {
            MechanismChoice::Qf => MechanismSpec::qf(),
            MechanismChoice::Linear => MechanismSpec::linear(),
            MechanismChoice::Power { p, q, s } => {
                MechanismSpec::power(p, q, s).expect("validated on load")
            }
        }
    }

    pub fn name(&self) -> Option<&'static str> {
        match self {
            MechanismChoice::Qf => Some("qf"),
            MechanismChoice::Linear => Some("linear"),
            MechanismChoice::Power { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Citizen {
    pub id: String,
    pub value: ValueFunction,
    pub overrides: BTreeMap<String, ValueFunction>,
}

impl Citizen {
    pub fn value_for(&self, good: &str) -> ValueFunction {
        self.overrides.get(good).copied().unwrap_or(self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub k: f64,
    pub y0: f64,
    pub h0: f64,
    pub d0: f64,
    pub order: usize,
}

impl Default for SeriesParams {
    fn default() -> Self {
        Self {
            k: 0.5,
            y0: 1.0,
            h0: 1.0,
            d0: 0.5,
            order: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub mechanism: MechanismChoice,
    pub goods: Vec<String>,
    pub citizens: Vec<Citizen>,
    pub solver: SolverOptions,
    pub contributions: BTreeMap<String, ContributionProfile>,
    pub series: Option<SeriesParams>,
}

impl Scenario {
    /// The society whose values apply to `good`.
    pub fn society_for(&self, good: &str) -> Society {
        Society::new(self.citizens.iter().map(|c| c.value_for(good)).collect())
            .expect("validated on load")
    }

    pub fn citizen_count(&self) -> usize {
        self.citizens.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RawMechanism {
    Name(String),
    Params { p: f64, q: f64, s: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCitizen {
    id: String,
    value: Spanned<RawValue>,
    #[serde(default)]
    overrides: BTreeMap<String, Spanned<RawValue>>,
}

/// Family tag plus parameters, validated into a [`ValueFunction`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValue {
    family: String,
    a: Option<f64>,
    b: Option<f64>,
    alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    mechanism: Spanned<RawMechanism>,
    goods: Spanned<Vec<String>>,
    citizens: Spanned<Vec<Spanned<RawCitizen>>>,
    solver: Option<Spanned<SolverOptions>>,
    #[serde(default)]
    contributions: BTreeMap<String, Spanned<Vec<f64>>>,
    series: Option<Spanned<SeriesParams>>,
}

#[derive(Serialize)]
struct EmitCitizen<'a> {
    id: &'a str,
    value: &'a ValueFunction,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    overrides: &'a BTreeMap<String, ValueFunction>,
}

#[derive(Serialize)]
struct EmitScenario<'a> {
    mechanism: RawMechanism,
    goods: &'a [String],
    solver: &'a SolverOptions,
    #[serde(skip_serializing_if = "Option::is_none")]
    series: Option<&'a SeriesParams>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    contributions: BTreeMap<&'a str, &'a [f64]>,
    citizens: Vec<EmitCitizen<'a>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

struct Lines<'a>(&'a str);

impl Lines<'_> {
    fn at<T>(&self, spanned: &Spanned<T>) -> Option<usize> {
        Some(line_of(self.0, spanned.span().start))
    }
}

fn value_function(raw: &RawValue) -> Result<ValueFunction, String> {
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| format!("value family '{}' needs parameter '{name}'", raw.family))
    };
    let unexpected = |names: &[(&str, Option<f64>)]| -> Result<(), String> {
        match names.iter().find(|(_, v)| v.is_some()) {
            Some((n, _)) => Err(format!(
                "value family '{}' does not take parameter '{n}'",
                raw.family
            )),
            None => Ok(()),
        }
    };
    let v = match raw.family.as_str() {
        "sqrt" => {
            unexpected(&[("b", raw.b), ("alpha", raw.alpha)])?;
            ValueFunction::SqrtScaled { a: need("a", raw.a)? }
        }
        "log1p" => {
            unexpected(&[("a", raw.a), ("alpha", raw.alpha)])?;
            ValueFunction::Log1p { b: need("b", raw.b)? }
        }
        "power" => {
            unexpected(&[("b", raw.b)])?;
            ValueFunction::PowerConcave {
                a: need("a", raw.a)?,
                alpha: need("alpha", raw.alpha)?,
            }
        }
        other => {
            return Err(format!(
                "unknown value family '{other}'; supported families: sqrt, log1p, power"
            ))
        }
    };
    v.validate().map_err(|e| e.to_string())?;
    Ok(v)
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(1),
        message: e.message().trim().to_string(),
    })?;
    let lines = Lines(text);

    let mechanism = match raw.mechanism.get_ref() {
        RawMechanism::Name(n) => match n.as_str() {
            "qf" => MechanismChoice::Qf,
            "linear" => MechanismChoice::Linear,
            other => {
                return Err(ScenarioError::invalid(
                    lines.at(&raw.mechanism),
                    format!("unknown mechanism '{other}'; supported mechanisms: {SUPPORTED_MECHANISMS}"),
                ))
            }
        },
        &RawMechanism::Params { p, q, s } => {
            MechanismSpec::power(p, q, s)
                .map_err(|e| ScenarioError::invalid(lines.at(&raw.mechanism), e.to_string()))?;
            MechanismChoice::Power { p, q, s }
        }
    };

    let goods = raw.goods.get_ref().clone();
    if goods.is_empty() {
        return Err(ScenarioError::invalid(lines.at(&raw.goods), "at least one good is required"));
    }
    let mut seen = BTreeSet::new();
    for g in &goods {
        if g.is_empty() || !seen.insert(g.as_str()) {
            return Err(ScenarioError::invalid(
                lines.at(&raw.goods),
                format!("good ids must be non-empty and unique, got '{g}'"),
            ));
        }
    }

    if raw.citizens.get_ref().is_empty() {
        return Err(ScenarioError::invalid(lines.at(&raw.citizens), "at least one citizen is required"));
    }
    let mut citizens = Vec::with_capacity(raw.citizens.get_ref().len());
    let mut ids = BTreeSet::new();
    for rc in raw.citizens.get_ref() {
        let line = lines.at(rc);
        let rc = rc.get_ref();
        if rc.id.is_empty() || !ids.insert(rc.id.clone()) {
            return Err(ScenarioError::invalid(
                line,
                format!("citizen ids must be non-empty and unique, got '{}'", rc.id),
            ));
        }
        let value = value_function(rc.value.get_ref())
            .map_err(|m| ScenarioError::invalid(lines.at(&rc.value), format!("citizen '{}': {m}", rc.id)))?;
        let mut overrides = BTreeMap::new();
        for (good, v) in &rc.overrides {
            if !seen.contains(good.as_str()) {
                return Err(ScenarioError::invalid(
                    lines.at(v),
                    format!("citizen '{}' overrides unknown good '{good}'", rc.id),
                ));
            }
            let f = value_function(v.get_ref())
                .map_err(|m| ScenarioError::invalid(lines.at(v), format!("citizen '{}': {m}", rc.id)))?;
            overrides.insert(good.clone(), f);
        }
        citizens.push(Citizen {
            id: rc.id.clone(),
            value,
            overrides,
        });
    }

    let solver = match &raw.solver {
        Some(s) => {
            s.get_ref()
                .validate()
                .map_err(|e| ScenarioError::invalid(lines.at(s), format!("solver: {e}")))?;
            *s.get_ref()
        }
        None => SolverOptions::default(),
    };

    let mut contributions = BTreeMap::new();
    for (good, values) in &raw.contributions {
        let line = lines.at(values);
        if !seen.contains(good.as_str()) {
            return Err(ScenarioError::invalid(line, format!("contributions given for unknown good '{good}'")));
        }
        let v = values.get_ref();
        if v.len() != citizens.len() {
            return Err(ScenarioError::invalid(
                line,
                format!(
                    "good '{good}' lists {} contributions for {} citizens",
                    v.len(),
                    citizens.len()
                ),
            ));
        }
        if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(ScenarioError::invalid(
                line,
                format!("contributions must be non-negative (good '{good}' has {x})"),
            ));
        }
        contributions.insert(good.clone(), ContributionProfile::new(v.clone()).expect("checked above"));
    }

    let series = match &raw.series {
        Some(s) => {
            let p = *s.get_ref();
            crate::derivation::series_solve_uniqueness_ode(p.k, p.y0, p.h0, p.d0, p.order)
                .map_err(|e| ScenarioError::invalid(lines.at(s), format!("series: {e}")))?;
            Some(p)
        }
        None => None,
    };

    Ok(Scenario {
        mechanism,
        goods,
        citizens,
        solver,
        contributions,
        series,
    })
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

/// Serializes a scenario back to TOML; [`parse_scenario`] inverts it exactly.
pub fn emit_scenario(s: &Scenario) -> String {
    let mechanism = match s.mechanism {
        MechanismChoice::Qf => RawMechanism::Name("qf".into()),
        MechanismChoice::Linear => RawMechanism::Name("linear".into()),
        MechanismChoice::Power { p, q, s } => RawMechanism::Params { p, q, s },
    };
    let doc = EmitScenario {
        mechanism,
        goods: &s.goods,
        solver: &s.solver,
        series: s.series.as_ref(),
        contributions: s
            .contributions
            .iter()
            .map(|(g, c)| (g.as_str(), c.as_slice()))
            .collect(),
        citizens: s
            .citizens
            .iter()
            .map(|c| EmitCitizen {
                id: &c.id,
                value: &c.value,
                overrides: &c.overrides,
            })
            .collect(),
    };
    toml::to_string(&doc).expect("scenario serializes to TOML")
}
