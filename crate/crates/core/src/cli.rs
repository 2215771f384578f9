//! Command-line front end: scenario files, presets and subcommands.
//!
//! Every command writes JSON (or CSV for run records). Failures print a JSON
//! object on stderr; schema violations exit with 2, anything else with 1.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};

use crate::error::Error;
use crate::hvmodels::{
    coordination_map, effective_behavior, estimate_correlator, estimate_expression, sample_runs, write_csv,
    Coordination, CoordinationMap, CoordinationPlan, Device, Estimate, Geometry, MixtureSchedule, ModelConfig,
    RunRecord, SettingsSchedule,
};
use crate::inequality::{
    chain_value, chsh_optimum, detection_threshold_n, local_bound, mixture_deviation, mixture_max_value,
    quantum_chain_optimum, ChainSpec, ChainTerm, MixtureSpec,
};
use crate::quantum::{born_behavior, make_ghz3, make_singlet, make_weighted_ghz3, Behavior, StateVector};
use crate::signaling::{
    ftl_protocol_report, local_polytope_member, localparts_feasible, search_infeasible, signaling_distance,
    LocalPartsOutcome, SweepConfig,
};
use crate::spacetime::{
    before_before, equivalent_vbb_with_c, finite_speed_cut, Boost, Event, Metric, TimingScenario, SPEED_OF_LIGHT,
};

pub const SCENARIO_SCHEMA: &str = "localparts.scenario/1";
pub const SUMMARY_SCHEMA: &str = "localparts.summary/1";
pub const DEFAULT_TRIALS: u64 = 100_000;

/// A speed given in m/s (a number) or as a multiple of c (a string such as
/// `"1e5c"`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    Absolute(f64),
    TimesC(f64),
}

impl Speed {
    pub fn resolve(&self, c: f64) -> f64 {
        match *self {
            Speed::Absolute(v) => v,
            Speed::TimesC(k) => k * c,
        }
    }
}

impl FromStr for Speed {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let parse = |t: &str| t.parse::<f64>().ok().filter(|v| v.is_finite());
        if let Some(head) = s.strip_suffix('c') {
            let k = if head.is_empty() { Some(1.0) } else { parse(head) };
            k.map(Speed::TimesC).ok_or_else(|| format!("bad speed {s:?}"))
        } else {
            parse(s).map(Speed::Absolute).ok_or_else(|| format!("bad speed {s:?}"))
        }
    }
}

impl fmt::Display for Speed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speed::Absolute(v) => write!(f, "{v}"),
            Speed::TimesC(k) => write!(f, "{k}c"),
        }
    }
}

impl Serialize for Speed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Speed::Absolute(v) => s.serialize_f64(v),
            Speed::TimesC(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Speed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Number(n) => n
                .as_f64()
                .filter(|v| v.is_finite())
                .map(Speed::Absolute)
                .ok_or_else(|| serde::de::Error::custom("speed is not finite")),
            Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!(
                "speed must be a number or string, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Si,
    /// c = 1: times and distances share a unit.
    C,
}

impl Units {
    pub fn metric(&self) -> Metric {
        match self {
            Units::Si => Metric::si(),
            Units::C => Metric::natural(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Speed>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub devices: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Quantum,
    Local,
    FiniteSpeed {
        v: Speed,
    },
    Multisim,
    Mixture {
        p: f64,
        #[serde(default = "coin")]
        schedule: MixtureSchedule,
    },
}

fn coin() -> MixtureSchedule {
    MixtureSchedule::Coin
}

impl ModelSpec {
    pub fn resolve(&self, c: f64) -> ModelConfig {
        match *self {
            ModelSpec::Quantum => ModelConfig::Quantum,
            ModelSpec::Local => ModelConfig::Local,
            ModelSpec::FiniteSpeed { v } => ModelConfig::FiniteSpeed { v: v.resolve(c) },
            ModelSpec::Multisim => ModelConfig::Multisim,
            ModelSpec::Mixture { p, schedule } => ModelConfig::Mixture { p, schedule },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    /// `"singlet"` or `"ghz3"`.
    Named(String),
    Amplitudes {
        amplitudes: Vec<[f64; 2]>,
    },
    WeightedGhz3 {
        weighted_ghz3: f64,
    },
}

impl StateSpec {
    pub fn build(&self) -> crate::Result<StateVector> {
        match self {
            StateSpec::Named(n) if n == "singlet" => Ok(make_singlet()),
            StateSpec::Named(n) if n == "ghz3" => Ok(make_ghz3()),
            StateSpec::Named(n) => Err(Error::InvalidState(format!("unknown state {n:?}"))),
            StateSpec::Amplitudes { amplitudes } => {
                StateVector::new(amplitudes.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
            }
            StateSpec::WeightedGhz3 { weighted_ghz3 } => Ok(make_weighted_ghz3(*weighted_ghz3)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Uniform,
    Cycle {
        tuples: Vec<Vec<usize>>,
    },
    /// Cycle over the terms of the N-chain.
    Chain {
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSpec {
    #[serde(rename = "L")]
    pub l: f64,
    pub dt: f64,
    pub v_bb: Speed,
    pub v: Speed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "runs_name")]
    pub runs: String,
    #[serde(default = "summary_name")]
    pub summary: String,
    #[serde(default = "report_name")]
    pub report: String,
}

fn runs_name() -> String {
    "runs.csv".into()
}
fn summary_name() -> String {
    "summary.json".into()
}
fn report_name() -> String {
    "report.json".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            runs: runs_name(),
            summary: summary_name(),
            report: report_name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Timing,
    Simulate,
    Signal,
    Detection,
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub units: Units,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub settings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_pair: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_p: Option<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: Vec<Step>,
}

fn default_trials() -> u64 {
    DEFAULT_TRIALS
}

fn default_steps() -> Vec<Step> {
    vec![Step::Simulate]
}

impl Scenario {
    pub fn metric(&self) -> Metric {
        self.units.metric()
    }

    pub fn geometry(&self) -> crate::Result<Geometry> {
        let spec = self
            .geometry
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("scenario has no geometry".into()))?;
        let metric = self.metric();
        let devices = spec
            .devices
            .iter()
            .map(|d| {
                let beta = match (d.beta, d.velocity) {
                    (Some(b), _) => b,
                    (None, Some(v)) => v.resolve(metric.c) / metric.c,
                    (None, None) => 0.0,
                };
                Ok(Device {
                    event: Event::new(d.t, d.x, d.y)?,
                    boost: Boost::new(beta)?,
                })
            })
            .collect::<crate::Result<_>>()?;
        Geometry::new(devices, metric)
    }

    pub fn model(&self) -> ModelConfig {
        self.model.unwrap_or(ModelSpec::Quantum).resolve(self.metric().c)
    }

    pub fn target(&self) -> crate::Result<Behavior> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("scenario has no state".into()))?
            .build()?;
        let settings = self
            .settings
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("scenario has no settings".into()))?;
        born_behavior(&state, settings)
    }

    pub fn settings_schedule(&self) -> crate::Result<SettingsSchedule> {
        Ok(match &self.schedule {
            None | Some(ScheduleSpec::Uniform) => SettingsSchedule::Uniform,
            Some(ScheduleSpec::Cycle { tuples }) => SettingsSchedule::Cycle { tuples: tuples.clone() },
            Some(ScheduleSpec::Chain { n }) => SettingsSchedule::from_terms(&ChainSpec::new(*n)?.terms),
        })
    }

    fn chain_spec(&self) -> crate::Result<Option<ChainSpec>> {
        match self.schedule {
            Some(ScheduleSpec::Chain { n }) => Ok(Some(ChainSpec::new(n)?)),
            _ => Ok(None),
        }
    }
}

/// One schema violation, located by JSON pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

struct Checker {
    errors: Vec<Violation>,
}

impl Checker {
    fn err(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(Violation {
            path: path.to_string(),
            message: message.into(),
        });
    }

    fn number(&mut self, v: Option<&Value>, path: &str, required: bool) -> Option<f64> {
        match v {
            None if required => {
                self.err(path, "required");
                None
            }
            None => None,
            Some(Value::Number(n)) => {
                let f = n.as_f64().filter(|f| f.is_finite());
                if f.is_none() {
                    self.err(path, "must be a finite number");
                }
                f
            }
            Some(_) => {
                self.err(path, "must be a number");
                None
            }
        }
    }

    fn speed(&mut self, v: Option<&Value>, path: &str, required: bool) -> Option<Speed> {
        match v {
            None if required => {
                self.err(path, "required");
                None
            }
            None => None,
            Some(v) => match Speed::deserialize(v) {
                Ok(s) => Some(s),
                Err(e) => {
                    self.err(path, e.to_string());
                    None
                }
            },
        }
    }

    fn unknown_keys(&mut self, v: &Value, path: &str, allowed: &[&str]) {
        if let Value::Object(map) = v {
            for k in map.keys().filter(|k| !allowed.contains(&k.as_str())) {
                self.err(&format!("{path}/{}", escape(k)), "unknown field");
            }
        }
    }
}

fn escape(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

const SCENARIO_KEYS: &[&str] = &[
    "schema",
    "name",
    "units",
    "geometry",
    "model",
    "state",
    "settings",
    "schedule",
    "trials",
    "seed",
    "outputs",
    "timing",
    "off_pair",
    "mixture_p",
    "steps",
];

/// Structural and invariant checks on a scenario document. Every problem is
/// reported; an empty list means the document deserializes and every
/// referenced object satisfies its own invariants.
pub fn validate_scenario(doc: &Value) -> Vec<Violation> {
    let mut ck = Checker { errors: Vec::new() };
    let Value::Object(root) = doc else {
        ck.err("", "scenario must be a JSON object");
        return ck.errors;
    };
    ck.unknown_keys(doc, "", SCENARIO_KEYS);
    match root.get("schema") {
        Some(Value::String(s)) if s == SCENARIO_SCHEMA => {}
        Some(_) => ck.err("/schema", format!("must be {SCENARIO_SCHEMA:?}")),
        None => ck.err("/schema", "required"),
    }
    match root.get("name") {
        Some(Value::String(s)) if !s.is_empty() => {}
        Some(_) => ck.err("/name", "must be a non-empty string"),
        None => ck.err("/name", "required"),
    }
    let c = match root.get("units") {
        None => SPEED_OF_LIGHT,
        Some(Value::String(s)) if s == "si" => SPEED_OF_LIGHT,
        Some(Value::String(s)) if s == "c" => 1.0,
        Some(_) => {
            ck.err("/units", "must be \"si\" or \"c\"");
            SPEED_OF_LIGHT
        }
    };

    let mut devices = None;
    if let Some(g) = root.get("geometry") {
        ck.unknown_keys(g, "/geometry", &["devices"]);
        match g.get("devices") {
            Some(Value::Array(list)) if !list.is_empty() => {
                devices = Some(list.len());
                for (i, d) in list.iter().enumerate() {
                    let p = format!("/geometry/devices/{i}");
                    if !d.is_object() {
                        ck.err(&p, "must be an object");
                        continue;
                    }
                    ck.unknown_keys(d, &p, &["t", "x", "y", "beta", "velocity"]);
                    for k in ["t", "x", "y"] {
                        ck.number(d.get(k), &format!("{p}/{k}"), true);
                    }
                    if d.get("beta").is_some() && d.get("velocity").is_some() {
                        ck.err(&p, "give beta or velocity, not both");
                    }
                    if let Some(b) = ck.number(d.get("beta"), &format!("{p}/beta"), false) {
                        if b.abs() >= 1.0 {
                            ck.err(&format!("{p}/beta"), format!("|beta| = {} must be < 1", b.abs()));
                        }
                    }
                    if let Some(v) = ck.speed(d.get("velocity"), &format!("{p}/velocity"), false) {
                        if v.resolve(c).abs() >= c {
                            ck.err(&format!("{p}/velocity"), "speed must be below c");
                        }
                    }
                }
            }
            Some(_) => ck.err("/geometry/devices", "must be a non-empty array"),
            None => ck.err("/geometry/devices", "required"),
        }
    }

    if let Some(m) = root.get("model") {
        match m.get("kind").and_then(Value::as_str) {
            Some("quantum") | Some("local") | Some("multisim") => ck.unknown_keys(m, "/model", &["kind"]),
            Some("finite_speed") => {
                ck.unknown_keys(m, "/model", &["kind", "v"]);
                if let Some(v) = ck.speed(m.get("v"), "/model/v", true) {
                    if !(v.resolve(c) > 0.0) {
                        ck.err("/model/v", "must be positive");
                    }
                }
            }
            Some("mixture") => {
                ck.unknown_keys(m, "/model", &["kind", "p", "schedule"]);
                if let Some(p) = ck.number(m.get("p"), "/model/p", true) {
                    if !(0.0..=1.0).contains(&p) {
                        ck.err("/model/p", "must lie in [0, 1]");
                    }
                }
                if let Some(s) = m.get("schedule") {
                    match MixtureSchedule::deserialize(s) {
                        Ok(MixtureSchedule::Blocks { k: 0 }) => ck.err("/model/schedule/k", "must be positive"),
                        Ok(_) => {}
                        Err(e) => ck.err("/model/schedule", e.to_string()),
                    }
                }
            }
            _ => ck.err(
                "/model/kind",
                "must be one of quantum, local, finite_speed, multisim, mixture",
            ),
        }
    }

    let mut qubits = None;
    if let Some(s) = root.get("state") {
        match StateSpec::deserialize(s)
            .map_err(|e| e.to_string())
            .and_then(|spec| spec.build().map_err(|e| e.to_string()))
        {
            Ok(state) => qubits = Some(state.qubits()),
            Err(e) => ck.err("/state", e),
        }
    }

    let mut settings_counts = None;
    if let Some(s) = root.get("settings") {
        match s.as_array() {
            Some(parties) if !parties.is_empty() => {
                let mut counts = Vec::new();
                for (i, list) in parties.iter().enumerate() {
                    let p = format!("/settings/{i}");
                    match list.as_array() {
                        Some(angles) if !angles.is_empty() => {
                            for (k, a) in angles.iter().enumerate() {
                                ck.number(Some(a), &format!("{p}/{k}"), true);
                            }
                            counts.push(angles.len());
                        }
                        _ => ck.err(&p, "must be a non-empty array of angles"),
                    }
                }
                settings_counts = Some(counts);
            }
            _ => ck.err("/settings", "must be a non-empty array per party"),
        }
    }
    if let (Some(q), Some(counts)) = (qubits, &settings_counts) {
        if counts.len() != q {
            ck.err(
                "/settings",
                format!("{} parties of settings for a {q}-qubit state", counts.len()),
            );
        }
    }
    if let (Some(q), Some(d)) = (qubits, devices) {
        if q != d {
            ck.err("/geometry/devices", format!("{d} devices for a {q}-qubit state"));
        }
    }

    if let Some(s) = root.get("schedule") {
        match ScheduleSpec::deserialize(s) {
            Ok(ScheduleSpec::Chain { n }) => {
                if n < 2 {
                    ck.err("/schedule/n", "must be at least 2");
                }
                if let Some(counts) = &settings_counts {
                    if counts.len() != 2 || counts.iter().any(|&m| m != n) {
                        ck.err(
                            "/schedule",
                            format!("chain n = {n} needs two parties with {n} settings each"),
                        );
                    }
                }
            }
            Ok(ScheduleSpec::Cycle { tuples }) => {
                if tuples.is_empty() {
                    ck.err("/schedule/tuples", "must not be empty");
                }
                if let Some(counts) = &settings_counts {
                    for (i, t) in tuples.iter().enumerate() {
                        if t.len() != counts.len() || t.iter().zip(counts).any(|(x, m)| x >= m) {
                            ck.err(&format!("/schedule/tuples/{i}"), "does not fit the settings");
                        }
                    }
                }
            }
            Ok(ScheduleSpec::Uniform) => {}
            Err(e) => ck.err("/schedule", e.to_string()),
        }
    }

    match root.get("trials") {
        None => {}
        Some(v) => match v.as_u64() {
            Some(n) if n >= 1 => {}
            _ => ck.err("/trials", "must be an integer >= 1"),
        },
    }
    if let Some(v) = root.get("seed") {
        if v.as_u64().is_none() {
            ck.err("/seed", "must be an unsigned 64-bit integer");
        }
    }
    if let Some(o) = root.get("outputs") {
        ck.unknown_keys(o, "/outputs", &["runs", "summary", "report"]);
        for k in ["runs", "summary", "report"] {
            match o.get(k) {
                None => {}
                Some(Value::String(s)) if !s.is_empty() && !s.contains('/') && !s.contains('\\') => {}
                Some(_) => ck.err(&format!("/outputs/{k}"), "must be a plain file name"),
            }
        }
    }
    if let Some(t) = root.get("timing") {
        ck.unknown_keys(t, "/timing", &["L", "dt", "v_bb", "v"]);
        if let Some(l) = ck.number(t.get("L"), "/timing/L", true) {
            if !(l > 0.0) {
                ck.err("/timing/L", "must be positive");
            }
        }
        if let Some(dt) = ck.number(t.get("dt"), "/timing/dt", true) {
            if dt < 0.0 {
                ck.err("/timing/dt", "must be non-negative");
            }
        }
        if let Some(v) = ck.speed(t.get("v_bb"), "/timing/v_bb", true) {
            let v = v.resolve(c);
            if !(v > 0.0 && v < c) {
                ck.err("/timing/v_bb", "must lie in (0, c)");
            }
        }
        if let Some(v) = ck.speed(t.get("v"), "/timing/v", true) {
            if !(v.resolve(c) > 0.0) {
                ck.err("/timing/v", "must be positive");
            }
        }
    }
    if let Some(p) = root.get("off_pair") {
        match <[usize; 2]>::deserialize(p) {
            Ok([i, j]) if i != j && i.max(j) < 3 => {}
            _ => ck.err("/off_pair", "must be two distinct party indices below 3"),
        }
    }
    if let Some(ps) = root.get("mixture_p") {
        match ps.as_array() {
            Some(list) => {
                for (i, v) in list.iter().enumerate() {
                    if let Some(p) = ck.number(Some(v), &format!("/mixture_p/{i}"), true) {
                        if !(0.0..=1.0).contains(&p) {
                            ck.err(&format!("/mixture_p/{i}"), "must lie in [0, 1]");
                        }
                    }
                }
            }
            None => ck.err("/mixture_p", "must be an array"),
        }
    }
    if let Some(steps) = root.get("steps") {
        if let Err(e) = Vec::<Step>::deserialize(steps) {
            ck.err("/steps", e.to_string());
        }
    }

    if ck.errors.is_empty() {
        match Scenario::deserialize(doc) {
            Err(e) => ck.err("", e.to_string()),
            Ok(s) => {
                if s.geometry.is_some() {
                    if let Err(e) = s.geometry() {
                        ck.err("/geometry", e.to_string());
                    }
                }
                if s.state.is_some() && s.settings.is_some() {
                    if let Err(e) = s.target() {
                        ck.err("/settings", e.to_string());
                    }
                }
                for (step, need) in [
                    (Step::Simulate, ["geometry", "state", "settings"].as_slice()),
                    (Step::Signal, ["geometry", "state", "settings"].as_slice()),
                    (Step::Detection, ["state", "settings"].as_slice()),
                    (Step::Timing, ["timing"].as_slice()),
                    (Step::Chain, ["schedule"].as_slice()),
                ] {
                    if s.steps.contains(&step) {
                        for k in need.iter().filter(|k| !root.contains_key(**k)) {
                            ck.err(&format!("/{k}"), format!("required by step {step:?}"));
                        }
                    }
                }
                if s.steps.contains(&Step::Chain) && !matches!(s.schedule, Some(ScheduleSpec::Chain { .. })) {
                    ck.err("/schedule", "step chain needs a chain schedule");
                }
            }
        }
    }
    ck.errors
}

pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        CliError::Schema(vec![Violation {
            path: String::new(),
            message: format!("invalid JSON: {e}"),
        }])
    })?;
    let errors = validate_scenario(&doc);
    if !errors.is_empty() {
        return Err(CliError::Schema(errors));
    }
    Scenario::deserialize(&doc).map_err(|e| {
        CliError::Schema(vec![Violation {
            path: String::new(),
            message: e.to_string(),
        }])
    })
}

#[derive(Debug)]
pub enum CliError {
    Schema(Vec<Violation>),
    Usage(String),
    Model(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Model(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            CliError::Schema(v) => json!({"error": {"kind": "schema", "violations": v}}),
            CliError::Usage(m) => json!({"error": {"kind": "usage", "message": m}}),
            CliError::Model(e) => json!({"error": {"kind": "model", "message": e.to_string()}}),
            CliError::Io(m) => json!({"error": {"kind": "io", "message": m}}),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "localparts",
    version,
    about = "Hidden-influence models with local parts: timing, Bell tests, signaling"
)]
struct Cli {
    /// Worker threads for parallel sampling and searches (outputs do not
    /// depend on it).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Interpret times and distances with c = 1.
    #[arg(long, global = true)]
    c_units: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Debug, Clone, Default)]
struct RunOpts {
    /// Override the scenario's trial count.
    #[arg(long)]
    trials: Option<u64>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files; without it the summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run-record format.
    #[arg(long, value_enum, default_value_t)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    opts: RunOpts,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the finite-speed and before-before criteria.
    Timing {
        /// Influence speed, m/s or a multiple of c such as 1e5c.
        #[arg(long)]
        v: Option<Speed>,
        /// Pair distance.
        #[arg(long = "L", alias = "l")]
        l: Option<f64>,
        /// Arrival-time difference.
        #[arg(long)]
        dt: Option<f64>,
        /// Recession speed of the pair.
        #[arg(long)]
        v_bb: Option<Speed>,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Optimal singlet CHSH value and Monte Carlo estimates.
    Chsh {
        #[arg(long, default_value_t = 1_000_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Chained Bell expression: local bound, quantum optimum, mixtures.
    Chain {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        local_bound: bool,
        #[arg(long)]
        quantum: bool,
        /// Local weight p of a mixture.
        #[arg(long)]
        mixture: Option<f64>,
        /// Report the smallest N whose mixture deviation reaches this value.
        #[arg(long, requires = "mixture")]
        epsilon: Option<f64>,
    },
    /// Sample run records for a scenario.
    Simulate(ScenarioArgs),
    /// Signaling report for a scenario.
    Signal {
        #[command(flatten)]
        args: ScenarioArgs,
        /// Run the settings sweep for an infeasible local-parts instance.
        #[arg(long)]
        search: bool,
    },
    /// Point reachable from B and C before light from A.
    PointD {
        /// Event as t,x,y.
        #[arg(long, value_parser = parse_event)]
        a: Event,
        #[arg(long, value_parser = parse_event)]
        b: Event,
        #[arg(long, value_parser = parse_event)]
        c: Event,
    },
    /// Shipped scenarios.
    Preset {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Check a scenario file without running it.
    Validate { file: PathBuf },
}

#[derive(Subcommand, Debug)]
enum PresetAction {
    List,
    Run {
        name: String,
        #[command(flatten)]
        opts: RunOpts,
    },
}

fn parse_event(s: &str) -> Result<Event, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [t, x, y] => Event::new(*t, *x, *y).map_err(|e| e.to_string()),
        _ => Err("expected t,x,y".into()),
    }
}

/// Run the CLI with explicit argument list and streams; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string());
            let _ = writeln!(stderr, "{}", err.to_json());
            return err.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "{}", CliError::Io(e.to_string()).to_json());
            return 1;
        }
    };
    let mut buffer = Vec::new();
    let result = pool.install(|| dispatch(&cli, &mut buffer));
    if let Err(e) = stdout.write_all(&buffer).and_then(|_| stdout.flush()) {
        let _ = writeln!(stderr, "{}", CliError::Io(e.to_string()).to_json());
        return 1;
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.to_json());
            e.exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, v: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    let metric = if cli.c_units { Metric::natural() } else { Metric::si() };
    match &cli.command {
        Command::Timing {
            v,
            l,
            dt,
            v_bb,
            scenario,
        } => {
            let report = match scenario {
                Some(path) => {
                    let s = load_scenario(path)?;
                    let t = s
                        .timing
                        .ok_or_else(|| CliError::Usage("scenario has no timing block".into()))?;
                    timing_report(&t, &s.metric())?
                }
                None => {
                    let v = v.ok_or_else(|| CliError::Usage("--v is required".into()))?;
                    match (l, dt, v_bb) {
                        (Some(l), Some(dt), Some(v_bb)) => timing_report(
                            &TimingSpec {
                                l: *l,
                                dt: *dt,
                                v_bb: *v_bb,
                                v,
                            },
                            &metric,
                        )?,
                        (None, None, None) => {
                            let speed = v.resolve(metric.c);
                            json!({
                                "c": metric.c,
                                "v": speed,
                                "v_bb": equivalent_vbb_with_c(speed, metric.c)?,
                            })
                        }
                        _ => return Err(CliError::Usage("give all of --L, --dt, --v-bb or none".into())),
                    }
                }
            };
            emit(out, &report)
        }
        Command::Chsh { trials, seed } => emit(out, &chsh_report(*trials, *seed)?),
        Command::Chain {
            n,
            local_bound: lb,
            quantum,
            mixture,
            epsilon,
        } => {
            let spec = ChainSpec::new(*n)?;
            let all = !lb && !quantum && mixture.is_none();
            let mut report = serde_json::Map::new();
            report.insert("n".into(), json!(n));
            if *lb || all {
                report.insert("local_bound".into(), json!(local_bound(&spec)?));
            }
            if *quantum || all {
                let opt = quantum_chain_optimum(*n)?;
                report.insert("quantum".into(), json!(opt));
                report.insert(
                    "quantum_closed_form".into(),
                    json!(2.0 * *n as f64 * (std::f64::consts::PI / (2.0 * *n as f64)).cos()),
                );
            }
            if let Some(p) = mixture {
                let mix = MixtureSpec::new(*p)?;
                report.insert("p".into(), json!(p));
                report.insert("mixture_deviation".into(), json!(mixture_deviation(mix, *n)?));
                report.insert("mixture_max_value".into(), json!(mixture_max_value(mix, *n)?));
                if let Some(eps) = epsilon {
                    report.insert("threshold".into(), json!(detection_threshold_n(*p, *eps)?));
                }
            }
            emit(out, &Value::Object(report))
        }
        Command::Simulate(args) => {
            let mut s = resolve(args)?;
            s.steps = vec![Step::Simulate];
            execute(&s, &args.opts, out)
        }
        Command::Signal { args, search } => {
            if *search {
                return emit(out, &search_infeasible((1, 2), &SweepConfig::default())?);
            }
            let mut s = resolve(args)?;
            s.steps = vec![Step::Signal];
            execute(&s, &args.opts, out)
        }
        Command::PointD { a, b, c } => {
            let d = metric.find_point_d(a, b, c);
            let report = match d {
                Some(d) => json!({
                    "found": true,
                    "d": d.event,
                    "advantage": d.advantage,
                    "reachable_from_b": metric.in_future_lightcone(b, &d.event),
                    "reachable_from_c": metric.in_future_lightcone(c, &d.event),
                    "reachable_from_a": metric.in_future_lightcone(a, &d.event),
                    "c": metric.c,
                }),
                None => json!({"found": false, "c": metric.c}),
            };
            emit(out, &report)
        }
        Command::Preset { action } => match action {
            PresetAction::List => {
                let list: Vec<Value> = PRESETS
                    .iter()
                    .map(|(name, about)| json!({"name": name, "description": about}))
                    .collect();
                emit(out, &list)
            }
            PresetAction::Run { name, opts } => {
                let s = apply_overrides(preset(name)?, opts)?;
                execute(&s, opts, out)
            }
        },
        Command::Validate { file } => {
            let text = fs::read_to_string(file)?;
            parse_scenario(&text)?;
            emit(out, &json!({"valid": true}))
        }
    }
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn resolve(args: &ScenarioArgs) -> CliResult<Scenario> {
    let s = match (&args.scenario, &args.preset) {
        (Some(path), None) => load_scenario(path)?,
        (None, Some(name)) => preset(name)?,
        _ => return Err(CliError::Usage("give --scenario <path> or --preset <name>".into())),
    };
    apply_overrides(s, &args.opts)
}

fn apply_overrides(mut s: Scenario, opts: &RunOpts) -> CliResult<Scenario> {
    if let Some(t) = opts.trials {
        if t == 0 {
            return Err(CliError::Schema(vec![Violation {
                path: "/trials".into(),
                message: "must be an integer >= 1".into(),
            }]));
        }
        s.trials = t;
    }
    if let Some(seed) = opts.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn timing_report(t: &TimingSpec, metric: &Metric) -> CliResult<Value> {
    let c = metric.c;
    let (v_bb, v) = (t.v_bb.resolve(c), t.v.resolve(c));
    let s = TimingScenario::with_c(t.l, t.dt, v_bb, v, c)?;
    let on_off = |cut: bool| if cut { Coordination::Off } else { Coordination::On };
    Ok(json!({
        "L": t.l,
        "dt": t.dt,
        "v_bb": v_bb,
        "v": v,
        "c": c,
        "finite_speed_window": s.finite_speed_window(),
        "before_before_window": s.before_before_window(),
        "finite_speed": on_off(finite_speed_cut(&s)),
        "before_before": on_off(before_before(&s)),
        "equivalent_v_bb": equivalent_vbb_with_c(v, c)?,
        "equivalent_v": equivalent_vbb_with_c(v_bb, c)?,
    }))
}

#[derive(Serialize)]
struct ChshReport {
    optimum: f64,
    tsirelson: f64,
    alice: Vec<f64>,
    bob: Vec<f64>,
    trials: u64,
    seed: u64,
    quantum: Estimate,
    local: Estimate,
}

fn chsh_terms() -> Vec<ChainTerm> {
    // S = E(a,b) + E(a,b') + E(a',b) − E(a',b').
    [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]
        .into_iter()
        .map(|(alice, bob, sign)| ChainTerm { alice, bob, sign })
        .collect()
}

fn chsh_report(trials: u64, seed: u64) -> CliResult<ChshReport> {
    let opt = chsh_optimum();
    let target = born_behavior(&make_singlet(), &[opt.alice.clone(), opt.bob.clone()])?;
    let geometry = Geometry::new(
        vec![
            Device {
                event: Event::new(0.0, 0.0, 0.0)?,
                boost: Boost::REST,
            },
            Device {
                event: Event::new(0.0, 1.0, 0.0)?,
                boost: Boost::REST,
            },
        ],
        Metric::natural(),
    )?;
    let terms = chsh_terms();
    let schedule = SettingsSchedule::from_terms(&terms);
    let q = sample_runs(&ModelConfig::Quantum, &geometry, &target, &schedule, trials, seed)?;
    let l = sample_runs(&ModelConfig::Local, &geometry, &target, &schedule, trials, seed)?;
    Ok(ChshReport {
        optimum: opt.value,
        tsirelson: 2.0 * std::f64::consts::SQRT_2,
        alice: opt.alice,
        bob: opt.bob,
        trials,
        seed,
        quantum: estimate_expression(&q, &terms),
        local: estimate_expression(&l, &terms),
    })
}

#[derive(Serialize)]
struct RecordView<'a> {
    trial: u64,
    settings: &'a [usize],
    outcomes: &'a [i8],
    coordination: [Option<Coordination>; 3],
}

fn write_records(records: &[RunRecord], format: Format, w: &mut dyn Write) -> CliResult<()> {
    match format {
        Format::Csv => write_csv(records, &mut *w)?,
        Format::Json => {
            let views: Vec<RecordView> = records
                .iter()
                .map(|r| RecordView {
                    trial: r.trial,
                    settings: r.settings(),
                    outcomes: r.outcomes(),
                    coordination: r.coordination,
                })
                .collect();
            serde_json::to_writer(&mut *w, &views).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Run the scenario's steps. With `--out`, run records, summary and report
/// go to files; otherwise the summary is printed.
fn execute(s: &Scenario, opts: &RunOpts, out: &mut dyn Write) -> CliResult<()> {
    let mut derived = serde_json::Map::new();
    let mut statistics = serde_json::Map::new();
    let mut report: Option<Value> = None;
    let mut records: Option<Vec<RunRecord>> = None;

    for step in &s.steps {
        match step {
            Step::Timing => {
                let t = s
                    .timing
                    .ok_or_else(|| CliError::Usage("scenario has no timing block".into()))?;
                derived.insert("timing".into(), timing_report(&t, &s.metric())?);
            }
            Step::Chain => {
                let spec = s
                    .chain_spec()?
                    .ok_or_else(|| CliError::Usage("chain step needs a chain schedule".into()))?;
                let n = spec.n;
                let mut rows = Vec::new();
                for &p in s.mixture_p.as_deref().unwrap_or(&[]) {
                    let mix = MixtureSpec::new(p)?;
                    rows.push(json!({
                        "p": p,
                        "mixture_deviation": mixture_deviation(mix, n)?,
                        "mixture_max_value": mixture_max_value(mix, n)?,
                    }));
                }
                derived.insert(
                    "chain".into(),
                    json!({
                        "n": n,
                        "local_bound": local_bound(&spec)?,
                        "quantum_optimum": quantum_chain_optimum(n)?.value,
                        "mixtures": rows,
                    }),
                );
            }
            Step::Simulate => {
                let (d, st, recs) = simulate(s)?;
                derived.insert("simulation".into(), d);
                statistics.extend(st);
                records = Some(recs);
            }
            Step::Signal => {
                let r = signal_report(s)?;
                derived.insert(
                    "signal".into(),
                    json!({"channel": r["channel"], "signaling_distance": r["signaling_distance"]}),
                );
                report = Some(r);
            }
            Step::Detection => {
                let r = detection_report(s)?;
                derived.insert("detection".into(), r.clone());
                report = Some(r);
            }
        }
    }

    let summary = json!({
        "schema": SUMMARY_SCHEMA,
        "inputs": s,
        "derived": derived,
        "statistics": statistics,
    });
    match &opts.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            if let Some(recs) = &records {
                let name = match opts.format {
                    Format::Csv => s.outputs.runs.clone(),
                    Format::Json => Path::new(&s.outputs.runs).with_extension("json").display().to_string(),
                };
                let mut w = std::io::BufWriter::new(fs::File::create(dir.join(name))?);
                write_records(recs, opts.format, &mut w)?;
                w.flush()?;
            }
            let mut f = fs::File::create(dir.join(&s.outputs.summary))?;
            emit(&mut f, &summary)?;
            if let Some(r) = &report {
                let mut f = fs::File::create(dir.join(&s.outputs.report))?;
                emit(&mut f, r)?;
            }
            emit(
                out,
                &json!({"name": s.name, "out": dir, "files": written(s, &records, &report, opts.format)}),
            )
        }
        None => emit(out, &summary),
    }
}

fn written(s: &Scenario, records: &Option<Vec<RunRecord>>, report: &Option<Value>, format: Format) -> Vec<String> {
    let mut files = Vec::new();
    if records.is_some() {
        files.push(match format {
            Format::Csv => s.outputs.runs.clone(),
            Format::Json => Path::new(&s.outputs.runs).with_extension("json").display().to_string(),
        });
    }
    files.push(s.outputs.summary.clone());
    if report.is_some() {
        files.push(s.outputs.report.clone());
    }
    files
}

fn plan_json(plan: &CoordinationPlan) -> Value {
    let pairs = |m: &CoordinationMap| -> Value {
        m.pairs
            .iter()
            .map(|((i, j), c)| json!({"pair": [i, j], "coordination": c}))
            .collect()
    };
    match plan {
        CoordinationPlan::Fixed { map } => json!({"kind": "fixed", "pairs": pairs(map)}),
        CoordinationPlan::Switched { p, schedule, .. } => {
            json!({"kind": "switched", "p": p, "schedule": schedule})
        }
    }
}

type Stats = serde_json::Map<String, Value>;

fn simulate(s: &Scenario) -> CliResult<(Value, Stats, Vec<RunRecord>)> {
    let geometry = s.geometry()?;
    let model = s.model();
    let target = s.target()?;
    let schedule = s.settings_schedule()?;
    let plan = coordination_map(&model, &geometry)?;
    let effective = effective_behavior(&model, &geometry, &target)?;
    let records = sample_runs(&model, &geometry, &target, &schedule, s.trials, s.seed)?;

    let mut stats = Stats::new();
    stats.insert("trials".into(), json!(s.trials));
    let tuples: Vec<Vec<usize>> = (0..target.num_setting_tuples())
        .map(|i| target.setting_tuple(i))
        .collect();
    let per_setting: Vec<Value> = tuples
        .iter()
        .map(|xs| {
            let e = estimate_correlator(&records, xs);
            json!({
                "settings": xs,
                "count": e.count,
                "correlator": if e.count > 0 { json!(e.value) } else { Value::Null },
                "stderr": if e.count > 0 { json!(e.stderr) } else { Value::Null },
                "exact": effective.correlator(xs).ok(),
            })
        })
        .collect();
    stats.insert("correlators".into(), json!(per_setting));

    if let Some(spec) = s.chain_spec()? {
        let est = estimate_expression(&records, &spec.terms);
        let prediction = chain_value(&effective, &spec)?;
        stats.insert(
            "chain".into(),
            json!({
                "n": spec.n,
                "estimate": est.value,
                "stderr": est.stderr,
                "prediction": prediction,
                "deviation_in_stderr": (est.value - prediction) / est.stderr,
                "local_bound": local_bound(&spec)?,
                "exceeds_local_bound_by_5_stderr": est.value > local_bound(&spec)? + 5.0 * est.stderr,
            }),
        );
    }

    if target.parties() == 3 {
        stats.insert("bc_marginals".into(), empirical_bc(&records, &target));
    }

    let derived = json!({
        "c": geometry.metric.c,
        "coordination": plan_json(&plan),
        "effective_no_signaling": effective.is_no_signaling(1e-10),
        "effective_signaling": pair_signaling(&effective)?,
    });
    Ok((derived, stats, records))
}

/// Signaling distance of every receiver subset of size parties − 1 and 1.
fn pair_signaling(b: &Behavior) -> CliResult<Value> {
    let n = b.parties();
    let mut rows = Vec::new();
    let mut subsets: Vec<Vec<usize>> = (0..n).map(|p| vec![p]).collect();
    if n == 3 {
        subsets.extend([vec![0, 1], vec![0, 2], vec![1, 2]]);
    }
    for sub in subsets {
        rows.push(json!({"receivers": sub, "distance": signaling_distance(b, &sub)?}));
    }
    Ok(json!(rows))
}

/// Empirical joint B–C outcome frequencies per Alice setting, and the largest
/// total-variation gap between Alice settings.
fn empirical_bc(records: &[RunRecord], target: &Behavior) -> Value {
    let m = target.settings_per_party();
    let mut counts = vec![vec![[0u64; 4]; m[1] * m[2]]; m[0]];
    for r in records {
        let xs = r.settings();
        let o = r.outcomes();
        let idx = usize::from(o[1] < 0) << 1 | usize::from(o[2] < 0);
        counts[xs[0]][xs[1] * m[2] + xs[2]][idx] += 1;
    }
    let freq = |c: &[u64; 4]| -> Vec<f64> {
        let n: u64 = c.iter().sum();
        c.iter()
            .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
            .collect()
    };
    let mut gap: f64 = 0.0;
    for yz in 0..m[1] * m[2] {
        for x1 in 0..m[0] {
            for x2 in x1 + 1..m[0] {
                let (p, q) = (freq(&counts[x1][yz]), freq(&counts[x2][yz]));
                gap = gap.max(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>());
            }
        }
    }
    let tables: Vec<Value> = (0..m[0])
        .map(|x| {
            json!({
                "alice_setting": x,
                "by_bc_settings": (0..m[1] * m[2]).map(|yz| json!({
                    "settings": [yz / m[2], yz % m[2]],
                    "counts": counts[x][yz],
                    "frequencies": freq(&counts[x][yz]),
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({"tables": tables, "max_total_variation_gap": gap})
}

fn signal_report(s: &Scenario) -> CliResult<Value> {
    let geometry = s.geometry()?;
    let model = s.model();
    let target = s.target()?;
    let plan = coordination_map(&model, &geometry)?;
    let effective = effective_behavior(&model, &geometry, &target)?;
    let mut report = serde_json::Map::new();
    report.insert("coordination".into(), plan_json(&plan));
    report.insert("effective_signaling".into(), pair_signaling(&effective)?);

    match target.parties() {
        2 => {
            let membership = local_polytope_member(&effective)?;
            let distance = signaling_distance(&effective, &[1])?.max(signaling_distance(&effective, &[0])?);
            report.insert("feasible".into(), json!(membership.is_local()));
            match &membership {
                crate::signaling::PolytopeMembership::Local { weights, residual } => {
                    report.insert("witness".into(), json!({"weights": weights, "residual": residual}));
                }
                crate::signaling::PolytopeMembership::Nonlocal { inequality } => {
                    report.insert(
                        "certificate".into(),
                        json!({"inequality": inequality.to_string(), "margin": inequality.margin, "coeffs": inequality.coeffs}),
                    );
                }
            }
            report.insert("signaling_distance".into(), json!(distance));
            report.insert("bias".into(), json!(distance / 2.0));
            report.insert("channel".into(), json!(distance > 1e-12));
            report.insert("settings".into(), json!(s.settings));
            report.insert("advantage_seconds".into(), Value::Null);
        }
        3 => {
            let off = match (&plan, s.off_pair) {
                (_, Some([i, j])) => Some((i, j)),
                (CoordinationPlan::Fixed { map }, None) => match map.off_pairs().as_slice() {
                    [p] => Some(*p),
                    _ => None,
                },
                _ => None,
            };
            let events = [0, 1, 2].map(|i| geometry.devices[i].event);
            match off {
                Some(pair) => match ftl_protocol_report(&target, pair, events, &geometry.metric, s.settings.clone()) {
                    Ok(r) => {
                        if let Value::Object(m) = json!(r) {
                            report.extend(m);
                        }
                        report.insert("off_pair".into(), json!([pair.0, pair.1]));
                    }
                    Err(Error::NoPointD) => {
                        let outcome = localparts_feasible(&target, pair)?;
                        insert_outcome(&mut report, &outcome);
                        report.insert("off_pair".into(), json!([pair.0, pair.1]));
                        report.insert("advantage_seconds".into(), Value::Null);
                        report.insert("point_d".into(), Value::Null);
                        report.insert("statement".into(), json!("no point D for this geometry"));
                    }
                    Err(e) => return Err(e.into()),
                },
                None => {
                    let distance = signaling_distance(&effective, &[1, 2])?;
                    let outcome = localparts_feasible(&target, (1, 2))?;
                    insert_outcome(&mut report, &outcome);
                    report.insert("off_pair".into(), Value::Null);
                    report.insert("signaling_distance".into(), json!(distance));
                    report.insert("bias".into(), json!(distance / 2.0));
                    report.insert("channel".into(), json!(distance > 1e-12));
                    report.insert("settings".into(), json!(s.settings));
                    report.insert("advantage_seconds".into(), Value::Null);
                    report.insert(
                        "statement".into(),
                        json!(
                            "no channel: every pair keeps its coordination, so no marginal depends on a remote setting"
                        ),
                    );
                }
            }
        }
        n => {
            return Err(CliError::Model(Error::Unsupported(format!(
                "signal report for {n} parties"
            ))))
        }
    }
    Ok(Value::Object(report))
}

fn insert_outcome(report: &mut serde_json::Map<String, Value>, outcome: &LocalPartsOutcome) {
    match outcome {
        LocalPartsOutcome::Feasible { witness, .. } => {
            report.insert("feasible".into(), json!(true));
            report.insert("witness".into(), json!(witness));
        }
        LocalPartsOutcome::Infeasible { certificate } => {
            report.insert("feasible".into(), json!(false));
            report.insert("certificate".into(), json!(certificate));
        }
    }
}

/// Joint tables of the target with coordination ON and OFF, and the
/// behavior in which the sender's setting decides whether coordination
/// survives (setting 0 keeps it, any other setting breaks it).
fn detection_report(s: &Scenario) -> CliResult<Value> {
    let target = s.target()?;
    let n = target.parties();
    let on = target.clone();
    let off = crate::hvmodels::apply_coordination(&CoordinationMap::uniform(n, Coordination::Off), &target)?;
    let rows: Vec<Vec<f64>> = (0..target.num_setting_tuples())
        .map(|i| {
            let xs = target.setting_tuple(i);
            if xs[0] == 0 {
                on.table()[i].clone()
            } else {
                off.table()[i].clone()
            }
        })
        .collect();
    let toggled = Behavior::new(target.settings_per_party().to_vec(), rows)?;
    let receivers: Vec<usize> = (1..n).collect();
    Ok(json!({
        "coordinated": on,
        "uncoordinated": off,
        "sender_toggled": toggled,
        "signaling_distance": signaling_distance(&toggled, &receivers)?,
        "receivers": receivers,
        "chsh_coordinated": if n == 2 && target.settings_per_party() == [2, 2] { Some(crate::inequality::chsh_value(&on, 0, 1, 0, 1)?) } else { None },
        "chsh_uncoordinated": if n == 2 && target.settings_per_party() == [2, 2] { Some(crate::inequality::chsh_value(&off, 0, 1, 0, 1)?) } else { None },
    }))
}

pub const PRESETS: &[(&str, &str)] = &[
    (
        "fig1-detection",
        "Singlet pair; the sender's setting decides whether coordination survives. Joint tables and the receiver's marginal shift.",
    ),
    ("fig2a", "GHZ triple, every pair coordinated under a finite-speed influence."),
    (
        "fig2b",
        "GHZ triple where B and C lose coordination while A keeps it with both; signaling report with point D.",
    ),
    (
        "before-before",
        "Singlet, detectors receding symmetrically with simultaneous arrivals; multisimultaneity cuts the pair, CHSH stays local.",
    ),
    ("finite-speed-1e5c", "Timing criteria for an influence at 1e5 c and the equivalent recession speed."),
    ("mixture-chain", "Singlet 4-chain sampled from a local-weight mixture, with the predicted value."),
];

fn device(t: f64, x: f64, y: f64, beta: Option<f64>) -> DeviceSpec {
    DeviceSpec {
        t,
        x,
        y,
        beta,
        velocity: None,
    }
}

fn base(name: &str) -> Scenario {
    Scenario {
        schema: SCENARIO_SCHEMA.into(),
        name: name.into(),
        units: Units::Si,
        geometry: None,
        model: None,
        state: None,
        settings: None,
        schedule: None,
        trials: DEFAULT_TRIALS,
        seed: 1,
        outputs: OutputSpec::default(),
        timing: None,
        off_pair: None,
        mixture_p: None,
        steps: default_steps(),
    }
}

/// Second-setting angles picked by the GHZ settings sweep for the B–C pair.
const FIG2_ANGLES: [f64; 3] = [
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI / 16.0,
    std::f64::consts::PI / 16.0,
];

pub fn preset(name: &str) -> CliResult<Scenario> {
    let mut s = base(name);
    match name {
        "fig1-detection" => {
            let opt = chsh_optimum();
            s.geometry = Some(GeometrySpec {
                devices: vec![device(0.0, 0.0, 0.0, None), device(0.0, 10e3, 0.0, None)],
            });
            s.model = Some(ModelSpec::Quantum);
            s.state = Some(StateSpec::Named("singlet".into()));
            s.settings = Some(vec![opt.alice, opt.bob]);
            s.steps = vec![Step::Detection];
        }
        "fig2a" | "fig2b" => {
            let c_arrival = if name == "fig2a" { 1e-6 } else { 1e-9 };
            s.geometry = Some(GeometrySpec {
                devices: vec![
                    device(-1e-6, 0.0, 0.0, None),
                    device(0.0, 10e3, 0.0, None),
                    device(c_arrival, 20e3, 0.0, None),
                ],
            });
            s.model = Some(ModelSpec::FiniteSpeed { v: Speed::TimesC(1e4) });
            s.state = Some(StateSpec::Named("ghz3".into()));
            s.settings = Some(FIG2_ANGLES.iter().map(|&t| vec![0.0, t]).collect());
            s.steps = vec![Step::Simulate, Step::Signal];
        }
        "before-before" => {
            let opt = chsh_optimum();
            let (l, beta) = (10e3, 1e-6);
            s.geometry = Some(GeometrySpec {
                devices: vec![
                    device(0.0, -l / 2.0, 0.0, Some(-beta)),
                    device(0.0, l / 2.0, 0.0, Some(beta)),
                ],
            });
            s.model = Some(ModelSpec::Multisim);
            s.state = Some(StateSpec::Named("singlet".into()));
            s.settings = Some(vec![opt.alice, opt.bob]);
            s.schedule = Some(ScheduleSpec::Chain { n: 2 });
            s.steps = vec![Step::Simulate];
        }
        "finite-speed-1e5c" => {
            let v_bb = SPEED_OF_LIGHT / 1e5;
            s.timing = Some(TimingSpec {
                l: 10e3,
                dt: 0.5 * 10e3 * v_bb / (SPEED_OF_LIGHT * SPEED_OF_LIGHT),
                v_bb: Speed::Absolute(v_bb),
                v: Speed::TimesC(1e5),
            });
            s.steps = vec![Step::Timing];
        }
        "mixture-chain" => {
            let spec = ChainSpec::new(4)?;
            let (alice, bob) = spec.equally_spaced_angles();
            s.geometry = Some(GeometrySpec {
                devices: vec![device(0.0, 0.0, 0.0, None), device(0.0, 10e3, 0.0, None)],
            });
            s.model = Some(ModelSpec::Mixture {
                p: 0.1,
                schedule: MixtureSchedule::Coin,
            });
            s.state = Some(StateSpec::Named("singlet".into()));
            s.settings = Some(vec![alice, bob]);
            s.schedule = Some(ScheduleSpec::Chain { n: 4 });
            s.mixture_p = Some(vec![0.1, 0.5]);
            s.steps = vec![Step::Chain, Step::Simulate];
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.iter().map(|p| p.0).collect::<Vec<_>>().join(", ")
            )))
        }
    }
    Ok(s)
}
