use serde::{Deserialize, Serialize};

use super::CliError;
use crate::field::ModelSpec;
use crate::flow::Tolerance;

/// One scenario: a model, an experiment and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Directory for `report.json` and plot files; stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Plot series to write next to the report.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub emit: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Classify(ClassifyArgs),
    CertifySink(SinkArgs),
    PlissExtract(PlissArgs),
    Splitting(SplittingArgs),
    ConeClaim(ConeClaimArgs),
    DiskIntersection(DiskArgs),
    EntryTime(EntryArgs),
    ShrinkProbe(ShrinkArgs),
    Pipeline(PipelineArgs),
}

pub const EXPERIMENT_KINDS: &[&str] = &[
    "classify",
    "certify_sink",
    "pliss_extract",
    "splitting",
    "cone_claim",
    "disk_intersection",
    "entry_time",
    "shrink_probe",
    "pipeline",
];

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Classify(_) => "classify",
            Experiment::CertifySink(_) => "certify_sink",
            Experiment::PlissExtract(_) => "pliss_extract",
            Experiment::Splitting(_) => "splitting",
            Experiment::ConeClaim(_) => "cone_claim",
            Experiment::DiskIntersection(_) => "disk_intersection",
            Experiment::EntryTime(_) => "entry_time",
            Experiment::ShrinkProbe(_) => "shrink_probe",
            Experiment::Pipeline(_) => "pipeline",
        }
    }
}

fn one() -> f64 {
    1.0
}
fn m_max() -> usize {
    crate::sinks::DEFAULT_M_MAX
}
fn phases() -> usize {
    crate::sinks::DEFAULT_PHASES
}
fn copies() -> usize {
    crate::sinks::DEFAULT_COPIES
}
fn t_min() -> f64 {
    0.5
}
fn t_max() -> f64 {
    2.0
}
fn t_count() -> usize {
    16
}
fn trials() -> usize {
    1000
}
fn halvings() -> usize {
    6
}
fn hundred() -> usize {
    100
}
fn calibration() -> usize {
    500
}
fn twenty() -> usize {
    20
}
fn s0() -> f64 {
    0.05
}
fn ratio() -> f64 {
    0.7
}
fn shrink_samples() -> usize {
    16
}
fn singular_model() -> ModelSpec {
    ModelSpec::new("splitting_normal_form").with("lambda_f", 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyArgs {
    /// Point to classify; all listed singularities when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkArgs {
    pub alpha: f64,
    #[serde(rename = "T", default = "one")]
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_guess: Option<f64>,
    #[serde(default = "m_max")]
    pub m_max: usize,
    #[serde(default = "phases")]
    pub phases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlissArgs {
    pub alpha: f64,
    pub eta: f64,
    #[serde(rename = "T", default = "one")]
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_guess: Option<f64>,
    #[serde(default = "m_max")]
    pub m_max: usize,
    #[serde(default = "phases")]
    pub phases: usize,
    #[serde(default = "copies")]
    pub copies: usize,
}

impl PlissArgs {
    pub fn sink(&self) -> SinkArgs {
        SinkArgs {
            alpha: self.alpha,
            gap: self.gap,
            guess: self.guess.clone(),
            period_guess: self.period_guess,
            m_max: self.m_max,
            phases: self.phases,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplittingArgs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<Vec<f64>>,
    #[serde(default = "t_min")]
    pub t_min: f64,
    #[serde(default = "t_max")]
    pub t_max: f64,
    #[serde(default = "t_count")]
    pub t_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeClaimArgs {
    pub alpha: f64,
    #[serde(rename = "T")]
    pub gap: f64,
    pub eps: f64,
    pub radius: f64,
    #[serde(default = "trials")]
    pub trials: usize,
    #[serde(default = "halvings")]
    pub max_halvings: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskArgs {
    pub delta: f64,
    pub beta: f64,
    #[serde(default = "hundred")]
    pub samples: usize,
    #[serde(default = "calibration")]
    pub calibration_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryArgs {
    pub alpha: f64,
    pub beta: f64,
    pub l_max: f64,
    pub t_step: f64,
    #[serde(default = "twenty")]
    pub count: usize,
    #[serde(default = "s0")]
    pub s0: f64,
    #[serde(default = "ratio")]
    pub ratio: f64,
    /// `E` coordinates of the quadratic offset; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_e: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub singularity: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkArgs {
    pub point: Vec<f64>,
    #[serde(default = "one")]
    pub c: f64,
    pub eta: f64,
    #[serde(rename = "T")]
    pub gap: f64,
    pub radius: f64,
    pub horizon: f64,
    #[serde(default = "shrink_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineArgs {
    pub alpha: f64,
    pub eta: f64,
    #[serde(rename = "T", default = "one")]
    pub gap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guess: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_guess: Option<f64>,
    #[serde(default = "m_max")]
    pub m_max: usize,
    #[serde(default = "phases")]
    pub phases: usize,
    #[serde(default = "copies")]
    pub copies: usize,
    /// Model carrying the singularity for the local stages.
    #[serde(default = "singular_model")]
    pub singular_model: ModelSpec,
    pub delta: f64,
    pub beta: f64,
    pub l_max: f64,
    pub t_step: f64,
    #[serde(default = "twenty")]
    pub count: usize,
    #[serde(default = "s0")]
    pub s0: f64,
    #[serde(default = "ratio")]
    pub ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_e: Option<Vec<f64>>,
    #[serde(default = "calibration")]
    pub calibration_samples: usize,
}

/// Parses a config. With `kind` given (from the subcommand) an experiment
/// object without a `kind` field gets it filled in; a different `kind` is an
/// error.
pub fn parse_config(text: &str, kind: Option<&str>) -> Result<ScenarioConfig, CliError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if let Some(kind) = kind {
        let exp = value
            .get_mut("experiment")
            .and_then(|e| e.as_object_mut())
            .ok_or_else(|| CliError::Config("missing field `experiment`".into()))?;
        match exp.get("kind").and_then(|k| k.as_str()) {
            None => {
                exp.insert("kind".into(), kind.into());
            }
            Some(k) if k != kind => {
                return Err(CliError::Config(format!("config describes a `{k}` experiment, not `{kind}`")));
            }
            Some(_) => {}
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
}
