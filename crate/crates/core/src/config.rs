//! Audit configuration as read from a JSON file and merged with
//! command-line flags, and its compiled form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{
    parse_predicate, parse_score, BoundPredicate, CmpOp, EvalError, Literal, Operand, ParseError,
    Predicate, PredicateExpr, ScoreExpr,
};
use crate::measures::MeasureId;
use crate::model::{ModelConfig, PredictionSource};

pub const DEFAULT_EPSILON: f64 = 0.2;

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legitimate: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub legitimate_args: Vec<Literal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_args: Vec<Literal>,
    /// `None` selects every measure whose inputs are configured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measures: Option<Vec<MeasureId>>,
    /// Per-measure threshold overrides. For the balance measures this is the
    /// only way to get a verdict.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub measure_epsilon: BTreeMap<MeasureId, f64>,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub fail_on_violation: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            dataset: None,
            epsilon: DEFAULT_EPSILON,
            privileged: None,
            positive: None,
            truth: None,
            score: None,
            legitimate: None,
            legitimate_args: Vec::new(),
            calibration: None,
            calibration_args: Vec::new(),
            measures: None,
            measure_epsilon: BTreeMap::new(),
            source: SourceConfig::Csv,
            sweep: None,
            format: OutputFormat::Json,
            out: None,
            plot_out: None,
            fail_on_violation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SourceConfig {
    #[default]
    Csv,
    Model(ModelConfig),
}

impl SourceConfig {
    pub fn to_source(&self) -> PredictionSource {
        match self {
            SourceConfig::Csv => PredictionSource::CsvColumns,
            SourceConfig::Model(m) => PredictionSource::ExternalModel(m.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Table,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "table" => Ok(OutputFormat::Table),
            other => Err(format!("unknown format {other:?}, expected json or table")),
        }
    }
}

/// Which side of the comparison each swept value stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepDirection {
    /// The value is the unprivileged group; everyone else is privileged.
    #[default]
    Unprivileged,
    /// The value is the privileged group.
    Privileged,
}

impl FromStr for SweepDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unprivileged" => Ok(SweepDirection::Unprivileged),
            "privileged" => Ok(SweepDirection::Privileged),
            other => Err(format!(
                "unknown sweep direction {other:?}, expected unprivileged or privileged"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub column: String,
    pub values: Vec<String>,
    #[serde(default)]
    pub direction: SweepDirection,
}

impl SweepSpec {
    /// The privileged predicate for one swept value.
    pub fn privileged_for(&self, value: &str) -> Predicate {
        let op = match self.direction {
            SweepDirection::Unprivileged => CmpOp::Ne,
            SweepDirection::Privileged => CmpOp::Eq,
        };
        Predicate::new(PredicateExpr::Compare {
            left: Operand::Column(self.column.clone()),
            op,
            right: Operand::Literal(Literal::Str(value.to_string())),
        })
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.column.is_empty() {
            return Err(ConfigError::Sweep("empty sweep column".into()));
        }
        if self.values.is_empty() {
            return Err(ConfigError::Sweep("no sweep values".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &self.values {
            if !seen.insert(v) {
                return Err(ConfigError::Sweep(format!("duplicate sweep value {v:?}")));
            }
        }
        Ok(())
    }
}

/// Predicate roles, as named in configs and error messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Privileged,
    Positive,
    Truth,
    Score,
    Legitimate,
    Calibration,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Privileged => "privileged",
            Role::Positive => "positive",
            Role::Truth => "truth",
            Role::Score => "score",
            Role::Legitimate => "legitimate",
            Role::Calibration => "calibration",
        }
    }

    /// Whether the role reads model output instead of dataset rows in model mode.
    pub fn reads_prediction(self) -> bool {
        matches!(self, Role::Positive | Role::Score | Role::Calibration)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing `{0}` (set it in the config or on the command line)")]
    Missing(&'static str),
    #[error("`{role}`: {source}")]
    Syntax {
        role: Role,
        #[source]
        source: ParseError,
    },
    #[error("`{role}` takes {expected} argument(s) but {found} were given")]
    Arity {
        role: Role,
        expected: usize,
        found: usize,
    },
    #[error("`{role}` takes no arguments")]
    ArgsWithoutPredicate { role: Role },
    #[error("epsilon must lie strictly between 0 and 1, got {0}")]
    Epsilon(f64),
    #[error("threshold for {measure} must be {expected}, got {value}")]
    MeasureEpsilon {
        measure: MeasureId,
        value: f64,
        expected: &'static str,
    },
    #[error("{0} is selected more than once")]
    DuplicateMeasure(MeasureId),
    #[error("sweep: {0}")]
    Sweep(String),
    #[error("model source needs a non-empty command")]
    EmptyModelCommand,
    #[error("model batch_size must be at least 1")]
    BatchSize,
}

/// Parses a config file, reporting JSON errors with line and column.
pub fn load_config(path: &Path) -> Result<AuditConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

pub fn parse_config(text: &str, origin: &Path) -> Result<AuditConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Json {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// A validated config with every expression parsed and bound.
#[derive(Debug, Clone)]
pub struct CompiledConfig {
    pub privileged: BoundPredicate,
    pub positive: BoundPredicate,
    pub truth: BoundPredicate,
    pub score: Option<ScoreExpr>,
    pub legitimate: Option<BoundPredicate>,
    pub calibration: Option<BoundPredicate>,
    pub measures: Vec<MeasureId>,
    pub epsilon: f64,
    pub measure_epsilon: BTreeMap<MeasureId, f64>,
}

impl CompiledConfig {
    /// Every (role, column) pair the expressions read.
    pub fn column_uses(&self) -> Vec<(Role, String)> {
        let mut out = Vec::new();
        let mut add = |role: Role, p: &BoundPredicate| {
            out.extend(
                p.predicate()
                    .columns()
                    .into_iter()
                    .map(|c| (role, c.to_string())),
            );
        };
        add(Role::Privileged, &self.privileged);
        add(Role::Positive, &self.positive);
        add(Role::Truth, &self.truth);
        if let Some(p) = &self.legitimate {
            add(Role::Legitimate, p);
        }
        if let Some(p) = &self.calibration {
            add(Role::Calibration, p);
        }
        if let Some(s) = &self.score {
            out.extend(
                s.columns()
                    .into_iter()
                    .map(|c| (Role::Score, c.to_string())),
            );
        }
        out
    }
}

fn bind(role: Role, text: &str, args: &[Literal]) -> Result<BoundPredicate, ConfigError> {
    let predicate = parse_predicate(text).map_err(|source| ConfigError::Syntax { role, source })?;
    BoundPredicate::new(predicate, args.to_vec()).map_err(|e| match e {
        EvalError::Arity { expected, found } => ConfigError::Arity {
            role,
            expected,
            found,
        },
        other => unreachable!("binding only checks arity: {other}"),
    })
}

fn required<'a>(field: &'a Option<String>, name: &'static str) -> Result<&'a str, ConfigError> {
    field.as_deref().ok_or(ConfigError::Missing(name))
}

fn optional(
    role: Role,
    text: &Option<String>,
    args: &[Literal],
) -> Result<Option<BoundPredicate>, ConfigError> {
    match text {
        Some(t) => bind(role, t, args).map(Some),
        None if args.is_empty() => Ok(None),
        None => Err(ConfigError::ArgsWithoutPredicate { role }),
    }
}

impl AuditConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parses and binds every expression and checks thresholds. `privileged`
    /// overrides the configured privileged predicate (sweeps generate their own).
    pub fn compile_with(
        &self,
        privileged: Option<&Predicate>,
    ) -> Result<CompiledConfig, ConfigError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(ConfigError::Epsilon(self.epsilon));
        }
        for (&measure, &value) in &self.measure_epsilon {
            let ok = if measure.is_balance() {
                value.is_finite() && value > 0.0
            } else {
                value > 0.0 && value < 1.0
            };
            if !ok {
                let expected = if measure.is_balance() {
                    "positive and finite"
                } else {
                    "strictly between 0 and 1"
                };
                return Err(ConfigError::MeasureEpsilon {
                    measure,
                    value,
                    expected,
                });
            }
        }
        if let SourceConfig::Model(m) = &self.source {
            if m.command.is_empty() || m.command[0].is_empty() {
                return Err(ConfigError::EmptyModelCommand);
            }
            if m.batch_size == 0 {
                return Err(ConfigError::BatchSize);
            }
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }

        let privileged = match privileged {
            Some(p) => BoundPredicate::unary(p.clone()).map_err(|_| ConfigError::Arity {
                role: Role::Privileged,
                expected: p.arity(),
                found: 0,
            })?,
            None => bind(
                Role::Privileged,
                required(&self.privileged, "privileged")?,
                &[],
            )?,
        };
        let positive = bind(Role::Positive, required(&self.positive, "positive")?, &[])?;
        let truth = bind(Role::Truth, required(&self.truth, "truth")?, &[])?;
        let score = match &self.score {
            Some(t) => Some(parse_score(t).map_err(|source| ConfigError::Syntax {
                role: Role::Score,
                source,
            })?),
            None => None,
        };
        let legitimate = optional(Role::Legitimate, &self.legitimate, &self.legitimate_args)?;
        let calibration = optional(Role::Calibration, &self.calibration, &self.calibration_args)?;

        let measures = match &self.measures {
            Some(list) => {
                let mut seen = BTreeSet::new();
                for &m in list {
                    if !seen.insert(m) {
                        return Err(ConfigError::DuplicateMeasure(m));
                    }
                }
                list.clone()
            }
            None => MeasureId::ALL
                .into_iter()
                .filter(|m| !m.needs_legitimate() || legitimate.is_some())
                .filter(|m| !m.needs_calibration() || calibration.is_some())
                .filter(|m| !m.needs_score() || score.is_some())
                .collect(),
        };

        Ok(CompiledConfig {
            privileged,
            positive,
            truth,
            score,
            legitimate,
            calibration,
            measures,
            epsilon: self.epsilon,
            measure_epsilon: self.measure_epsilon.clone(),
        })
    }

    pub fn compile(&self) -> Result<CompiledConfig, ConfigError> {
        self.compile_with(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> AuditConfig {
        AuditConfig {
            privileged: Some(r#"col("race") != "African-American""#.into()),
            positive: Some(r#"col("score_text") in {"Medium", "High"}"#.into()),
            truth: Some(r#"col("two_year_recid") == "1""#.into()),
            ..AuditConfig::default()
        }
    }

    #[test]
    fn minimal_file() {
        let c = parse_config(
            r#"{"privileged": "col(\"s\") == \"1\"", "positive": "col(\"p\") == \"1\"",
                "truth": "col(\"y\") == \"1\""}"#,
            Path::new("c.json"),
        )
        .unwrap();
        assert_eq!(c.epsilon, 0.2);
        assert_eq!(c.source, SourceConfig::Csv);
        let compiled = c.compile().unwrap();
        // no score, legitimate or calibration: those measures are left out
        assert_eq!(compiled.measures.len(), 9);
    }

    #[test]
    fn json_errors_carry_position() {
        let e = parse_config(
            "{\n  \"epsilon\": 0.2,\n  \"bogus\": 1\n}",
            Path::new("c.json"),
        )
        .unwrap_err();
        match e {
            ConfigError::Json { line, path, .. } => {
                assert_eq!(line, 3);
                assert_eq!(path, Path::new("c.json"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn model_source() {
        let c = parse_config(
            r#"{"source": {"mode": "model", "command": ["predict", "--fast"], "batch_size": 8}}"#,
            Path::new("c.json"),
        )
        .unwrap();
        match c.source {
            SourceConfig::Model(m) => {
                assert_eq!(m.command, ["predict", "--fast"]);
                assert_eq!(m.batch_size, 8);
                assert_eq!(m.request_timeout_secs, 30.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config(
            r#"{"source": {"mode": "model", "command": ["x"], "bogus": 1}}"#,
            Path::new("c.json")
        )
        .is_err());
    }

    #[test]
    fn round_trip() {
        let mut c = base();
        c.legitimate = Some(r#"col("c_charge_degree") == $1"#.into());
        c.legitimate_args = vec![Literal::Str("F".into())];
        c.measures = Some(vec![
            MeasureId::ConditionalStatisticalParity,
            MeasureId::PositiveBalance,
        ]);
        c.measure_epsilon.insert(MeasureId::PositiveBalance, 1.5);
        c.sweep = Some(SweepSpec {
            column: "race".into(),
            values: vec!["Asian".into()],
            direction: SweepDirection::Unprivileged,
        });
        let back = parse_config(&c.to_json(), Path::new("-")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn missing_and_bad_fields() {
        let mut c = base();
        c.truth = None;
        assert!(matches!(c.compile(), Err(ConfigError::Missing("truth"))));

        let mut c = base();
        c.positive = Some("col(\"p\") = 1".into());
        assert!(matches!(
            c.compile(),
            Err(ConfigError::Syntax {
                role: Role::Positive,
                ..
            })
        ));

        let mut c = base();
        c.legitimate = Some("col(\"a\") == $1 and col(\"b\") == $2".into());
        c.legitimate_args = vec![Literal::Int(1)];
        assert!(matches!(
            c.compile(),
            Err(ConfigError::Arity {
                role: Role::Legitimate,
                expected: 2,
                found: 1
            })
        ));

        let mut c = base();
        c.calibration_args = vec![Literal::Int(1)];
        assert!(matches!(
            c.compile(),
            Err(ConfigError::ArgsWithoutPredicate { .. })
        ));

        let mut c = base();
        c.truth = Some("col(\"y\") == $1".into());
        assert!(matches!(c.compile(), Err(ConfigError::Arity { .. })));
    }

    #[test]
    fn thresholds() {
        for eps in [0.0, 1.0, -0.1, f64::NAN] {
            let mut c = base();
            c.epsilon = eps;
            assert!(matches!(c.compile(), Err(ConfigError::Epsilon(_))), "{eps}");
        }
        let mut c = base();
        c.measure_epsilon.insert(MeasureId::NegativeBalance, 2.0);
        c.measure_epsilon.insert(MeasureId::DemographicParity, 0.05);
        assert!(c.compile().is_ok());
        c.measure_epsilon.insert(MeasureId::DemographicParity, 1.5);
        assert!(matches!(
            c.compile(),
            Err(ConfigError::MeasureEpsilon { .. })
        ));
    }

    #[test]
    fn measure_selection() {
        let mut c = base();
        c.score = Some(r#"int(col("decile_score"))"#.into());
        assert_eq!(c.compile().unwrap().measures.len(), 11);
        c.measures = Some(vec![MeasureId::EqualCalibration]);
        // explicit selection is kept even when inputs are missing
        assert_eq!(c.compile().unwrap().measures, [MeasureId::EqualCalibration]);
        c.measures = Some(vec![MeasureId::DisparateImpact, MeasureId::DisparateImpact]);
        assert!(matches!(c.compile(), Err(ConfigError::DuplicateMeasure(_))));
        c.measures = Some(Vec::new());
        assert!(c.compile().unwrap().measures.is_empty());
    }

    #[test]
    fn sweep_predicates() {
        let s = SweepSpec {
            column: "race".into(),
            values: vec!["Asian".into(), "Asian".into()],
            direction: SweepDirection::Unprivileged,
        };
        assert_eq!(
            s.privileged_for("Asian").to_string(),
            r#"col("race") != "Asian""#
        );
        let mut c = base();
        c.sweep = Some(s);
        assert!(matches!(c.compile(), Err(ConfigError::Sweep(_))));
    }
}
