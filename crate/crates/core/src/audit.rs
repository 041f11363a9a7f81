//! Runs the selected measures over a dataset and renders the results.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AuditConfig, CompiledConfig, ConfigError, OutputFormat, Role};
use crate::dataset::{Dataset, Fingerprint, Row};
use crate::dsl::{BoundPredicate, Literal};
use crate::measures::{
    evaluate_measure, AuditContext, MeasureError, MeasureId, MeasureResult, RowScore, RowTest,
    Verdict,
};
use crate::model::{
    predict_all, ModelConfig, ModelError, OnPredictions, PredictionSource, ScoreOnPredictions,
    PREDICTION_COLUMN,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("`{role}` reads column {column:?}, which {where_}")]
    UnknownColumn {
        role: Role,
        column: String,
        where_: &'static str,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model returned {found} predictions for {expected} rows")]
    PredictionCount { expected: usize, found: usize },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("no sweep configured")]
    NoSweep,
    #[error("sweep column {0:?} is not in the dataset")]
    SweepColumn(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub predicate: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Literal>,
}

impl BoundSummary {
    fn of(p: &BoundPredicate) -> Self {
        BoundSummary {
            predicate: p.predicate().to_string(),
            args: p.args().to_vec(),
        }
    }
}

/// What the results were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub privileged: String,
    pub positive: String,
    pub truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legitimate: Option<BoundSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<BoundSummary>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub measure_epsilon: BTreeMap<MeasureId, f64>,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<String>,
    pub dataset: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub tool_version: String,
    pub generated_at: String,
    pub context: ContextSummary,
    pub results: Vec<MeasureResult>,
}

impl AuditReport {
    pub fn result(&self, id: MeasureId) -> Option<&MeasureResult> {
        self.results.iter().find(|r| r.measure == id)
    }

    pub fn any_failed(&self) -> bool {
        self.results.iter().any(|r| r.verdict() == Verdict::Fail)
    }
}

/// Rejects expressions that read columns their input rows cannot have.
pub fn check_columns(
    compiled: &CompiledConfig,
    d: &Dataset,
    source: &PredictionSource,
) -> Result<(), AuditError> {
    let model = matches!(source, PredictionSource::ExternalModel(_));
    for (role, column) in compiled.column_uses() {
        let (ok, where_) = if model && role.reads_prediction() {
            (
                column == PREDICTION_COLUMN,
                "is not available in model mode (only \"prediction\" is)",
            )
        } else {
            (d.header().contains(&column), "is not in the dataset")
        };
        if !ok {
            return Err(AuditError::UnknownColumn {
                role,
                column,
                where_,
            });
        }
    }
    Ok(())
}

fn model_outputs(config: &ModelConfig, d: &Dataset) -> Result<Vec<Row>, AuditError> {
    let predictions = predict_all(config, d.rows())?;
    if predictions.len() != d.row_count() {
        return Err(AuditError::PredictionCount {
            expected: d.row_count(),
            found: predictions.len(),
        });
    }
    Ok(predictions.iter().map(|p| p.to_row()).collect())
}

fn unavailable_reason(id: MeasureId, compiled: &CompiledConfig) -> Option<&'static str> {
    if id.needs_legitimate() && compiled.legitimate.is_none() {
        Some("not applicable: no legitimate-attribute predicate configured")
    } else if id.needs_calibration() && compiled.calibration.is_none() {
        Some("not applicable: no calibration predicate configured")
    } else if id.needs_score() && compiled.score.is_none() {
        Some("not applicable: no score expression configured")
    } else {
        None
    }
}

/// Evaluates the compiled measures. `outputs` holds one model-output row
/// per dataset row in model mode.
fn evaluate(
    compiled: &CompiledConfig,
    d: &Dataset,
    outputs: Option<&[Row]>,
) -> Result<Vec<MeasureResult>, AuditError> {
    let positive: Box<dyn RowTest + '_> = match outputs {
        Some(outputs) => Box::new(OnPredictions {
            predicate: &compiled.positive,
            outputs,
        }),
        None => Box::new(compiled.positive.clone()),
    };
    let score: Option<Box<dyn RowScore + '_>> = compiled.score.as_ref().map(|s| match outputs {
        Some(outputs) => Box::new(ScoreOnPredictions { score: s, outputs }) as Box<dyn RowScore>,
        None => Box::new(s.clone()),
    });
    let calibration: Option<Box<dyn RowTest + '_>> =
        compiled.calibration.as_ref().map(|c| match outputs {
            Some(outputs) => Box::new(OnPredictions {
                predicate: c,
                outputs,
            }) as Box<dyn RowTest>,
            None => Box::new(c.clone()),
        });

    let mut base = AuditContext::new(
        d,
        &compiled.privileged,
        positive.as_ref(),
        &compiled.truth,
        compiled.epsilon,
    )?;
    if let Some(s) = &score {
        base = base.with_score(s.as_ref());
    }

    compiled
        .measures
        .par_iter()
        .map(|&id| {
            let override_ = compiled.measure_epsilon.get(&id).copied();
            if let Some(reason) = unavailable_reason(id, compiled) {
                let eps = if id.is_balance() {
                    override_
                } else {
                    Some(override_.unwrap_or(compiled.epsilon))
                };
                return Ok(MeasureResult::undefined(id, eps, reason));
            }
            let ctx = match override_ {
                Some(t) if id.is_balance() => base.with_balance_epsilon(t)?,
                Some(e) => base.with_epsilon(e)?,
                None => base,
            };
            let extra: Option<&dyn RowTest> = if id.needs_legitimate() {
                compiled.legitimate.as_ref().map(|l| l as &dyn RowTest)
            } else if id.needs_calibration() {
                calibration.as_deref()
            } else {
                None
            };
            Ok(evaluate_measure(id, &ctx, extra)?)
        })
        .collect()
}

fn summarize(
    config: &AuditConfig,
    compiled: &CompiledConfig,
    d: &Dataset,
    source: &PredictionSource,
) -> ContextSummary {
    ContextSummary {
        privileged: compiled.privileged.predicate().to_string(),
        positive: compiled.positive.predicate().to_string(),
        truth: compiled.truth.predicate().to_string(),
        score: compiled.score.as_ref().map(|s| s.to_string()),
        legitimate: compiled.legitimate.as_ref().map(BoundSummary::of),
        calibration: compiled.calibration.as_ref().map(BoundSummary::of),
        epsilon: compiled.epsilon,
        measure_epsilon: compiled.measure_epsilon.clone(),
        source: source.mode().to_string(),
        model_command: match source {
            PredictionSource::ExternalModel(m) => Some(m.command.clone()),
            PredictionSource::CsvColumns => None,
        },
        dataset_path: config.dataset.as_ref().map(|p| p.display().to_string()),
        dataset: d.fingerprint(),
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn report_from(
    config: &AuditConfig,
    compiled: &CompiledConfig,
    d: &Dataset,
    source: &PredictionSource,
    outputs: Option<&[Row]>,
) -> Result<AuditReport, AuditError> {
    let results = evaluate(compiled, d, outputs)?;
    Ok(AuditReport {
        tool_version: TOOL_VERSION.to_string(),
        generated_at: timestamp(),
        context: summarize(config, compiled, d, source),
        results,
    })
}

/// Audits `d` under `config`, taking predictions from `source`.
pub fn run_audit(
    config: &AuditConfig,
    d: &Dataset,
    source: &PredictionSource,
) -> Result<AuditReport, AuditError> {
    let compiled = config.compile()?;
    check_columns(&compiled, d, source)?;
    let outputs = match source {
        PredictionSource::CsvColumns => None,
        PredictionSource::ExternalModel(m) => Some(model_outputs(m, d)?),
    };
    report_from(config, &compiled, d, source, outputs.as_deref())
}

/// One swept value: its group size and either a report or the error that
/// stopped it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: String,
    /// Rows whose sweep column equals `value`.
    pub group_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Audits once per configured sweep value. Problems with the configuration
/// as a whole are returned as errors; a failure while evaluating one value
/// is recorded in that value's entry and the others still run.
pub fn run_sweep(
    config: &AuditConfig,
    d: &Dataset,
    source: &PredictionSource,
) -> Result<Vec<SweepEntry>, AuditError> {
    let sweep = config.sweep.as_ref().ok_or(AuditError::NoSweep)?;
    if !d.header().contains(&sweep.column) {
        return Err(AuditError::SweepColumn(sweep.column.clone()));
    }

    let compiled: Vec<CompiledConfig> = sweep
        .values
        .iter()
        .map(|v| config.compile_with(Some(&sweep.privileged_for(v))))
        .collect::<Result<_, _>>()?;
    check_columns(&compiled[0], d, source)?;

    let shared = match source {
        PredictionSource::ExternalModel(m) if !m.process_per_value => Some(model_outputs(m, d)?),
        _ => None,
    };

    let entries = sweep
        .values
        .par_iter()
        .zip(compiled.par_iter())
        .map(|(value, compiled)| {
            let group_size = d
                .rows()
                .iter()
                .filter(|r| r.get(&sweep.column) == Some(value.as_str()))
                .count() as u64;
            let outcome = match (source, &shared) {
                (PredictionSource::ExternalModel(m), None) => model_outputs(m, d)
                    .and_then(|o| report_from(config, compiled, d, source, Some(&o))),
                (_, shared) => report_from(config, compiled, d, source, shared.as_deref()),
            };
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepEntry {
                value: value.clone(),
                group_size,
                report,
                error,
            }
        })
        .collect();
    Ok(entries)
}

fn line_label(id: MeasureId, line: &str, lines: usize) -> String {
    if lines <= 1 {
        return id.title().to_string();
    }
    let suffix = match line {
        "true_positive" => "true positive",
        "false_positive" => "false positive",
        "ppv" => "PPV",
        "npv" => "NPV / true negative",
        other => other,
    };
    format!("{} ({suffix})", id.title())
}

/// Two decimals, or two significant digits for small magnitudes.
pub fn short_number(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || a >= 0.01 || !a.is_finite() {
        format!("{x:.2}")
    } else {
        let digits = (1 - a.log10().floor() as i32).max(2) as usize;
        format!("{x:.digits$}")
    }
}

fn threshold_text(t: f64) -> String {
    format!("{}", (t * 1e10).round() / 1e10)
}

fn criterion_text(r: &MeasureResult, value: Option<f64>) -> String {
    let Some(v) = value else {
        return "undefined".to_string();
    };
    match r.epsilon {
        Some(eps) if r.measure == MeasureId::DisparateImpact => {
            format!("{} > {}", short_number(v), threshold_text(1.0 - eps))
        }
        Some(eps) => format!("{} < {}", short_number(v), threshold_text(eps)),
        None => short_number(v),
    }
}

/// One table row per measure line: label, criterion, verdict, note.
fn table_rows(results: &[MeasureResult]) -> Vec<[String; 4]> {
    let mut rows = Vec::new();
    for r in results {
        let note = r.reason.clone().unwrap_or_default();
        if r.values.is_empty() {
            rows.push([
                r.measure.title().to_string(),
                "undefined".to_string(),
                r.verdict().to_string(),
                note,
            ]);
            continue;
        }
        for v in &r.values {
            rows.push([
                line_label(r.measure, &v.name, r.values.len()),
                criterion_text(r, v.value),
                r.verdict().to_string(),
                note.clone(),
            ]);
        }
    }
    rows
}

pub fn render_table(results: &[MeasureResult]) -> String {
    let header = ["Fairness measure", "Criterion", "Result", "Note"];
    let rows = table_rows(results);
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 4]| {
        let text = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ");
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line([&rule[0], &rule[1], &rule[2], &rule[3]]);
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}

pub fn emit_report(report: &AuditReport, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        OutputFormat::Table => render_table(&report.results),
    }
}

pub fn emit_sweep(entries: &[SweepEntry], column: &str, format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(entries).expect("sweep serializes");
            s.push('\n');
            s
        }
        OutputFormat::Table => {
            let mut out = String::new();
            for (i, e) in entries.iter().enumerate() {
                if i > 0 {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {column} = {} ({} rows)", e.value, e.group_size);
                match (&e.report, &e.error) {
                    (Some(r), _) => out.push_str(&render_table(&r.results)),
                    (None, Some(err)) => {
                        let _ = writeln!(out, "error: {err}");
                    }
                    (None, None) => {}
                }
            }
            out
        }
    }
}

/// Long-format CSV for charting: `group,measure,value,passed`. Multi-line
/// measures appear as `measure/line`; undefined values are empty cells.
pub fn emit_plot_data(entries: &[SweepEntry]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "measure", "value", "passed"])
        .expect("in-memory write");
    for e in entries {
        let Some(report) = &e.report else { continue };
        for r in &report.results {
            let verdict = r.verdict().to_string();
            if r.values.is_empty() {
                w.write_record([e.value.as_str(), r.measure.name(), "", &verdict])
                    .expect("in-memory write");
            }
            for v in &r.values {
                let measure = if r.values.len() > 1 {
                    format!("{}/{}", r.measure.name(), v.name)
                } else {
                    r.measure.name().to_string()
                };
                let value = v.value.map(|x| x.to_string()).unwrap_or_default();
                w.write_record([e.value.as_str(), &measure, &value, &verdict])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}
