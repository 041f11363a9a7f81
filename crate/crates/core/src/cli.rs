//! Command-line front end.
//!
//! Exit codes: 0 when the run completes, whatever the verdicts; 1 with
//! `--fail-on-violation` when some selected measure fails; 2 on
//! configuration, I/O or model protocol errors.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::audit::{emit_plot_data, emit_report, emit_sweep, run_audit, run_sweep, AuditError};
use crate::config::{
    load_config, AuditConfig, ConfigError, OutputFormat, SourceConfig, SweepDirection, SweepSpec,
};
use crate::dataset::{load_csv, LoadError};
use crate::dsl::Literal;
use crate::measures::{MeasureId, UnknownMeasure};
use crate::model::ModelConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "fairaudit",
    version,
    about = "Group fairness audits over tabular predictions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run every selected measure once.
    Audit(RunArgs),
    /// Run the audit once per value of a column.
    Sweep(RunArgs),
    /// Validate the configuration (and the dataset header, if given) without auditing.
    CheckConfig(RunArgs),
}

impl Command {
    fn args(&self) -> &RunArgs {
        match self {
            Command::Audit(a) | Command::Sweep(a) | Command::CheckConfig(a) => a,
        }
    }
}

/// Every flag overrides the matching config file field.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "R")]
    pub epsilon: Option<f64>,
    #[arg(long, value_name = "EXPR")]
    pub privileged: Option<String>,
    #[arg(long, value_name = "EXPR")]
    pub positive: Option<String>,
    #[arg(long, value_name = "EXPR")]
    pub truth: Option<String>,
    #[arg(long, value_name = "EXPR")]
    pub score: Option<String>,
    #[arg(long, value_name = "EXPR")]
    pub legitimate: Option<String>,
    #[arg(long, value_name = "CSV")]
    pub legitimate_args: Option<String>,
    #[arg(long, value_name = "EXPR")]
    pub calibration: Option<String>,
    #[arg(long, value_name = "CSV")]
    pub calibration_args: Option<String>,
    /// Comma-separated measure names, e.g. `disparate_impact,equalized_odds`.
    #[arg(long, value_name = "LIST")]
    pub measures: Option<String>,
    /// Threshold override for one measure, `NAME=VALUE`; repeatable.
    #[arg(long, value_name = "NAME=VALUE")]
    pub measure_epsilon: Vec<String>,
    /// Predictor command line, split like a POSIX shell would.
    #[arg(long, value_name = "CMD")]
    pub model: Option<String>,
    /// Handshake and per-batch deadline for the model, in seconds.
    #[arg(long, value_name = "SECS")]
    pub model_timeout: Option<f64>,
    /// Sweeps: one model process per value instead of one shared run.
    #[arg(long)]
    pub model_per_value: bool,
    #[arg(long, value_name = "NAME")]
    pub sweep_column: Option<String>,
    #[arg(long, value_name = "CSV")]
    pub sweep_values: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub sweep_direction: Option<SweepDirection>,
    #[arg(long, value_name = "FORMAT")]
    pub format: Option<OutputFormat>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub plot_out: Option<PathBuf>,
    #[arg(long)]
    pub fail_on_violation: bool,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

/// Splits one CSV record, so values may be quoted to contain commas.
fn split_csv(text: &str) -> Result<Vec<String>, CliError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut record = csv::StringRecord::new();
    match reader.read_record(&mut record) {
        Ok(true) => Ok(record.iter().map(str::to_string).collect()),
        Ok(false) => Ok(Vec::new()),
        Err(e) => Err(CliError::Usage(format!("cannot split {text:?}: {e}"))),
    }
}

fn literal_args(text: &str) -> Result<Vec<Literal>, CliError> {
    Ok(split_csv(text)?
        .iter()
        .map(|a| Literal::from_arg(a))
        .collect())
}

/// Applies command-line overrides on top of a config.
pub fn merge(mut config: AuditConfig, args: &RunArgs) -> Result<AuditConfig, CliError> {
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &args.$field {
                config.$field = Some(v.clone());
            }
        };
    }
    set!(dataset);
    set!(privileged);
    set!(positive);
    set!(truth);
    set!(score);
    set!(legitimate);
    set!(calibration);
    set!(out);
    set!(plot_out);
    if let Some(e) = args.epsilon {
        config.epsilon = e;
    }
    if let Some(a) = &args.legitimate_args {
        config.legitimate_args = literal_args(a)?;
    }
    if let Some(a) = &args.calibration_args {
        config.calibration_args = literal_args(a)?;
    }
    if let Some(list) = &args.measures {
        let ids = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse::<MeasureId>)
            .collect::<Result<Vec<_>, UnknownMeasure>>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        config.measures = Some(ids);
    }
    for item in &args.measure_epsilon {
        let (name, value) = item.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "--measure-epsilon expects NAME=VALUE, got {item:?}"
            ))
        })?;
        let id: MeasureId = name
            .parse()
            .map_err(|e: UnknownMeasure| CliError::Usage(e.to_string()))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("bad threshold in {item:?}")))?;
        config.measure_epsilon.insert(id, value);
    }
    if let Some(cmd) = &args.model {
        let command = shlex::split(cmd)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| CliError::Usage(format!("cannot split model command {cmd:?}")))?;
        config.source = match config.source {
            SourceConfig::Model(m) => SourceConfig::Model(ModelConfig { command, ..m }),
            SourceConfig::Csv => SourceConfig::Model(ModelConfig::new(command)),
        };
    }
    if let SourceConfig::Model(m) = &mut config.source {
        if let Some(t) = args.model_timeout {
            m.handshake_timeout_secs = t;
            m.request_timeout_secs = t;
        }
        if args.model_per_value {
            m.process_per_value = true;
        }
    } else if args.model_timeout.is_some() || args.model_per_value {
        return Err(CliError::Usage(
            "model options given without a model".into(),
        ));
    }
    if args.sweep_column.is_some() || args.sweep_values.is_some() || args.sweep_direction.is_some()
    {
        let mut sweep = config.sweep.take().unwrap_or(SweepSpec {
            column: String::new(),
            values: Vec::new(),
            direction: SweepDirection::default(),
        });
        if let Some(c) = &args.sweep_column {
            sweep.column = c.clone();
        }
        if let Some(v) = &args.sweep_values {
            sweep.values = split_csv(v)?;
        }
        if let Some(d) = args.sweep_direction {
            sweep.direction = d;
        }
        config.sweep = Some(sweep);
    }
    if let Some(f) = args.format {
        config.format = f;
    }
    if args.fail_on_violation {
        config.fail_on_violation = true;
    }
    Ok(config)
}

/// The config file (if any) with flags applied.
pub fn effective_config(args: &RunArgs) -> Result<AuditConfig, CliError> {
    let base = match &args.config {
        Some(path) => load_config(path)?,
        None => AuditConfig::default(),
    };
    merge(base, args)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Write {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Write {
                    path: PathBuf::from("<stdout>"),
                    source,
                })
        }
    }
}

fn dataset_path(config: &AuditConfig) -> Result<&Path, CliError> {
    config
        .dataset
        .as_deref()
        .ok_or(CliError::Config(ConfigError::Missing("dataset")))
}

fn execute(command: &Command) -> Result<u8, CliError> {
    let args = command.args();
    let config = effective_config(args)?;
    if args.dump_config {
        write_output(None, &format!("{}\n", config.to_json()))?;
        return Ok(EXIT_OK);
    }

    match command {
        Command::CheckConfig(_) => {
            let compiled = match &config.sweep {
                Some(s) => config.compile_with(Some(&s.privileged_for(&s.values[0])))?,
                None => config.compile()?,
            };
            if let Some(path) = &config.dataset {
                let d = load_csv(path)?;
                crate::audit::check_columns(&compiled, &d, &config.source.to_source())?;
                if let Some(s) = &config.sweep {
                    if !d.header().contains(&s.column) {
                        return Err(AuditError::SweepColumn(s.column.clone()).into());
                    }
                }
            }
            eprintln!(
                "config ok: {} measure(s) selected, source {}",
                compiled.measures.len(),
                config.source.to_source().mode()
            );
            Ok(EXIT_OK)
        }
        Command::Audit(_) => {
            let d = load_csv(dataset_path(&config)?)?;
            let report = run_audit(&config, &d, &config.source.to_source())?;
            write_output(config.out.as_deref(), &emit_report(&report, config.format))?;
            Ok(if config.fail_on_violation && report.any_failed() {
                EXIT_VIOLATION
            } else {
                EXIT_OK
            })
        }
        Command::Sweep(_) => {
            let sweep = config.sweep.as_ref().ok_or_else(|| {
                CliError::Usage("sweep needs --sweep-column and --sweep-values".into())
            })?;
            let d = load_csv(dataset_path(&config)?)?;
            let entries = run_sweep(&config, &d, &config.source.to_source())?;
            write_output(
                config.out.as_deref(),
                &emit_sweep(&entries, &sweep.column, config.format),
            )?;
            if let Some(p) = &config.plot_out {
                write_output(Some(p), &emit_plot_data(&entries))?;
            }
            let mut code = EXIT_OK;
            for e in &entries {
                if let Some(err) = &e.error {
                    eprintln!("fairaudit: {} = {}: {err}", sweep.column, e.value);
                    code = EXIT_ERROR;
                }
            }
            let failed = entries
                .iter()
                .filter_map(|e| e.report.as_ref())
                .any(|r| r.any_failed());
            if code == EXIT_OK && config.fail_on_violation && failed {
                code = EXIT_VIOLATION;
            }
            Ok(code)
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> u8 {
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fairaudit: error: {e}");
            EXIT_ERROR
        }
    }
}
