//! Prediction sources: columns already in the dataset, or an external
//! predictor process spoken to over line-delimited JSON.
//!
//! Protocol, one JSON object per `\n`-terminated UTF-8 line:
//!
//! ```text
//! child  → {"ready": true}                                  once, before any request
//! parent → {"id": 1, "row": {"race": "Asian", ...}}
//! child  → {"id": 1, "prediction": "7"}                      string, number or boolean
//! ```
//!
//! Requests go out in batches; the child answers each batch in request
//! order. Ids increase strictly across the life of a handle. Unknown
//! response fields are ignored.

use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dataset::Row;
use crate::dsl::{BoundPredicate, EvalError, ScoreExpr};
use crate::measures::{RowScore, RowTest};

/// Column under which a model's output is exposed to positive, score and
/// calibration expressions in model mode.
pub const PREDICTION_COLUMN: &str = "prediction";

const STDERR_TAIL: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Program and arguments.
    pub command: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub handshake_timeout_secs: f64,
    /// Deadline for each request batch.
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Sweeps: spawn one process per sweep value instead of querying once
    /// and sharing the predictions.
    #[serde(default)]
    pub process_per_value: bool,
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_batch_size() -> usize {
    256
}

impl ModelConfig {
    pub fn new<I, S>(command: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ModelConfig {
            command: command.into_iter().map(Into::into).collect(),
            handshake_timeout_secs: default_timeout_secs(),
            request_timeout_secs: default_timeout_secs(),
            batch_size: default_batch_size(),
            process_per_value: false,
        }
    }

    fn handshake_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.handshake_timeout_secs.max(0.0))
    }

    fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.max(0.0))
    }
}

/// Where Ŷ and V̂ come from for one audit run.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSource {
    /// Positive, score and calibration expressions read dataset rows.
    CsvColumns,
    /// They read each row's model output through [`PREDICTION_COLUMN`].
    ExternalModel(ModelConfig),
}

impl PredictionSource {
    pub fn mode(&self) -> &'static str {
        match self {
            PredictionSource::CsvColumns => "csv",
            PredictionSource::ExternalModel(_) => "model",
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty model command")]
    EmptyCommand,
    #[error("cannot start {program:?}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model handshake failed: {detail}")]
    Handshake { detail: String },
    #[error("malformed response line {line:?}: {detail}")]
    Malformed { line: String, detail: String },
    #[error("response id {found} does not match request id {expected}")]
    IdMismatch { expected: u64, found: u64 },
    #[error("model process exited ({status}){}", stderr_suffix(.stderr))]
    Exited { status: String, stderr: Vec<String> },
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("model protocol i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn stderr_suffix(lines: &[String]) -> String {
    if lines.is_empty() {
        String::new()
    } else {
        format!("; stderr: {}", lines.join(" | "))
    }
}

/// One model output, kept opaque until a positive or score expression
/// interprets it.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Text(String),
    Number(serde_json::Number),
    Bool(bool),
}

impl Prediction {
    fn from_json(value: Value) -> Option<Self> {
        match value {
            Value::String(s) => Some(Prediction::Text(s)),
            Value::Number(n) => Some(Prediction::Number(n)),
            Value::Bool(b) => Some(Prediction::Bool(b)),
            _ => None,
        }
    }

    /// The cell text expressions see: strings verbatim, numbers in their
    /// JSON spelling, booleans as `true` / `false`.
    pub fn as_cell(&self) -> String {
        self.to_string()
    }

    pub fn to_row(&self) -> Row {
        Row::from_pairs([(PREDICTION_COLUMN, self.as_cell())]).expect("single column")
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Text(s) => f.write_str(s),
            Prediction::Number(n) => write!(f, "{n}"),
            Prediction::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Response {
    id: u64,
    prediction: Option<Value>,
}

/// A running predictor process with an open protocol channel.
pub struct ModelHandle {
    child: Child,
    requests: Option<Sender<Vec<u8>>>,
    lines: Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<VecDeque<String>>>,
    next_id: u64,
    config: ModelConfig,
}

impl ModelHandle {
    /// Spawns the predictor and waits for its readiness line.
    pub fn start(config: &ModelConfig) -> Result<Self, ModelError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or(ModelError::EmptyCommand)?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| ModelError::Spawn {
                program: program.clone(),
                source,
            })?;

        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take().expect("piped stdin");
        let stderr_pipe = child.stderr.take().expect("piped stderr");

        let (line_tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if line_tx.send(line).is_err() || stop {
                    break;
                }
            }
        });

        let stderr = Arc::new(Mutex::new(VecDeque::new()));
        let tail = Arc::clone(&stderr);
        thread::spawn(move || {
            for line in BufReader::new(stderr_pipe).lines().map_while(Result::ok) {
                let mut tail = tail.lock().unwrap_or_else(|e| e.into_inner());
                if tail.len() == STDERR_TAIL {
                    tail.pop_front();
                }
                tail.push_back(line);
            }
        });

        let (request_tx, request_rx) = mpsc::channel::<Vec<u8>>();
        thread::spawn(move || write_requests(stdin, request_rx));

        let mut handle = ModelHandle {
            child,
            requests: Some(request_tx),
            lines,
            stderr,
            next_id: 1,
            config: config.clone(),
        };
        handle.handshake()?;
        Ok(handle)
    }

    fn handshake(&mut self) -> Result<(), ModelError> {
        let timeout = self.config.handshake_timeout();
        let line = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ModelError::Io(e)),
            Err(RecvTimeoutError::Timeout) => {
                return Err(ModelError::Handshake {
                    detail: format!("no readiness line within {timeout:?}"),
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.exit_status();
                return Err(ModelError::Handshake {
                    detail: format!(
                        "process exited ({status}) before its readiness line{}",
                        stderr_suffix(&self.stderr_tail())
                    ),
                });
            }
        };
        let ready = serde_json::from_str::<Value>(&line)
            .ok()
            .and_then(|v| v.get("ready").and_then(Value::as_bool));
        if ready == Some(true) {
            Ok(())
        } else {
            Err(ModelError::Handshake {
                detail: format!("expected {{\"ready\": true}}, got {line:?}"),
            })
        }
    }

    /// Predictions aligned index-for-index with `rows`.
    pub fn predict_rows(&mut self, rows: &[Row]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(rows.len());
        for batch in rows.chunks(self.config.batch_size.max(1)) {
            self.predict_batch(batch, &mut out)?;
        }
        Ok(out)
    }

    fn predict_batch(
        &mut self,
        batch: &[Row],
        out: &mut Vec<Prediction>,
    ) -> Result<(), ModelError> {
        let first_id = self.next_id;
        let mut payload = Vec::new();
        for (offset, row) in batch.iter().enumerate() {
            let object: Map<String, Value> = row
                .iter()
                .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
                .collect();
            let request = serde_json::json!({ "id": first_id + offset as u64, "row": object });
            serde_json::to_writer(&mut payload, &request).expect("serializable");
            payload.push(b'\n');
        }
        self.next_id += batch.len() as u64;

        let sent = self
            .requests
            .as_ref()
            .map(|tx| tx.send(payload).is_ok())
            .unwrap_or(false);
        if !sent {
            return Err(self.exited());
        }

        let timeout = self.config.request_timeout();
        let deadline = Instant::now() + timeout;
        for offset in 0..batch.len() as u64 {
            let expected = first_id + offset;
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(ModelError::Io(e)),
                Err(RecvTimeoutError::Timeout) => return Err(ModelError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(self.exited()),
            };
            out.push(parse_response(&line, expected)?);
        }
        Ok(())
    }

    /// Closes the channel and waits for the child to exit.
    pub fn shutdown(mut self) -> Result<ExitStatus, ModelError> {
        self.requests.take();
        Ok(self.child.wait()?)
    }

    fn stderr_tail(&self) -> Vec<String> {
        // the reader thread may still be draining a just-exited child
        thread::sleep(Duration::from_millis(20));
        let tail = self.stderr.lock().unwrap_or_else(|e| e.into_inner());
        tail.iter().cloned().collect()
    }

    fn exit_status(&mut self) -> String {
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return status.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => return "still running, output closed".to_string(),
                Err(e) => return format!("status unknown: {e}"),
            }
        }
    }

    fn exited(&mut self) -> ModelError {
        ModelError::Exited {
            status: self.exit_status(),
            stderr: self.stderr_tail(),
        }
    }
}

impl Drop for ModelHandle {
    fn drop(&mut self) {
        self.requests.take();
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

fn write_requests(mut stdin: ChildStdin, requests: Receiver<Vec<u8>>) {
    for payload in requests {
        if stdin
            .write_all(&payload)
            .and_then(|_| stdin.flush())
            .is_err()
        {
            // the reader side reports the exit
            break;
        }
    }
}

fn parse_response(line: &str, expected: u64) -> Result<Prediction, ModelError> {
    let malformed = |detail: String| ModelError::Malformed {
        line: line.to_string(),
        detail,
    };
    let response: Response = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    if response.id != expected {
        return Err(ModelError::IdMismatch {
            expected,
            found: response.id,
        });
    }
    let value = response
        .prediction
        .ok_or_else(|| malformed("missing \"prediction\"".to_string()))?;
    Prediction::from_json(value)
        .ok_or_else(|| malformed("prediction must be a string, number or boolean".to_string()))
}

/// Starts the model, predicts every row, and shuts it down.
pub fn predict_all(config: &ModelConfig, rows: &[Row]) -> Result<Vec<Prediction>, ModelError> {
    let mut handle = ModelHandle::start(config)?;
    let predictions = handle.predict_rows(rows)?;
    handle.shutdown()?;
    Ok(predictions)
}

/// A predicate evaluated on the model output of the row at the same index.
pub struct OnPredictions<'a> {
    pub predicate: &'a BoundPredicate,
    pub outputs: &'a [Row],
}

impl RowTest for OnPredictions<'_> {
    fn test(&self, index: usize, _row: &Row) -> Result<bool, EvalError> {
        self.predicate.eval(&self.outputs[index])
    }
}

/// A score evaluated on the model output of the row at the same index.
pub struct ScoreOnPredictions<'a> {
    pub score: &'a ScoreExpr,
    pub outputs: &'a [Row],
}

impl RowScore for ScoreOnPredictions<'_> {
    fn score(&self, index: usize, _row: &Row) -> Result<f64, EvalError> {
        self.score.eval(&self.outputs[index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_parsing() {
        assert_eq!(
            parse_response(r#"{"id": 3, "prediction": "7", "extra": [1]}"#, 3).unwrap(),
            Prediction::Text("7".into())
        );
        assert_eq!(
            parse_response(r#"{"id": 3, "prediction": true}"#, 3).unwrap(),
            Prediction::Bool(true)
        );
        assert_eq!(
            parse_response(r#"{"id":3,"prediction":0.25}"#, 3)
                .unwrap()
                .as_cell(),
            "0.25"
        );
        assert!(matches!(
            parse_response(r#"{"id": 4, "prediction": 1}"#, 3),
            Err(ModelError::IdMismatch {
                expected: 3,
                found: 4
            })
        ));
        for bad in [
            "not json",
            r#"{"id": 3}"#,
            r#"{"prediction": 1}"#,
            r#"{"id": 3, "prediction": [1]}"#,
            r#"{"id": 3, "prediction": null}"#,
        ] {
            match parse_response(bad, 3) {
                Err(ModelError::Malformed { line, .. }) => assert_eq!(line, bad),
                other => panic!("{bad}: {other:?}"),
            }
        }
    }

    #[test]
    fn prediction_cells() {
        assert_eq!(
            Prediction::Bool(false).to_row().get(PREDICTION_COLUMN),
            Some("false")
        );
        assert_eq!(
            Prediction::Number(serde_json::Number::from(10)).as_cell(),
            "10"
        );
    }

    #[test]
    fn config_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"command": ["x"]}"#).unwrap();
        assert_eq!(c, ModelConfig::new(["x"]));
        assert_eq!(c.request_timeout(), Duration::from_secs(30));
    }

    #[test]
    fn empty_command() {
        assert!(matches!(
            ModelHandle::start(&ModelConfig::new(Vec::<String>::new())),
            Err(ModelError::EmptyCommand)
        ));
    }
}
