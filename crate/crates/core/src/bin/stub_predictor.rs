//! Reference predictor for model mode: answers each request with one column
//! of the row, optionally turned into a boolean. The misbehaviour flags
//! exist to exercise protocol error handling.

use std::io::{self, BufRead, BufWriter, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "fairaudit-stub-predictor", version)]
struct Args {
    /// Column whose value is returned.
    #[arg(long)]
    column: String,
    /// Return `true` iff the column, read as a number, is at least this.
    #[arg(long, conflicts_with = "equals")]
    threshold: Option<f64>,
    /// Return `true` iff the column equals this string.
    #[arg(long)]
    equals: Option<String>,
    /// Return numbers instead of strings when the cell parses as one.
    #[arg(long)]
    numeric: bool,

    /// Exit with status 0 before the readiness line.
    #[arg(long)]
    exit_before_ready: bool,
    /// Never print the readiness line.
    #[arg(long)]
    silent: bool,
    /// Become ready, then never answer.
    #[arg(long)]
    hang: bool,
    /// Answer with a wrong id.
    #[arg(long)]
    bad_id: bool,
    /// Answer with a line that is not JSON.
    #[arg(long)]
    garbage: bool,
    /// Exit with status 3 after this many answers.
    #[arg(long)]
    exit_after: Option<u64>,
}

fn answer(args: &Args, row: &Value) -> Result<Value, String> {
    let cell = row
        .get(&args.column)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("row has no column {:?}", args.column))?;
    if let Some(t) = args.threshold {
        let x: f64 = cell
            .trim()
            .parse()
            .map_err(|_| format!("{cell:?} is not a number"))?;
        return Ok(Value::Bool(x >= t));
    }
    if let Some(target) = &args.equals {
        return Ok(Value::Bool(cell == target));
    }
    if args.numeric {
        if let Ok(i) = cell.trim().parse::<i64>() {
            return Ok(json!(i));
        }
        if let Some(n) = cell
            .trim()
            .parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
        {
            return Ok(Value::Number(n));
        }
    }
    Ok(Value::String(cell.to_string()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.exit_before_ready {
        return ExitCode::SUCCESS;
    }
    if args.silent {
        loop {
            thread::sleep(Duration::from_secs(3600));
        }
    }

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    if writeln!(out, "{}", json!({"ready": true}))
        .and_then(|_| out.flush())
        .is_err()
    {
        return ExitCode::FAILURE;
    }

    let mut answered = 0u64;
    for line in io::stdin().lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        if args.hang {
            continue;
        }
        if args.exit_after == Some(answered) {
            eprintln!("stub: exiting after {answered} answers");
            return ExitCode::from(3);
        }
        let request: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("stub: bad request: {e}");
                return ExitCode::FAILURE;
            }
        };
        let id = request.get("id").and_then(Value::as_u64).unwrap_or(0);
        let response = if args.garbage {
            "this is not json".to_string()
        } else {
            let prediction = match answer(&args, request.get("row").unwrap_or(&Value::Null)) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("stub: {e}");
                    return ExitCode::FAILURE;
                }
            };
            let id = if args.bad_id { id + 1000 } else { id };
            json!({"id": id, "prediction": prediction}).to_string()
        };
        answered += 1;
        // flush per line so a partially answered batch is visible
        if writeln!(out, "{response}")
            .and_then(|_| out.flush())
            .is_err()
        {
            break;
        }
    }
    ExitCode::SUCCESS
}
