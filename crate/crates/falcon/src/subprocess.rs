//! External evaluators as child processes. Each call writes a JSON input
//! file, invokes the command with the file path appended as the last
//! argument, and parses one JSON object from the child's standard output:
//!
//! input:  `{ "design": { "<dimension>": value, ... }, "budget": { "kind": "warmup"|"full", "units": n } }`
//! output: `{ "score": s, "instance_correct": [0, 1, ...] }` (bit list optional)
//!
//! Inactive dependent dimensions are absent from the design object. A
//! nonzero exit, a timeout, or malformed output marks the design failed;
//! the search treats that as a failed evaluation rather than an abort.

use std::io::Read;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use falcon_core::eval::{EvalError, EvaluationRecord};
use falcon_core::{Budget, BudgetKind, Design, Evaluator, SpaceIndex};
use falcon_core::space::DimensionKind;
use serde_json::{json, Map, Number, Value};

use crate::AppError;

pub const TIMEOUT_ENV: &str = "FALCON_EVAL_TIMEOUT_SECS";
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

pub struct SubprocessEvaluator<'a> {
    index: &'a SpaceIndex,
    program: String,
    args: Vec<String>,
    timeout: Duration,
}

impl<'a> SubprocessEvaluator<'a> {
    /// `command` is whitespace-split: first token the program, the rest
    /// fixed arguments. The timeout comes from `FALCON_EVAL_TIMEOUT_SECS`
    /// (seconds, default 3600).
    pub fn new(index: &'a SpaceIndex, command: &str) -> Result<Self, AppError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| AppError::config("exec evaluator: empty command"))?;
        let timeout = match std::env::var(TIMEOUT_ENV) {
            Ok(text) => Duration::from_secs(text.parse().map_err(|_| {
                AppError::config(format!("{TIMEOUT_ENV}={text:?} is not a whole number of seconds"))
            })?),
            Err(_) => DEFAULT_TIMEOUT,
        };
        Ok(SubprocessEvaluator { index, program, args: parts.collect(), timeout })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn run_child(&self, input_path: &Path) -> Result<Vec<u8>, EvalError> {
        let fail = |reason: String| EvalError::Failed { reason };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(input_path)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn {}: {e}", self.program)))?;

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(fail(format!(
                            "timed out after {:?} (set {TIMEOUT_ENV} to adjust)",
                            self.timeout
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(fail(format!("wait: {e}"))),
            }
        };

        let mut stdout = Vec::new();
        if let Some(mut pipe) = child.stdout.take() {
            let _ = pipe.read_to_end(&mut stdout);
        }
        if !status.success() {
            let mut stderr = String::new();
            if let Some(mut pipe) = child.stderr.take() {
                let _ = pipe.read_to_string(&mut stderr);
            }
            let snippet: String = stderr.chars().take(200).collect();
            return Err(fail(format!("exit status {status}: {}", snippet.trim())));
        }
        Ok(stdout)
    }
}

/// The design as one JSON object, dimensions in declared order, inactive
/// dimensions absent.
pub fn design_to_json(index: &SpaceIndex, design: &Design) -> Value {
    let space = index.space();
    let mut map = Map::new();
    for (i, dim) in space.dimensions().iter().enumerate() {
        let Some(choice) = design.choice(i) else { continue };
        let value = match &dim.kind {
            DimensionKind::Numerical(choices) => {
                Value::Number(Number::from_f64(choices[choice as usize]).expect("finite choice"))
            }
            DimensionKind::Categorical(choices) => {
                Value::String(choices[choice as usize].clone())
            }
        };
        map.insert(dim.name.clone(), value);
    }
    Value::Object(map)
}

fn budget_to_json(budget: Budget) -> Value {
    let kind = match budget.kind {
        BudgetKind::Warmup => "warmup",
        BudgetKind::Full => "full",
    };
    json!({ "kind": kind, "units": budget.units })
}

fn parse_bit(value: &Value) -> Option<bool> {
    match value {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_u64() {
            Some(0) => Some(false),
            Some(1) => Some(true),
            _ => None,
        },
        _ => None,
    }
}

fn parse_output(bytes: &[u8]) -> Result<(f64, Option<Vec<bool>>), EvalError> {
    let fail = |reason: String| EvalError::Failed { reason };
    let value: Value = serde_json::from_slice(bytes)
        .map_err(|e| fail(format!("bad output JSON: {e}")))?;
    let object = value.as_object().ok_or_else(|| fail("output is not an object".into()))?;
    let score = object
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| fail("output lacks a numeric score".into()))?;
    let bits = match object.get("instance_correct") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut bits = Vec::with_capacity(items.len());
            for item in items {
                bits.push(parse_bit(item).ok_or_else(|| {
                    fail(format!("instance_correct entry {item} is not 0/1"))
                })?);
            }
            Some(bits)
        }
        Some(other) => return Err(fail(format!("instance_correct is {other}, not a list"))),
    };
    Ok((score, bits))
}

impl Evaluator for SubprocessEvaluator<'_> {
    fn evaluate(&self, design: &Design, budget: Budget) -> Result<EvaluationRecord, EvalError> {
        let fail = |reason: String| EvalError::Failed { reason };
        let input = json!({
            "design": design_to_json(self.index, design),
            "budget": budget_to_json(budget),
        });
        let mut file = tempfile::Builder::new()
            .prefix("falcon-eval-")
            .suffix(".json")
            .tempfile()
            .map_err(|e| fail(format!("temp file: {e}")))?;
        file.write_all(input.to_string().as_bytes())
            .map_err(|e| fail(format!("temp file: {e}")))?;
        file.flush().map_err(|e| fail(format!("temp file: {e}")))?;

        let started = Instant::now();
        let stdout = self.run_child(file.path())?;
        let (score, instance_correct) = parse_output(&stdout)?;
        Ok(EvaluationRecord {
            design_id: design.id,
            score,
            instance_correct,
            budget,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_parsing_accepts_bits_and_rejects_garbage() {
        let (score, bits) = parse_output(br#"{"score": 0.5}"#).unwrap();
        assert_eq!(score, 0.5);
        assert!(bits.is_none());

        let (_, bits) =
            parse_output(br#"{"score": 1.0, "instance_correct": [0, 1, true, false]}"#).unwrap();
        assert_eq!(bits.unwrap(), vec![false, true, true, false]);

        assert!(parse_output(b"not json").is_err());
        assert!(parse_output(br#"{"score": "high"}"#).is_err());
        assert!(parse_output(br#"{"score": 0.1, "instance_correct": [2]}"#).is_err());
    }
}
