//! Published JSON schemas, checked before any typed parsing.

use std::sync::OnceLock;

use jsonschema::error::ValidationErrorKind;
use jsonschema::{ValidationError, Validator};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const EXPERIMENT_SCHEMA: &str = include_str!("../../../schemas/experiment.schema.json");
pub const REPORT_SCHEMA: &str = include_str!("../../../schemas/report.schema.json");

fn compile(text: &str) -> Validator {
    let schema: Value = serde_json::from_str(text).expect("bundled schema is valid JSON");
    jsonschema::validator_for(&schema).expect("bundled schema compiles")
}

fn experiment() -> &'static Validator {
    static V: OnceLock<Validator> = OnceLock::new();
    V.get_or_init(|| compile(EXPERIMENT_SCHEMA))
}

fn report() -> &'static Validator {
    static V: OnceLock<Validator> = OnceLock::new();
    V.get_or_init(|| compile(REPORT_SCHEMA))
}

/// `/dataset/noise/rate` → `dataset.noise.rate`, `/model/hidden/1` → `model.hidden[1]`.
pub fn dotted_path(pointer: &str) -> String {
    let mut out = String::new();
    for seg in pointer.split('/').skip(1) {
        let seg = seg.replace("~1", "/").replace("~0", "~");
        if !seg.is_empty() && seg.bytes().all(|b| b.is_ascii_digit()) {
            out.push_str(&format!("[{seg}]"));
        } else {
            if !out.is_empty() {
                out.push('.');
            }
            out.push_str(&seg);
        }
    }
    if out.is_empty() {
        "(root)".to_string()
    } else {
        out
    }
}

/// Dotted path of the field an error is about. Missing and unexpected keys
/// are named themselves rather than their parent object.
fn error_path(e: &ValidationError<'_>) -> String {
    let mut pointer = e.instance_path().to_string();
    match e.kind() {
        ValidationErrorKind::Required { property } => {
            pointer.push('/');
            pointer.push_str(property.as_str().unwrap_or_default());
        }
        ValidationErrorKind::AdditionalProperties { unexpected } if !unexpected.is_empty() => {
            pointer.push('/');
            pointer.push_str(&unexpected[0]);
        }
        _ => {}
    }
    dotted_path(&pointer)
}

fn check(validator: &Validator, doc: &Value) -> CliResult<()> {
    // Report the deepest violation: it names the field rather than a parent.
    let worst = validator
        .iter_errors(doc)
        .map(|e| (error_path(&e), e.to_string()))
        .max_by_key(|(path, _)| path.matches(['.', '[']).count());
    match worst {
        None => Ok(()),
        Some((path, msg)) => Err(CliError::config(path, msg)),
    }
}

pub fn check_experiment(doc: &Value) -> CliResult<()> {
    check(experiment(), doc)
}

pub fn check_report(doc: &Value) -> CliResult<()> {
    check(report(), doc)
}
