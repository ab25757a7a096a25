//! JSON rendering of command results.

use daglattice::Error;
use ndarray::{Array2, Array3};
use serde::Serialize;
use serde_json::{json, Map, Value};

/// The single JSON object a command writes to stdout.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    pub inputs: Map<String, Value>,
    pub outputs: Map<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunReport {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            inputs: Map::new(),
            outputs: Map::new(),
            wall_time_ms: None,
            seed: None,
        }
    }

    pub fn input(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.inputs.insert(key.to_owned(), value.into());
        self
    }

    pub fn output(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.outputs.insert(key.to_owned(), value.into());
        self
    }

    pub fn render(&self, pretty: bool) -> String {
        let rendered = if pretty {
            serde_json::to_string_pretty(self)
        } else {
            serde_json::to_string(self)
        };
        rendered.expect("report values are plain JSON")
    }
}

/// A float as JSON. Infinities and NaN have no JSON number form and are
/// written as the strings `"inf"`, `"-inf"` and `"nan"`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn vector(xs: impl IntoIterator<Item = f64>) -> Value {
    Value::Array(xs.into_iter().map(num).collect())
}

pub fn matrix(m: &Array2<f64>) -> Value {
    Value::Array(m.rows().into_iter().map(|r| vector(r.iter().copied())).collect())
}

pub fn tensor3(t: &Array3<f64>) -> Value {
    Value::Array(t.outer_iter().map(|m| matrix(&m.to_owned())).collect())
}

/// Process exit codes.
pub mod exit {
    pub const INTERNAL: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const INFEASIBLE: u8 = 3;
    pub const SHAPE: u8 = 4;
}

/// A failed command: the exit code, a message for stderr and, optionally, a
/// report that still goes to stdout.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub report: Option<Box<RunReport>>,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            report: None,
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::Parse { .. } | Error::Io { .. } | Error::EmptyTarget | Error::InvalidArgument(_) => exit::PARSE,
            Error::InfeasibleTarget { .. } => exit::INFEASIBLE,
            Error::Dimension { .. }
            | Error::ShapeMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::TokenOutOfRange { .. }
            | Error::MissingHiddenStates
            | Error::CapExceeded { .. } => exit::SHAPE,
            _ => exit::INTERNAL,
        };
        Failure::new(code, err.to_string())
    }
}
