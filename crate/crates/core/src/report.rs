//! Result records and their CSV / JSON encodings.
//!
//! JSON output is a flat object with snake_case keys; floats are written with
//! 17 significant digits so that every value re-parses to the same `f64`.
//! CSV output has a header row, comma separators and LF line endings.

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::error::{Error, Result};

/// How a phonon number was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Rational spectral integration of the exact linear network.
    ExactSpectral,
    /// Lyapunov solve of the exact linear network.
    ExactLyapunov,
    /// Adaptive quadrature of the exact spectra.
    ExactQuadrature,
    /// Numeric Riccati fixed point plus exact variance-of-means solve.
    ExactRiccati,
    /// Truncated expansion in the small parameters.
    Perturbative,
    /// Closed-form optimum or bound.
    Formula,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ExactSpectral => "exact-spectral",
            Method::ExactLyapunov => "exact-lyapunov",
            Method::ExactQuadrature => "exact-quadrature",
            Method::ExactRiccati => "exact-riccati",
            Method::Perturbative => "perturbative",
            Method::Formula => "formula",
        }
    }
}

/// A small parameter that exceeds the threshold of the expansion using it.
/// Warning-grade: the value is still returned, tagged with this record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeViolation {
    pub parameter: String,
    pub value: f64,
    pub threshold: f64,
}

impl RegimeViolation {
    pub(crate) fn check(parameter: &str, value: f64, threshold: f64) -> Option<Self> {
        (value > threshold || value.is_nan()).then(|| Self {
            parameter: parameter.to_string(),
            value,
            threshold,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoolingReport {
    pub nbar: f64,
    pub x2: Option<f64>,
    pub p2: Option<f64>,
    pub method: Method,
    /// Small parameters `eps1`..`eps6` that apply to the controller.
    pub epsilons: BTreeMap<String, f64>,
    pub warnings: Vec<RegimeViolation>,
    /// n_T / n̄ where a formula defines it.
    pub cooling_factor: Option<f64>,
    /// Formula constants and side values (`c`, `kappa_hat`, ...).
    pub extras: BTreeMap<String, f64>,
}

impl CoolingReport {
    pub(crate) fn new(nbar: f64, method: Method) -> Self {
        Self {
            nbar,
            x2: None,
            p2: None,
            method,
            epsilons: BTreeMap::new(),
            warnings: Vec::new(),
            cooling_factor: None,
            extras: BTreeMap::new(),
        }
    }

    pub(crate) fn with_moments(x2: f64, p2: f64, nbar: f64, method: Method) -> Self {
        Self {
            x2: Some(x2),
            p2: Some(p2),
            ..Self::new(nbar, method)
        }
    }

    pub fn is_valid_regime(&self) -> bool {
        self.warnings.is_empty()
    }

    /// Flattened `(key, value)` view used by the CSV and JSON writers.
    pub fn flat_fields(&self, prefix: &str) -> Vec<(String, Value)> {
        let mut out = vec![
            (format!("{prefix}nbar"), Value::Num(self.nbar)),
            (
                format!("{prefix}method"),
                Value::Str(self.method.as_str().into()),
            ),
        ];
        if let (Some(x2), Some(p2)) = (self.x2, self.p2) {
            out.push((format!("{prefix}x2"), Value::Num(x2)));
            out.push((format!("{prefix}p2"), Value::Num(p2)));
        }
        if let Some(r) = self.cooling_factor {
            out.push((format!("{prefix}cooling_factor"), Value::Num(r)));
        }
        for (k, v) in &self.epsilons {
            out.push((format!("{prefix}{k}"), Value::Num(*v)));
        }
        for (k, v) in &self.extras {
            out.push((format!("{prefix}{k}"), Value::Num(*v)));
        }
        out.push((
            format!("{prefix}regime_ok"),
            Value::Bool(self.warnings.is_empty()),
        ));
        out
    }
}

/// Scalar cell of a flat record.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Int(i64),
    Str(String),
    Bool(bool),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Num(x) => serde_json::Number::from_f64(*x)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Bool(b) => serde_json::Value::Bool(*b),
        }
    }

    fn to_cell(&self) -> String {
        match self {
            Value::Num(x) => format_f64(*x),
            Value::Int(i) => i.to_string(),
            Value::Str(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

/// Formats a float with 17 significant digits (`d.dddddddddddddddde±x`).
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

struct SigDigits;

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }
}

/// Serializes any value as compact JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Encodes a flat record as a single JSON object, preserving field order.
pub fn flat_json(fields: &[(String, Value)]) -> Result<String> {
    let mut map = serde_json::Map::new();
    for (k, v) in fields {
        map.insert(k.clone(), v.to_json());
    }
    to_json_string(&serde_json::Value::Object(map))
}

/// Writes rows of flat records as CSV. All rows must share the first row's keys.
pub fn write_csv<W: Write>(out: W, rows: &[Vec<(String, Value)>]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let io_err = |e: csv::Error| Error::Parse(e.to_string());
    if let Some(first) = rows.first() {
        wtr.write_record(first.iter().map(|(k, _)| k.as_str()))
            .map_err(io_err)?;
        for row in rows {
            if row.len() != first.len() || row.iter().zip(first).any(|(a, b)| a.0 != b.0) {
                return Err(Error::Parse("CSV rows have differing columns".into()));
            }
            wtr.write_record(row.iter().map(|(_, v)| v.to_cell()))
                .map_err(io_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}

pub fn csv_string(rows: &[Vec<(String, Value)>]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses a flat JSON object into `key → Value`; nested values are rejected.
pub fn parse_flat_json(text: &str) -> Result<BTreeMap<String, Value>> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("expected a JSON object".into()))?;
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        let val = match v {
            serde_json::Value::Number(n) => match (n.as_i64(), n.as_f64()) {
                (Some(i), _) if !n.is_f64() => Value::Int(i),
                (_, Some(x)) => Value::Num(x),
                _ => return Err(Error::Parse(format!("unrepresentable number for `{k}`"))),
            },
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Null => Value::Num(f64::NAN),
            _ => return Err(Error::Parse(format!("`{k}` is not a scalar"))),
        };
        out.insert(k.clone(), val);
    }
    Ok(out)
}
