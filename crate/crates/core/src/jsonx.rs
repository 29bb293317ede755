//! JSON serialization helpers for the line-delimited dump formats.
//!
//! Floats are written as decimal with 17 significant digits, enough to
//! round-trip any f64 exactly, so emitted files are byte-stable across runs.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

use crate::error::{Error, Result};

/// serde_json formatter printing every float with 17 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub struct SigDigits17;

impl Formatter for SigDigits17 {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serializes one value as a single JSON line (no trailing newline).
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits17);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Data(format!("serialize: {e}")))?;
    String::from_utf8(out).map_err(|e| Error::Data(format!("serialize produced non-utf8: {e}")))
}

/// Parses one JSON line, reporting the 1-based line number on failure.
pub fn from_json_line<T: serde::de::DeserializeOwned>(line: &str, line_no: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Data(format!("line {line_no}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_roundtrip_exactly() {
        let values = [1.25e-7, 0.1, std::f64::consts::PI, -3.9283710065919303e-4, 1.0 / 3.0];
        for v in values {
            let line = to_json_line(&v).unwrap();
            let back: f64 = from_json_line(&line, 1).unwrap();
            assert_eq!(back, v, "line {line}");
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = from_json_line::<f64>("not json", 7).unwrap_err();
        assert!(err.to_string().contains("line 7"));
    }
}
