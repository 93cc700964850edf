//! CSV and JSON writers. Floats carry 17 significant digits.

use std::fs;
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u64 = 1;

/// `{:.16e}`, or `nan` / `inf` / `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

/// A JSON number with 17 significant digits; non-finite values become null.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(
            fmt_f64(x)
                .parse::<Number>()
                .expect("formatted float is a JSON number"),
        )
    } else {
        Value::Null
    }
}

/// Object holding `schema_version` and `fields`. Keys serialize sorted.
pub fn object(fields: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    for (k, v) in fields {
        map.insert(k.into(), v);
    }
    Value::Object(map)
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `# schema_version=1`, the header, then the rows, `\n`-terminated.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = format!("# schema_version={SCHEMA_VERSION}\n{header}\n");
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_seventeen_digits() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_f64(x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(json_f64(f64::INFINITY), Value::Null);
    }

    #[test]
    fn json_numbers_keep_their_digits() {
        let v = object(vec![("x", json_f64(0.1))]);
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"schema_version":1,"x":1.0000000000000001e-1}"#);
    }
}
