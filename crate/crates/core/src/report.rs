//! Deterministic JSON report emission.
//!
//! Reports are `serde_json` values with insertion-ordered maps, written by a
//! custom serializer that prints every float with 17 significant digits, so a
//! fixed seed yields byte-identical artifacts across runs.

use serde::Serialize;
use serde_json::Value;

use crate::error::Result;

/// Converts any serializable structure into an insertion-ordered JSON value.
/// Non-finite floats become `null` (the only values JSON cannot carry).
pub fn to_value<T: Serialize>(value: &T) -> Result<Value> {
    serde_json::to_value(value)
        .map_err(|e| crate::error::Error::Config(format!("report serialization: {e}")))
}

/// Serializes a JSON value with stable key order and 17-significant-digit
/// floats; integers print exactly.
pub fn to_json_string(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                let f = n.as_f64().unwrap_or(0.0);
                out.push_str(&format!("{f:.16e}"));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string escapes"));
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                write_value(item, indent + 1, out);
            }
            newline(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push('{');
            for (i, (key, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(indent + 1, out);
                out.push_str(&serde_json::to_string(key).expect("key escapes"));
                out.push_str(": ");
                write_value(item, indent + 1, out);
            }
            newline(indent, out);
            out.push('}');
        }
    }
}

fn newline(indent: usize, out: &mut String) {
    out.push('\n');
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Writes a report value to disk.
pub fn write_report(value: &Value, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_json_string(value))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_print_17_significant_digits() {
        let v = json!({"x": 0.1, "n": 3, "flag": true});
        let s = to_json_string(&v);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"n\": 3"), "{s}");
    }

    #[test]
    fn key_order_is_insertion_order() {
        let v = json!({"zebra": 1, "alpha": 2, "mid": 3});
        let s = to_json_string(&v);
        let z = s.find("zebra").unwrap();
        let a = s.find("alpha").unwrap();
        let m = s.find("mid").unwrap();
        assert!(z < a && a < m, "{s}");
    }

    #[test]
    fn identical_values_serialize_identically() {
        let v1 = json!({"a": [1.5, 2.25], "b": {"c": 0.3}});
        let v2 = json!({"a": [1.5, 2.25], "b": {"c": 0.3}});
        assert_eq!(to_json_string(&v1), to_json_string(&v2));
    }
}
