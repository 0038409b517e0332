//! JSON and text rendering with 17 significant digits for every float.

use serde_json::Value;
use std::fmt::Write;

pub fn float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn number(n: &serde_json::Number) -> String {
    if n.is_f64() {
        float(n.as_f64().unwrap())
    } else {
        n.to_string()
    }
}

pub fn json(v: &Value) -> String {
    let mut s = String::new();
    write_json(v, 0, &mut s);
    s.push('\n');
    s
}

fn write_json(v: &Value, depth: usize, out: &mut String) {
    let pad = |d: usize| "  ".repeat(d);
    match v {
        Value::Number(n) => out.push_str(&number(n)),
        Value::Array(xs) if xs.iter().all(|x| !x.is_object() && !x.is_array()) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_json(x, depth, out);
            }
            out.push(']');
        }
        Value::Array(xs) => {
            out.push_str("[\n");
            for (i, x) in xs.iter().enumerate() {
                out.push_str(&pad(depth + 1));
                write_json(x, depth + 1, out);
                out.push_str(if i + 1 < xs.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                let _ = write!(out, "{}{}: ", pad(depth + 1), Value::String(k.clone()));
                write_json(x, depth + 1, out);
                out.push_str(if i + 1 < map.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(depth));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Compact single-line JSON, used for JSON-lines scan output.
pub fn json_line(v: &Value) -> String {
    match v {
        Value::Number(n) => number(n),
        Value::Array(xs) => format!("[{}]", xs.iter().map(json_line).collect::<Vec<_>>().join(",")),
        Value::Object(map) => format!(
            "{{{}}}",
            map.iter().map(|(k, x)| format!("{}:{}", Value::String(k.clone()), json_line(x))).collect::<Vec<_>>().join(",")
        ),
        other => other.to_string(),
    }
}

/// `path = value` lines, one per leaf.
pub fn text(v: &Value) -> String {
    let mut s = String::new();
    write_text(v, "", &mut s);
    s
}

fn write_text(v: &Value, prefix: &str, out: &mut String) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                write_text(x, &key(k), out);
            }
        }
        Value::Array(xs) if xs.iter().any(|x| x.is_object() || x.is_array()) => {
            for (i, x) in xs.iter().enumerate() {
                write_text(x, &format!("{prefix}[{i}]"), out);
            }
        }
        Value::Array(xs) => {
            let items: Vec<String> = xs.iter().map(leaf).collect();
            let _ = writeln!(out, "{prefix} = {}", items.join(" "));
        }
        x => {
            let _ = writeln!(out, "{prefix} = {}", leaf(x));
        }
    }
}

fn leaf(v: &Value) -> String {
    match v {
        Value::Number(n) => number(n),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(2.0).parse::<f64>().unwrap(), 2.0);
        let v = json!({"x": 1.0 / 3.0, "n": 3});
        let s = json(&v);
        assert!(s.contains("3.3333333333333331e-1"));
        assert!(s.contains("\"n\": 3"));
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["x"].as_f64().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn text_flattens_paths() {
        let v = json!({"a": {"b": [1, 2]}, "c": [{"d": "x"}]});
        assert_eq!(text(&v), "a.b = 1 2\nc[0].d = x\n");
    }
}
