//! Report envelope and file output.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

pub const SCHEMA: &str = "1";

/// How a finished analysis maps onto the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    Violated,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Clean => 0,
            Status::Violated => 1,
        }
    }

    pub fn from_violation(violated: bool) -> Self {
        if violated {
            Status::Violated
        } else {
            Status::Clean
        }
    }
}

pub struct Report {
    pub command: &'static str,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub body: Value,
    pub status: Status,
}

impl Report {
    pub fn new(command: &'static str, body: impl Serialize) -> Result<Self, String> {
        Ok(Report {
            command,
            model: None,
            seed: None,
            body: serde_json::to_value(body).map_err(|e| e.to_string())?,
            status: Status::Clean,
        })
    }

    pub fn model(mut self, name: &str) -> Self {
        self.model = Some(name.to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn status(mut self, status: Status) -> Self {
        self.status = status;
        self
    }

    /// The full document with sorted keys.
    pub fn to_value(&self) -> Value {
        canonical(json!({
            "schema": SCHEMA,
            "command": self.command,
            "model": self.model,
            "seed": self.seed,
            "probabilistic": any_probabilistic(&self.body),
            "violated": self.status == Status::Violated,
            "report": self.body,
        }))
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("JSON values serialize");
        s.push('\n');
        s
    }

    pub fn emit(&self, out: Option<&Path>) -> Result<(), String> {
        let text = self.render();
        match out {
            Some(path) => write_file(path, &text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), String> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// True when any nested object carries `"probabilistic": true`.
pub fn any_probabilistic(v: &Value) -> bool {
    match v {
        Value::Object(map) => {
            map.get("probabilistic") == Some(&Value::Bool(true)) || map.values().any(any_probabilistic)
        }
        Value::Array(items) => items.iter().any(any_probabilistic),
        _ => false,
    }
}

/// Recursively sorts object keys, independent of the map backing in use.
pub fn canonical(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect::<Map<_, _>>())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonical).collect()),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_has_schema() {
        let v = Report::new("validate", json!({})).unwrap().to_value();
        assert_eq!(v["schema"], "1");
        assert_eq!(v["probabilistic"], false);
        assert!(v["model"].is_null());
    }

    #[test]
    fn nested_probabilistic_surfaces() {
        let body = json!({"rows": [{"probabilistic": false}, {"inner": {"probabilistic": true}}]});
        assert!(any_probabilistic(&body));
        assert!(!any_probabilistic(&json!({"probabilistic": false})));
    }

    #[test]
    fn keys_are_sorted() {
        let text = Report::new("x", json!({"b": 1, "a": {"d": 2, "c": 3}})).unwrap().render();
        let a = text.find("\"a\"").unwrap();
        let b = text.find("\"b\"").unwrap();
        let c = text.find("\"c\"").unwrap();
        let d = text.find("\"d\"").unwrap();
        assert!(a < b && c < d);
    }
}
