use serde_json::{json, Value};

use crate::args::Format;

pub const CLI_SCHEMA: &str = "rigorbench_cli_v1";

/// Result of one subcommand. Text output is a flattening of `result`,
/// optionally followed by a rendered table derived from the same data.
#[derive(Debug)]
pub struct Output {
    pub command: &'static str,
    pub seed: u64,
    pub result: Value,
    pub display: Option<String>,
    /// Findings that should fail the process.
    pub failed: bool,
}

impl Output {
    pub fn new(command: &'static str, seed: u64, result: Value) -> Self {
        Self { command, seed, result, display: None, failed: false }
    }

    pub fn with_display(mut self, display: String) -> Self {
        self.display = Some(display);
        self
    }

    pub fn failing(mut self, failed: bool) -> Self {
        self.failed = failed;
        self
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => {
                let env = json!({
                    "schema": CLI_SCHEMA,
                    "command": self.command,
                    "seed": self.seed,
                    "result": self.result,
                });
                serde_json::to_string_pretty(&env).expect("json value serializes") + "\n"
            }
            Format::Text => {
                let mut out = format!("# rigorbench {} (seed {})\n", self.command, self.seed);
                let mut lines = Vec::new();
                flatten("", &self.result, &mut lines);
                for (k, v) in lines {
                    out += &format!("{k}: {v}\n");
                }
                if let Some(d) = &self.display {
                    out += "\n";
                    out += d;
                    if !d.ends_with('\n') {
                        out.push('\n');
                    }
                }
                out
            }
        }
    }
}

/// Leaf paths of a JSON value, `a.b[2].c` style.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, x) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&p, x, out);
            }
        }
        Value::Array(a) if !a.is_empty() => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
