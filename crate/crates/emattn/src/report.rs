//! Report envelope shared by every CLI subcommand.
//!
//! A report is a fixed five-field document: tool version, subcommand name,
//! an echo of the resolved configuration, the subcommand's results, and a
//! UNIX timestamp. JSON output serializes the envelope as-is; text output
//! flattens it into `dotted.key = value` lines so it stays grep-friendly.
//! The timestamp is the only field allowed to differ between identical runs.

use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!(
                "unknown report format {other:?}; expected text or json"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool_version: String,
    pub subcommand: String,
    pub config_echo: Value,
    pub results: Value,
    pub timestamp: u64,
}

impl Report {
    /// Wrap a subcommand's config echo and results in the envelope. Both
    /// payloads must already be serialized to JSON values by the caller.
    pub fn new(subcommand: &str, config_echo: Value, results: Value) -> Report {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Report {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config_echo,
            results,
            timestamp,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("report serialization failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    /// Flatten to `key = value` lines. The envelope fields keep declaration
    /// order; nested maps inside the payloads come out in serde_json's key
    /// order, which is deterministic for a fixed payload.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(&format!("tool_version = {}\n", self.tool_version));
        out.push_str(&format!("subcommand = {}\n", self.subcommand));
        render_value("config", &self.config_echo, &mut out);
        render_value("results", &self.results, &mut out);
        out.push_str(&format!("timestamp = {}\n", self.timestamp));
        Ok(out)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Text => self.to_text(),
            ReportFormat::Json => self.to_json(),
        }
    }
}

fn render_value(prefix: &str, value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str(&format!("{prefix} = {{}}\n"));
            }
            for (key, inner) in map {
                render_value(&format!("{prefix}.{key}"), inner, out);
            }
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str(&format!("{prefix} = []\n"));
            }
            for (i, inner) in items.iter().enumerate() {
                render_value(&format!("{prefix}[{i}]"), inner, out);
            }
        }
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}
