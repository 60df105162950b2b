use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

pub const SCHEMA_VERSION: &str = "1";

/// Wall-clock information; excluded from the deterministic report body.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub threads: usize,
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: String,
    pub command: String,
    pub config: Value,
    pub result: Value,
    pub warnings: Vec<String>,
    pub runtime: Runtime,
}

#[derive(Serialize)]
struct Body<'a> {
    schema_version: &'a str,
    command: &'a str,
    config: &'a Value,
    result: &'a Value,
    warnings: &'a [String],
}

impl ReportDocument {
    pub fn new<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R) -> Result<Self> {
        Ok(Self {
            schema_version: SCHEMA_VERSION.to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            result: serde_json::to_value(result)?,
            warnings: Vec::new(),
            runtime: Runtime::default(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Serialized report without the `runtime` section.
    pub fn body(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Body {
            schema_version: &self.schema_version,
            command: &self.command,
            config: &self.config,
            result: &self.result,
            warnings: &self.warnings,
        })?)
    }
}
