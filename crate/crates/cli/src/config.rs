//! Config file layering and report emission helpers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pldepth::bench::BenchConfig;
use pldepth::eval::EvalConfig;
use pldepth::optimizer::OptimizerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Settings for `estimate`, the only command without a library config type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    /// `(width, height)` the network runs at.
    pub model_res: (usize, usize),
    pub min_depth: f64,
    pub max_depth: f64,
    pub post_process: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            model_res: (640, 192),
            min_depth: pldepth::network::DEFAULT_MIN_DEPTH_M,
            max_depth: pldepth::network::DEFAULT_MAX_DEPTH_M,
            post_process: false,
        }
    }
}

/// Sections of a `--config` TOML file. Missing sections and keys fall back
/// to built-in defaults; flags given on the command line win over both.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub estimate: EstimateConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn parse_res(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("resolution must be positive, got {s:?}"));
    }
    Ok((w, h))
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                flatten(&format!("{prefix}.{k}"), child, out);
            }
        }
        Value::Array(items) if items.iter().all(|i| i.is_number()) => {
            let parts: Vec<String> = items.iter().map(Value::to_string).collect();
            let _ = writeln!(out, "{prefix}={}", parts.join(","));
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), child, out);
            }
        }
        Value::String(s) => {
            let _ = writeln!(out, "{prefix}={s}");
        }
        Value::Null => {
            let _ = writeln!(out, "{prefix}=none");
        }
        other => {
            let _ = writeln!(out, "{prefix}={other}");
        }
    }
}

/// `config.*` lines echoing the effective settings.
pub fn echo_config<T: Serialize>(cfg: &T) -> String {
    let mut out = String::new();
    match serde_json::to_value(cfg) {
        Ok(v) => flatten("config", &v, &mut out),
        Err(e) => {
            let _ = writeln!(out, "config.error={e}");
        }
    }
    out
}

/// Prints the key=value report and, if asked, writes the structured record.
pub fn emit<R: Serialize, C: Serialize>(
    kv: &str,
    report: &R,
    cfg: &C,
    json_out: Option<&PathBuf>,
) -> Result<(), CliError> {
    print!("{kv}");
    print!("{}", echo_config(cfg));
    if let Some(path) = json_out {
        let mut record = serde_json::to_value(report).map_err(|e| CliError::Data(e.to_string()))?;
        if let Value::Object(map) = &mut record {
            map.insert(
                "config".into(),
                serde_json::to_value(cfg).map_err(|e| CliError::Data(e.to_string()))?,
            );
        }
        let text = serde_json::to_string_pretty(&record).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
