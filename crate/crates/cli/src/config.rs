use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rigorbench::Severity;
use serde::Deserialize;

use crate::args::{Format, GlobalArgs};
use crate::error::CliError;

pub const OUT_ENV: &str = "RIGORBENCH_OUT";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    format: Option<Format>,
    strict: Option<bool>,
    #[serde(default)]
    lint: LintSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LintSection {
    #[serde(default)]
    severity: BTreeMap<String, Severity>,
}

/// Effective settings: flag, then config file, then default. The out
/// directory additionally falls back to `RIGORBENCH_OUT` before the
/// config file.
#[derive(Debug, Clone)]
pub struct GlobalConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: Format,
    pub strict: bool,
    pub severity_overrides: BTreeMap<String, Severity>,
}

impl GlobalConfig {
    pub fn resolve(args: &GlobalArgs, env_out: Option<PathBuf>) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => load(p)?,
            None => ConfigFile::default(),
        };
        Ok(Self {
            seed: args.seed.or(file.seed).unwrap_or(rigorbench::DEFAULT_SEED),
            out_dir: args.out_dir.clone().or(env_out).or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
            format: args.format.or(file.format).unwrap_or(Format::Text),
            strict: args.strict || file.strict.unwrap_or(false),
            severity_overrides: file.lint.severity,
        })
    }

    pub fn out_path(&self, explicit: Option<&Path>, default_name: &str) -> PathBuf {
        explicit.map(Path::to_path_buf).unwrap_or_else(|| self.out_dir.join(default_name))
    }
}

fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::format(format!("config {}: {e}", path.display())))
}
