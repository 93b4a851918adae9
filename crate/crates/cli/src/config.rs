//! Run configuration files: strict JSON with line-anchored errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gmopt_core::circuit::MetricsConfig;
use gmopt_core::codesign::{LossConfig, SyntheticConfig, TrainConfig, UnitConstants};
use gmopt_core::spice::SpiceConfig;
use gmopt_core::{DesignSpace, OptConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Optimize,
    TrainAfe,
    EvalFilter,
    SpiceRender,
    SpiceParse,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Optimize => "optimize",
            Mode::TrainAfe => "train-afe",
            Mode::EvalFilter => "eval-filter",
            Mode::SpiceRender => "spice-render",
            Mode::SpiceParse => "spice-parse",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub seed: u64,
    /// Relative to the working directory.
    pub out_dir: PathBuf,
    #[serde(default)]
    pub design_space: Option<DesignSpace>,
    #[serde(default)]
    pub mobo: Option<OptConfig>,
    #[serde(default)]
    pub metrics: Option<MetricsConfig>,
    #[serde(default)]
    pub spice: Option<SpiceConfig>,
    #[serde(default)]
    pub afe: Option<AfeConfig>,
    #[serde(default)]
    pub loss: Option<LossConfig>,
    #[serde(default)]
    pub render: Option<RenderConfig>,
    #[serde(default)]
    pub parse: Option<ParseConfig>,
}

fn d_f_low() -> f64 {
    100.0
}
fn d_f_high() -> f64 {
    5000.0
}
fn d_q0() -> f64 {
    3.0
}
fn d_hidden() -> usize {
    32
}
fn d_points() -> usize {
    400
}
fn d_resp_lo() -> f64 {
    10.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfeConfig {
    #[serde(default)]
    pub units: UnitConstants,
    #[serde(default = "d_f_low")]
    pub f_low: f64,
    #[serde(default = "d_f_high")]
    pub f_high: f64,
    #[serde(default = "d_q0")]
    pub q0: f64,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub train: TrainConfig,
    /// Extra test-set evaluations with noise mixed in at these SNRs.
    #[serde(default)]
    pub eval_snr_db: Vec<f64>,
    #[serde(default = "d_resp_lo")]
    pub response_f_lo: f64,
    /// Defaults to fs/2.
    #[serde(default)]
    pub response_f_hi: Option<f64>,
    #[serde(default = "d_points")]
    pub response_points: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    /// Relative to the config file.
    WavDir(PathBuf),
}

fn d_netlist() -> String {
    "netlist.cir".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub template: PathBuf,
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    /// Trained filter bank whose `gm2_<i>`/`c2_<i>` values are added.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "d_netlist")]
    pub output: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParseConfig {
    pub raw: PathBuf,
}

/// A configuration problem, reported as `<file>:<line>: <message>`.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

pub struct Loaded {
    pub path: PathBuf,
    pub text: String,
    pub cfg: RunConfig,
}

/// Line of the value at `keys`, following nested objects in order. Falls
/// back to the deepest key found.
pub fn locate(text: &str, keys: &[&str]) -> Option<usize> {
    let mut pos = 0;
    let mut found = None;
    for key in keys {
        let needle = format!("\"{key}\"");
        let mut from = pos;
        let hit = loop {
            let Some(i) = text[from..].find(&needle) else {
                break None;
            };
            let at = from + i;
            let rest = text[at + needle.len()..].trim_start();
            if rest.starts_with(':') {
                break Some(at);
            }
            from = at + needle.len();
        };
        match hit {
            Some(at) => {
                pos = at;
                found = Some(at);
            }
            None => break,
        }
    }
    found.map(|at| text[..at].matches('\n').count() + 1)
}

impl Loaded {
    pub fn dir(&self) -> PathBuf {
        match self.path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir().join(p)
    }

    pub fn err(&self, keys: &[&str], message: impl fmt::Display) -> ConfigError {
        ConfigError {
            file: self.path.clone(),
            line: locate(&self.text, keys),
            message: message.to_string(),
        }
    }
}

/// Reads and schema-checks a config for `mode`.
pub fn load(path: &Path, mode: Mode) -> Result<Loaded, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        file: path.to_path_buf(),
        line: None,
        message: format!("cannot read config: {e}"),
    })?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
        let msg = e.to_string();
        let msg = match msg.rfind(" at line ") {
            Some(i) => msg[..i].to_string(),
            None => msg,
        };
        ConfigError {
            file: path.to_path_buf(),
            line: Some(e.line()),
            message: msg,
        }
    })?;
    let loaded = Loaded {
        path: path.to_path_buf(),
        text,
        cfg,
    };
    if let Some(m) = loaded.cfg.mode {
        if m != mode {
            return Err(loaded.err(
                &["mode"],
                format!("config is for {}, not {}", m.as_str(), mode.as_str()),
            ));
        }
    }
    // Every stream derives from the top-level seed.
    let value: serde_json::Value = serde_json::from_str(&loaded.text).expect("parsed above");
    if value.pointer("/mobo/seed").is_some() {
        return Err(loaded.err(&["mobo", "seed"], "set the top-level seed instead of mobo.seed"));
    }
    if value.pointer("/mobo/acq/seed").is_some() {
        return Err(loaded.err(
            &["mobo", "acq", "seed"],
            "set the top-level seed instead of mobo.acq.seed",
        ));
    }
    Ok(loaded)
}
