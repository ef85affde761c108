use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use webtraffic::baselines::DEFAULT_HORIZON;
use webtraffic::ensemble::AveragingSpace;
use webtraffic::neuralnet::TrainConfig;

/// An error in the user's arguments or configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub(crate) fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Benchmark,
    Medians,
    Lstm,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Benchmark, Method::Medians, Method::Lstm, Method::Ensemble];
}

/// Optional override of the calendar window used by median e.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedianConfig {
    pub calendar_start: Option<NaiveDate>,
    pub calendar_end: Option<NaiveDate>,
}

impl MedianConfig {
    pub fn calendar(&self) -> Option<(NaiveDate, NaiveDate)> {
        self.calendar_start.zip(self.calendar_end)
    }
}

/// Everything one run needs. Read from TOML; command-line flags override
/// individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub answer_key: Option<PathBuf>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Overrides `train.seed` when set.
    pub seed: Option<u64>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_scaler_range")]
    pub scaler_range: (f64, f64),
    #[serde(default)]
    pub averaging: AveragingSpace,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub medians: MedianConfig,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_scaler_range() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            answer_key: None,
            horizon: default_horizon(),
            out_dir: default_out_dir(),
            seed: None,
            methods: default_methods(),
            scaler_range: default_scaler_range(),
            averaging: AveragingSpace::default(),
            train: TrainConfig::default(),
            medians: MedianConfig::default(),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Wide CSV of daily views (`Page,YYYY-MM-DD,...`).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Wide CSV with the true views of the forecast horizon.
    #[arg(long, value_name = "PATH")]
    pub answer_key: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Restrict to these methods (repeatable or comma-separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<Method>,
}

impl RunConfig {
    /// Parses a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.answer_key.as_mut() {
            rebase(p);
        }
        rebase(&mut cfg.out_dir);
        Ok(cfg)
    }

    /// Loads the optional config file, applies the flags and validates.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(p) = &flags.input {
            cfg.input = Some(p.clone());
        }
        if let Some(p) = &flags.answer_key {
            cfg.answer_key = Some(p.clone());
        }
        if let Some(p) = &flags.out {
            cfg.out_dir = p.clone();
        }
        if flags.seed.is_some() {
            cfg.seed = flags.seed;
        }
        if let Some(e) = flags.epochs {
            cfg.train.epochs = e;
        }
        if !flags.method.is_empty() {
            cfg.methods = flags.method.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(usage("horizon must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(usage("no methods enabled"));
        }
        let (lo, hi) = self.scaler_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(usage(format!("invalid scaler range ({lo}, {hi})")));
        }
        if self.medians.calendar_start.is_some() != self.medians.calendar_end.is_some() {
            return Err(usage("medians.calendar_start and medians.calendar_end go together"));
        }
        if let Some((a, b)) = self.medians.calendar() {
            if a > b {
                return Err(usage(format!("calendar window {a}..{b} is reversed")));
            }
        }
        self.train_config().validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| usage("no input file: pass --input or set `input` in the config"))
    }

    pub fn wants(&self, method: Method) -> bool {
        self.methods.contains(&method)
    }

    /// Whether any enabled method needs the trained LSTMs.
    pub fn needs_lstm(&self) -> bool {
        self.wants(Method::Lstm) || self.wants(Method::Ensemble)
    }

    /// The training block with the top-level seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }

    /// Creates the output directory if needed.
    pub fn ensure_out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("cannot create output directory {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
