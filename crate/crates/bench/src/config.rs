//! TOML experiment configuration.
//!
//! ```toml
//! dataset = "synth"          # or a path to a long-format CSV
//! models = ["dgm2", "magma", "last_value", "mean", "median"]
//! k_list = [2, 3]
//! seed = 42
//! gamma = 0.5
//! epochs = 200
//! out_dir = "out"
//! test_fraction = 0.3
//! scale = "standardized"     # or "raw"
//! k_pairs = [[2, 2]]         # compare-multi only
//! n_seeds = 5                # compare-multi only
//!
//! [split]
//! history = 10
//! horizon = 2
//!
//! [synth]
//! generator = "dgm2"         # or "magma"
//! m = 200
//! k = 3
//! t = 12
//! separation = 4.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use tsclust::data::SplitSpec;
use tsclust::metrics::NaivePredictorKind;
use tsclust::synth::{Dgm2SynthSpec, MagmaSynthSpec};

use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dgm2,
    #[serde(alias = "magmaclust")]
    Magma,
    LastValue,
    Mean,
    Median,
}

impl ModelKind {
    pub fn is_clustering(self) -> bool {
        matches!(self, Self::Dgm2 | Self::Magma)
    }

    pub fn naive(self) -> Option<NaivePredictorKind> {
        match self {
            Self::LastValue => Some(NaivePredictorKind::LastValue),
            Self::Mean => Some(NaivePredictorKind::Mean),
            Self::Median => Some(NaivePredictorKind::Median),
            _ => None,
        }
    }

    /// Position in the declaration order, used for seed streams.
    pub fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dgm2 => "DGM2",
            Self::Magma => "MagmaClust",
            Self::LastValue => "LastValue",
            Self::Mean => "Mean",
            Self::Median => "Median",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Metrics on values standardized with training-set statistics.
    #[default]
    Standardized,
    /// Metrics in the original units.
    Raw,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standardized => "standardized",
            Self::Raw => "raw",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Magma,
    Dgm2,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub generator: Generator,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    /// Spacing between cluster offsets (magma) or component means (dgm2).
    pub separation: f64,
    /// Data seed; derived from the run seed when absent.
    pub seed: Option<u64>,
    /// Number of dimensions, each with its own independent chain (dgm2 only).
    #[serde(default = "one")]
    pub d: usize,
}

impl SynthConfig {
    pub fn magma_spec(&self, seed: u64) -> MagmaSynthSpec {
        MagmaSynthSpec::separated(self.m, self.k, self.t, self.separation, seed)
    }

    pub fn dgm2_spec(&self, seed: u64) -> Dgm2SynthSpec {
        Dgm2SynthSpec::separated(self.m, self.k, self.t, self.separation, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 || self.k == 0 || self.t < 2 || self.d == 0 {
            return Err(invalid("synth needs m >= 2, k >= 1, t >= 2 and d >= 1"));
        }
        if self.generator == Generator::Magma && self.d != 1 {
            return Err(invalid("the magma generator is univariate"));
        }
        if !self.separation.is_finite() {
            return Err(invalid("synth separation must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub history: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub split: SplitConfig,
    #[serde(default)]
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub k_list: Vec<usize>,
    #[serde(default)]
    pub k_pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_vem_iters")]
    pub vem_max_iters: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "one")]
    pub n_seeds: usize,
    pub synth: Option<SynthConfig>,
}

fn one() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.5
}
fn default_epochs() -> usize {
    200
}
fn default_hidden() -> usize {
    16
}
fn default_vem_iters() -> usize {
    50
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("bench_out")
}
fn default_test_fraction() -> f64 {
    0.3
}

fn invalid(msg: &str) -> BenchError {
    BenchError::ConfigInvalid(msg.to_string())
}

impl ExperimentConfig {
    /// Parse TOML; relative `dataset` and `out_dir` paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base_dir.join(&cfg.out_dir);
        }
        if !cfg.is_synthetic() && Path::new(&cfg.dataset).is_relative() {
            cfg.dataset = base_dir.join(&cfg.dataset).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == "synth"
    }

    pub fn split_spec(&self) -> Result<SplitSpec> {
        SplitSpec::new(self.split.history, self.split.horizon).map_err(|e| BenchError::ConfigInvalid(e.to_string()))
    }

    /// Checks shared by every subcommand.
    fn validate_common(&self) -> Result<()> {
        self.split_spec()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("gamma must lie in [0, 1]"));
        }
        if self.epochs == 0 || self.hidden == 0 || self.vem_max_iters == 0 {
            return Err(invalid("epochs, hidden and vem_max_iters must be positive"));
        }
        match (&self.synth, self.is_synthetic()) {
            (None, true) => return Err(invalid("dataset = \"synth\" needs a [synth] section")),
            (Some(s), true) => s.validate()?,
            _ => {}
        }
        Ok(())
    }

    /// Requirements of `bench run`.
    pub fn validate_run(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(invalid("no models configured"));
        }
        if self.models.iter().any(|m| m.is_clustering()) && self.k_list.is_empty() {
            return Err(invalid("k_list must be non-empty when a clustering model is configured"));
        }
        if self.k_list.contains(&0) {
            return Err(invalid("cluster counts must be positive"));
        }
        self.validate_common()
    }

    /// Requirements of `bench compare-multi`.
    pub fn validate_multi(&self) -> Result<()> {
        if self.k_pairs.is_empty() {
            return Err(invalid("k_pairs must be non-empty"));
        }
        if self.k_pairs.iter().any(|p| p[0] == 0 || p[1] == 0) {
            return Err(invalid("cluster counts must be positive"));
        }
        if self.n_seeds == 0 {
            return Err(invalid("n_seeds must be positive"));
        }
        self.validate_common()
    }
}
