//! Run configuration, read from TOML. Command-line flags override it.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! data = "data"
//! out = "out"
//!
//! [model]
//! sweeps = 2000
//! burn_in = 1000
//!
//! [cluster]
//! linkage = "complete"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use bpar_core::cluster::{Linkage, DEFAULT_MIN_SIZE};
use bpar_core::distance::{DistanceOptions, Measure, Normalizer, DEFAULT_EPSILON};
use bpar_core::embedding::SpectralMode;
use bpar_core::model::{BirthProposal, Hyperparams};
use bpar_core::predict::{default_grid, BenchmarkConfig, ModelFamily};
use serde::Deserialize;

use crate::error::{CliError, Result};
use crate::json::{parse_linkage, parse_measure, parse_mode};

pub const OUT_DIR_ENV: &str = "BPAR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "bpar-out";

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub lag: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    /// `prior` or `data`.
    pub birth: String,
    pub birth_window: usize,
    pub prune_threshold: f64,
    /// Z-score each series before fitting.
    pub normalize: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            gamma: 1.0,
            kappa: 10.0,
            lag: 1,
            sweeps: 1000,
            burn_in: 500,
            birth: "prior".into(),
            birth_window: 20,
            prune_threshold: 0.05,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSection {
    pub measures: Vec<String>,
    pub epsilon: f64,
    /// `global` or `per-hmm`.
    pub normalizer: String,
}

impl Default for DistanceSection {
    fn default() -> Self {
        Self { measures: vec!["likelihood".into(), "viterbi".into()], epsilon: DEFAULT_EPSILON, normalizer: "global".into() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedSection {
    pub k: Vec<usize>,
    /// `distance` or `gaussian`.
    pub mode: String,
}

impl Default for EmbedSection {
    fn default() -> Self {
        Self { k: (1..=10).map(|i| 10 * i).collect(), mode: "distance".into() }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub linkage: String,
    /// Cut height; the largest merge-height gap when absent.
    pub height: Option<f64>,
    pub min_size: usize,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { linkage: "average".into(), height: None, min_size: DEFAULT_MIN_SIZE }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    /// Any of `ridge`, `kernel_ridge`, `random_forest`.
    pub families: Vec<String>,
    pub ridge_penalties: Option<Vec<f64>>,
    pub forest_trees: usize,
    /// Append per-channel mean and variance of the unnormalized signals.
    pub raw_features: bool,
    pub attribution_penalty: f64,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            families: ModelFamily::ALL.iter().map(|f| f.as_str().into()).collect(),
            ridge_penalties: None,
            forest_trees: 200,
            raw_features: false,
            attribution_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub channels: Option<Vec<String>>,
    pub paths: Paths,
    pub model: ModelSection,
    pub distance: DistanceSection,
    pub embed: EmbedSection,
    pub cluster: ClusterSection,
    pub predict: PredictSection,
}

impl RunConfig {
    /// Parses `path`; the file must set `seed`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::input(path, "config file does not exist"),
            _ => CliError::io(path, e),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))?;
        if cfg.seed.is_none() {
            return Err(CliError::input(path, "`seed` is mandatory"));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data, &mut cfg.paths.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| CliError::Usage("a seed is mandatory: pass --seed or set `seed` in the config".into()))
    }

    /// `--out`, then the config, then `$BPAR_OUT_DIR`, then `bpar-out`.
    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn data_dir(&self) -> Result<PathBuf> {
        let dir = self.paths.data.clone().ok_or_else(|| CliError::Usage("no data directory: pass --data or set [paths] data".into()))?;
        if !dir.is_dir() {
            return Err(CliError::input(&dir, "data directory does not exist"));
        }
        Ok(dir)
    }

    pub fn hyperparams(&self, dim: usize) -> Result<Hyperparams> {
        let m = &self.model;
        let mut h = Hyperparams::new(dim);
        h.alpha = m.alpha;
        h.gamma = m.gamma;
        h.kappa = m.kappa;
        h.lag = m.lag;
        h.ar_prior = bpar_core::model::MniwPrior::weakly_informative(dim, m.lag);
        h.birth = match m.birth.as_str() {
            "prior" => BirthProposal::Prior,
            "data" => BirthProposal::DataDriven { window: m.birth_window },
            other => return Err(CliError::Usage(format!("unknown birth proposal `{other}` (expected prior or data)"))),
        };
        h.mcmc.sweeps = m.sweeps;
        h.mcmc.burn_in = m.burn_in.min(m.sweeps);
        h.mcmc.seed = self.seed()?;
        h.validate(dim)?;
        Ok(h)
    }

    pub fn measures(&self) -> Result<Vec<Measure>> {
        self.distance
            .measures
            .iter()
            .map(|m| parse_measure(m).ok_or_else(|| CliError::Usage(format!("unknown distance measure `{m}`"))))
            .collect()
    }

    pub fn distance_options(&self) -> Result<DistanceOptions> {
        let normalizer = match self.distance.normalizer.as_str() {
            "global" => Normalizer::Global,
            "per-hmm" => Normalizer::PerHmm,
            other => return Err(CliError::Usage(format!("unknown normalizer `{other}`"))),
        };
        if !(self.distance.epsilon > 0.0 && self.distance.epsilon < 1.0) {
            return Err(CliError::Usage(format!("epsilon must lie in (0, 1), got {}", self.distance.epsilon)));
        }
        Ok(DistanceOptions { epsilon: self.distance.epsilon, normalizer })
    }

    pub fn spectral_mode(&self) -> Result<SpectralMode> {
        parse_mode(&self.embed.mode).ok_or_else(|| CliError::Usage(format!("unknown spectral mode `{}`", self.embed.mode)))
    }

    pub fn linkage(&self) -> Result<Linkage> {
        parse_linkage(&self.cluster.linkage).ok_or_else(|| CliError::Usage(format!("unknown linkage `{}`", self.cluster.linkage)))
    }

    pub fn benchmark(&self) -> Result<BenchmarkConfig> {
        let seed = self.seed()?;
        let mut families = Vec::new();
        for name in &self.predict.families {
            let f = ModelFamily::ALL
                .into_iter()
                .find(|f| f.as_str() == name)
                .ok_or_else(|| CliError::Usage(format!("unknown model family `{name}`")))?;
            families.push(f);
        }
        let mut config = BenchmarkConfig::new(seed);
        config.families = families;
        config.spectral_ks = self.embed.k.clone();
        config.distance = self.distance_options()?;
        config.spectral_mode = self.spectral_mode()?;
        config.raw_features = self.predict.raw_features;
        let p = &self.predict;
        config.grids = ModelFamily::ALL
            .into_iter()
            .map(|f| {
                let mut grid = default_grid(f, seed);
                match (f, &p.ridge_penalties) {
                    (ModelFamily::Ridge, Some(pens)) => {
                        grid = pens.iter().map(|&x| bpar_core::predict::ModelSpec::ridge(x)).collect();
                    }
                    (ModelFamily::RandomForest, _) => {
                        for s in &mut grid {
                            if let bpar_core::predict::ModelSpec::RandomForest { trees, .. } = s {
                                *trees = p.forest_trees;
                            }
                        }
                    }
                    _ => {}
                }
                (f, grid)
            })
            .collect();
        Ok(config)
    }
}
