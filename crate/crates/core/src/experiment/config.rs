//! Experiment configuration files.
//!
//! TOML with one table per stage; unknown keys are rejected. Every optional
//! key has a default, so a file only needs `kind`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::{DEFAULT_TOL_BINS, DEFAULT_WINDOW};
use crate::kernel::SinkhornConfig;
use crate::provider::{RemoteConfig, RemoteMode, DEFAULT_BRANCH_BUDGET, ENDPOINT_ENV};
use crate::quantizer::{Precision, DEFAULT_TARGET_HI, DEFAULT_TARGET_LO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RegimeProbe,
    ConvexForecast,
    NonconvexForecast,
    ScalingLaws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub sgd: SgdConfig,
    #[serde(default)]
    pub quantizer: QuantizerConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub sinkhorn: SinkhornSection,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub scaling: ScalingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    /// Number of samples `N`.
    pub samples: usize,
    /// Parameter dimension `d` (linear regression only; the sine model has 2).
    pub dim: usize,
    /// Standard deviation of the label noise.
    pub noise: f64,
    /// Dataset seed; the master seed when absent.
    pub data_seed: Option<u64>,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            dim: 2,
            noise: 0.3,
            data_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub step_size: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// One starting point per run.
    pub inits: Vec<Vec<f64>>,
    /// One seed per run; derived from the master seed when empty.
    pub seeds: Vec<u64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            step_size: 0.2,
            batch_size: 10,
            steps: 1000,
            inits: Vec::new(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizerConfig {
    pub precision: u8,
    pub target: [f64; 2],
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            precision: 2,
            target: [DEFAULT_TARGET_LO, DEFAULT_TARGET_HI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Oracle,
    Empirical,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "empirical" => Ok(Self::Empirical),
            "remote" => Ok(Self::Remote),
            other => Err(Error::Config(format!("unknown provider '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Digits of history for the empirical model; the precision when absent.
    pub order: Option<usize>,
    pub smoothing: f64,
    /// Branch budget of the digit hierarchy.
    pub budget: usize,
    /// Remote endpoint; falls back to the environment variable.
    pub endpoint: Option<String>,
    pub temperature: f64,
    pub timeout_secs: u64,
    /// Vocabulary ids of the digits 0..9 when the server returns full logits.
    pub token_ids: Option<[usize; 10]>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Empirical,
            order: None,
            smoothing: 0.1,
            budget: DEFAULT_BRANCH_BUDGET,
            endpoint: None,
            temperature: 1.0,
            timeout_secs: 30,
            token_ids: None,
        }
    }
}

impl ProviderConfig {
    pub fn remote_config(&self) -> Result<RemoteConfig> {
        let endpoint = match &self.endpoint {
            Some(e) => e.clone(),
            None => std::env::var(ENDPOINT_ENV).map_err(|_| {
                Error::Config(format!("remote provider needs provider.endpoint or {ENDPOINT_ENV}"))
            })?,
        };
        Ok(RemoteConfig {
            endpoint,
            temperature: self.temperature,
            mode: match self.token_ids {
                Some(token_ids) => RemoteMode::TokenIds { token_ids },
                None => RemoteMode::Digits,
            },
            timeout_secs: self.timeout_secs,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SinkhornSection {
    /// Regularization; `4·(bin width)²` when absent.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornSection {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

impl SinkhornSection {
    pub fn resolve(&self, precision: Precision) -> SinkhornConfig {
        let base = SinkhornConfig::for_precision(precision);
        SinkhornConfig {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    Estimated,
    /// Skip estimation and forecast with identity blocks.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub steps: usize,
    pub window: usize,
    pub tol: u32,
    /// Number of random starting points, drawn in the trained range.
    pub runs: usize,
    /// Explicit starting points; replaces the random ones when nonempty.
    pub inits: Vec<Vec<f64>>,
    pub kernel: KernelSource,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            window: DEFAULT_WINDOW,
            tol: DEFAULT_TOL_BINS,
            runs: 10,
            inits: Vec::new(),
            kernel: KernelSource::Estimated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub over_samples: usize,
    pub over_dim: usize,
    pub under_samples: usize,
    pub under_dim: usize,
    /// Max mass above which a prediction counts as a Dirac.
    pub dirac_threshold: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            over_samples: 1,
            over_dim: 2,
            under_samples: 100,
            under_dim: 2,
            dirac_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Spectral gaps of the symmetric chains to study.
    pub gaps: Vec<f64>,
    /// Extra `(p, q)` chains.
    pub chains: Vec<[f64; 2]>,
    pub lengths: Vec<usize>,
    pub trials: usize,
    pub mixing_steps: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            gaps: vec![0.1, 0.5, 1.0],
            chains: Vec::new(),
            lengths: vec![10, 20, 50, 100, 200, 500, 1000],
            trials: 100,
            mixing_steps: 200,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind` with nothing else set.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            out_dir: None,
            objective: ObjectiveConfig::default(),
            sgd: SgdConfig::default(),
            quantizer: QuantizerConfig::default(),
            provider: ProviderConfig::default(),
            sinkhorn: SinkhornSection::default(),
            forecast: ForecastConfig::default(),
            regime: RegimeConfig::default(),
            scaling: ScalingConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn precision(&self) -> Result<Precision> {
        Precision::new(self.quantizer.precision).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical serialization, as lowercase hex. The output
    /// directory does not take part.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&Self { out_dir: None, ..self.clone() }).expect("config is serializable");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Seed of SGD run `i`.
    pub fn run_seed(&self, i: usize) -> u64 {
        self.sgd
            .seeds
            .get(i)
            .copied()
            .unwrap_or_else(|| self.seed.wrapping_add(1000 + i as u64))
    }

    pub fn data_seed(&self) -> u64 {
        self.objective.data_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.precision()?;
        let [lo, hi] = self.quantizer.target;
        if !(lo < hi) || lo < 0.0 || hi >= 10.0 {
            return bad(format!("quantizer.target [{lo}, {hi}] must satisfy 0 <= lo < hi < 10"));
        }
        if self.objective.samples == 0 || self.objective.dim == 0 {
            return bad("objective.samples and objective.dim must be >= 1".into());
        }
        if !(self.objective.noise >= 0.0) {
            return bad("objective.noise must be >= 0".into());
        }
        if !(self.sgd.step_size >= 0.0) || !self.sgd.step_size.is_finite() {
            return bad("sgd.step_size must be >= 0".into());
        }
        if self.sgd.batch_size == 0 || self.sgd.steps == 0 {
            return bad("sgd.batch_size and sgd.steps must be >= 1".into());
        }
        if !(self.provider.smoothing > 0.0) {
            return bad("provider.smoothing must be > 0".into());
        }
        if self.provider.budget == 0 {
            return bad("provider.budget must be >= 1".into());
        }
        if self.provider.order == Some(0) {
            return bad("provider.order must be >= 1".into());
        }
        if self.forecast.window == 0 || self.forecast.steps < self.forecast.window {
            return bad("forecast.steps must be >= forecast.window >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.regime.dirac_threshold) {
            return bad("regime.dirac_threshold must be in [0, 1]".into());
        }
        if self.scaling.trials == 0 {
            return bad("scaling.trials must be >= 1".into());
        }
        self.sinkhorn.resolve(self.precision()?).validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml("kind = \"convex-forecast\"").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(ExperimentKind::ConvexForecast));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("kind = \"scaling-laws\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("kind = \"scaling-laws\"\n[sgd]\nstepsize = 0.1").is_err());
        assert!(ExperimentConfig::from_toml("kind = \"nope\"").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml("kind = \"regime-probe\"\n[quantizer]\nprecision = 9").is_err());
        assert!(ExperimentConfig::from_toml("kind = \"regime-probe\"\n[forecast]\nsteps = 10").is_err());
    }

    #[test]
    fn roundtrip_and_hash() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::NonconvexForecast);
        cfg.sgd.inits = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let mut other = cfg.clone();
        other.seed = 1;
        assert_ne!(other.hash(), cfg.hash());
        let mut moved = cfg.clone();
        moved.out_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
    }
}
