//! One TOML document configuring every stage of the pipeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticConfig;
use crate::error::{Error, Result};
use crate::selector::PpoConfig;
use crate::synthstudy::GeneratorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratios: (0.70, 0.15, 0.15), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub lambda: f64,
    /// Per-view acquisition costs; empty means 1.0 for every view.
    pub costs: Vec<f64>,
    /// Hard cap on acquired views (0 = none).
    pub max_views: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { lambda: 0.05, costs: vec![], max_views: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub budgets: Vec<usize>,
    pub random_runs: usize,
    /// Sample actions instead of taking the argmax when evaluating.
    pub stochastic: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.001, 0.01, 0.05, 0.1, 0.2, 0.5],
            seeds: vec![0, 1, 2, 3, 4],
            budgets: vec![1, 2, 3],
            random_runs: 5,
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    pub diagnostic: DiagnosticConfig,
    pub selector: PpoConfig,
    pub env: EnvConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.diagnostic.validate()?;
        self.selector.validate()?;
        let (a, b, c) = self.split.ratios;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {:?} must be non-negative and sum to 1",
                self.split.ratios
            )));
        }
        let n = self.generator.n_views;
        if !self.env.costs.is_empty() && self.env.costs.len() != n {
            return Err(Error::Config(format!("{} costs for {n} views", self.env.costs.len())));
        }
        if self.env.costs.iter().any(|c| !(*c >= 0.0)) || !(self.env.lambda >= 0.0) {
            return Err(Error::Config("lambda and costs must be non-negative".into()));
        }
        if self.eval.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("sweep lambdas must be non-negative".into()));
        }
        if self.eval.budgets.iter().any(|&k| k == 0 || k > n) {
            return Err(Error::Config(format!("budgets must lie in 1..={n}")));
        }
        Ok(())
    }

    pub fn costs(&self) -> Vec<f64> {
        if self.env.costs.is_empty() {
            vec![1.0; self.generator.n_views]
        } else {
            self.env.costs.clone()
        }
    }

    pub fn max_views(&self) -> Option<usize> {
        (self.env.max_views > 0).then_some(self.env.max_views)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        let digest = Sha256::digest(&json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
