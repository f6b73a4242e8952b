use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DatasetConfig;
use crate::engine::{EngineConfig, Method};
use crate::models::TrainConfig;
use crate::{Error, Result};

/// Oracle training: a separate unbiased dataset and its own budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub n_samples: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_samples: 30_000,
            epochs: 40,
            lr: 1e-3,
            batch_size: 256,
        }
    }
}

/// Hyperparameter grid swept per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub n: Vec<usize>,
    pub lr: Vec<f64>,
    /// Learning rates for xgem_plus, which has no γ or α to search.
    pub xgem_lr: Vec<f64>,
}

impl Default for SweepGrid {
    /// Desk-scale grid: the full grid with `n` trimmed to {2, 4, 8}.
    fn default() -> Self {
        Self {
            n: vec![2, 4, 8],
            ..Self::full()
        }
    }
}

impl SweepGrid {
    /// The full search space, `n` from 2 to 15.
    pub fn full() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            gamma: vec![0.0, 0.001, 0.1, 1.0],
            alpha: vec![0.0, 0.001, 0.1, 1.0],
            lambda: vec![0.0001, 0.0005, 0.001],
            n: (2..=15).collect(),
            lr: vec![0.05, 0.1],
            xgem_lr: vec![0.01, 0.05, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, &[f64]); 5] = [
            ("sweep.gamma", &self.gamma),
            ("sweep.alpha", &self.alpha),
            ("sweep.lambda", &self.lambda),
            ("sweep.lr", &self.lr),
            ("sweep.xgem_lr", &self.xgem_lr),
        ];
        for (name, v) in lists {
            if v.is_empty() {
                return Err(Error::config(name, "empty grid axis"));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::config(name, "values must be finite and non-negative"));
            }
        }
        if self.lr.iter().chain(&self.xgem_lr).any(|&x| x == 0.0) {
            return Err(Error::config("sweep.lr", "learning rates must be positive"));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::config("sweep.n", "needs at least one positive explanation count"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("sweep.methods", "no methods to sweep"));
        }
        Ok(())
    }

    /// Every engine configuration of the grid, in a fixed order. xgem_plus
    /// points differ only in λ, n and its own learning rates.
    pub fn points(&self, base: &EngineConfig) -> Vec<EngineConfig> {
        let mut out = Vec::new();
        for &method in &self.methods {
            let xgem = method == Method::XgemPlus;
            let (gammas, alphas, lrs) = if xgem {
                (&[0.0][..], &[0.0][..], &self.xgem_lr[..])
            } else {
                (&self.gamma[..], &self.alpha[..], &self.lr[..])
            };
            for &gamma in gammas {
                for &alpha in alphas {
                    for &lambda in &self.lambda {
                        for &n in &self.n {
                            for &lr in lrs {
                                out.push(EngineConfig {
                                    method,
                                    gamma,
                                    alpha,
                                    lambda,
                                    n,
                                    lr,
                                    ..base.clone()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Evaluation-set construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Records per (style, slot) in the evaluation set.
    pub per_slot: usize,
    /// Training images drawn for the Fisher estimate.
    pub fisher_pool: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            per_slot: 1,
            fisher_pool: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub data: DatasetConfig,
    pub oracle: OracleConfig,
    pub train: TrainConfig,
    pub engine: EngineConfig,
    pub eval: EvalConfig,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/default"),
            data: DatasetConfig::default(),
            oracle: OracleConfig::default(),
            train: TrainConfig::default(),
            engine: EngineConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.engine.validate()?;
        self.sweep.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.oracle.n_samples < 2 || self.oracle.epochs == 0 || self.oracle.batch_size == 0 {
            return Err(Error::config("oracle", "n_samples >= 2, epochs >= 1 and batch_size >= 1 required"));
        }
        if !(self.oracle.lr.is_finite() && self.oracle.lr > 0.0) {
            return Err(Error::config("oracle.lr", "must be positive"));
        }
        if self.eval.per_slot == 0 || self.eval.fisher_pool == 0 {
            return Err(Error::config("eval", "per_slot and fisher_pool must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| text[..s.start].lines().count().to_string())
                .map(|l| format!("line {l}"))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::config("--config", format!("{} does not exist", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Configuration of the oracle's unbiased dataset.
    pub fn oracle_data(&self) -> DatasetConfig {
        DatasetConfig {
            n_samples: self.oracle.n_samples,
            bias_strength: 0.0,
            ood_shape_ids: Vec::new(),
            split_seed: self.data.split_seed.wrapping_add(1),
            ..self.data.clone()
        }
    }

    /// Training settings for the oracle.
    pub fn oracle_train(&self) -> TrainConfig {
        TrainConfig {
            classifier_epochs: self.oracle.epochs,
            classifier_lr: self.oracle.lr,
            batch_size: self.oracle.batch_size,
            ..self.train.clone()
        }
    }
}
