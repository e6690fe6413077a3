//! Flat `key = value` configuration files for structure learning, training and experiments.
//!
//! ```text
//! # iris, discriminative
//! dataset = ../data/iris.csv
//! label_column = class
//! objective = discriminative
//! trials = 100
//! min_instances = 30
//! ```
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, SpnError};
use crate::safe_ssl::{InitMode, McpConfig, Objective, StarInit};
use crate::structure::StructureConfig;

/// How the truncation depth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationChoice {
    Aic,
    Validation,
    /// Keep the learned depth.
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub label_column: String,
    pub trials: usize,
    /// Trial `i` uses seed `base_seed + i`.
    pub base_seed: u64,
    pub test_fraction: f64,
    /// `None` means `2 D + K`.
    pub labelled_count: Option<usize>,
    pub validation_count: Option<usize>,
    /// `None` picks AIC for generative and validation F1 for discriminative runs.
    pub truncation: Option<TruncationChoice>,
    pub oracle: bool,
    pub structure: StructureConfig,
    pub training: McpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            label_column: "class".into(),
            trials: 100,
            base_seed: 0,
            test_fraction: 0.2,
            labelled_count: None,
            validation_count: None,
            truncation: None,
            oracle: true,
            structure: StructureConfig::default(),
            training: McpConfig::new(Objective::Generative),
        }
    }
}

impl ExperimentConfig {
    pub fn objective(&self) -> Objective {
        self.training.objective
    }

    pub fn truncation_choice(&self) -> TruncationChoice {
        self.truncation.unwrap_or(match self.objective() {
            Objective::Generative => TruncationChoice::Aic,
            Objective::Discriminative => TruncationChoice::Validation,
        })
    }

    /// Parses a config; a relative `dataset` path is resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SpnError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| SpnError::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        if let (Some(base), Some(ds)) = (base_dir, cfg.dataset.as_ref()) {
            if ds.is_relative() {
                cfg.dataset = Some(base.join(ds));
            }
        }
        cfg.structure.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SpnError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn p<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}` for {key}"))
        }
        fn auto(key: &str, v: &str) -> std::result::Result<Option<usize>, String> {
            if v == "auto" {
                Ok(None)
            } else {
                p(key, v).map(Some)
            }
        }
        let t = &mut self.training;
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "label_column" => self.label_column = value.to_string(),
            "trials" => self.trials = p(key, value)?,
            "seed" => self.base_seed = p(key, value)?,
            "test_fraction" => self.test_fraction = p(key, value)?,
            "labelled_count" => self.labelled_count = auto(key, value)?,
            "validation_count" => self.validation_count = auto(key, value)?,
            "oracle" => self.oracle = p(key, value)?,
            "truncation" => {
                self.truncation = match value {
                    "aic" => Some(TruncationChoice::Aic),
                    "validation" => Some(TruncationChoice::Validation),
                    "none" => Some(TruncationChoice::None),
                    "auto" => None,
                    _ => return Err(format!("bad value `{value}` for truncation")),
                }
            }
            "min_instances" => self.structure.min_instances = p(key, value)?,
            "corr_threshold" => self.structure.corr_threshold = p(key, value)?,
            "num_clusters" => self.structure.num_clusters = p(key, value)?,
            "max_depth" => self.structure.max_depth = p(key, value)?,
            "restarts" => self.structure.restarts = p(key, value)?,
            "structure_seed" => self.structure.seed = p(key, value)?,
            "objective" => {
                t.objective = match value {
                    "generative" => Objective::Generative,
                    "discriminative" => Objective::Discriminative,
                    _ => return Err(format!("bad value `{value}` for objective")),
                }
            }
            "init" => {
                t.init = match value {
                    "optimistic" => Some(InitMode::Optimistic),
                    "dirichlet" => Some(InitMode::Dirichlet),
                    "auto" => None,
                    _ => return Err(format!("bad value `{value}` for init")),
                }
            }
            "star_init" => {
                t.star_init = match value {
                    "structure" => StarInit::Structure,
                    "supervised" => StarInit::Supervised,
                    _ => return Err(format!("bad value `{value}` for star_init")),
                }
            }
            "alpha0" => t.alpha0 = p(key, value)?,
            "max_outer" => t.max_outer = p(key, value)?,
            "tol" => t.tol = p(key, value)?,
            "patience" => t.patience = p(key, value)?,
            "q_backtracks" => t.q_backtracks = p(key, value)?,
            "em_max_iters" => t.em.max_iters = p(key, value)?,
            "em_rel_tol" => t.em.rel_tol = p(key, value)?,
            "em_smoothing" => t.em.smoothing = p(key, value)?,
            "grad_max_iters" => t.grad.max_iters = p(key, value)?,
            "grad_rel_tol" => t.grad.rel_tol = p(key, value)?,
            "learning_rate" => t.grad.learning_rate = p(key, value)?,
            "max_halvings" => t.grad.max_halvings = p(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let s = &self.structure;
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |n| n.to_string());
        let mut lines = Vec::new();
        if let Some(ds) = &self.dataset {
            lines.push(format!("dataset = {}", ds.display()));
        }
        lines.extend([
            format!("label_column = {}", self.label_column),
            format!("trials = {}", self.trials),
            format!("seed = {}", self.base_seed),
            format!("test_fraction = {}", self.test_fraction),
            format!("labelled_count = {}", opt(self.labelled_count)),
            format!("validation_count = {}", opt(self.validation_count)),
            format!(
                "truncation = {}",
                match self.truncation {
                    None => "auto",
                    Some(TruncationChoice::Aic) => "aic",
                    Some(TruncationChoice::Validation) => "validation",
                    Some(TruncationChoice::None) => "none",
                }
            ),
            format!("oracle = {}", self.oracle),
            format!("min_instances = {}", s.min_instances),
            format!("corr_threshold = {}", s.corr_threshold),
            format!("num_clusters = {}", s.num_clusters),
            format!("max_depth = {}", s.max_depth),
            format!("restarts = {}", s.restarts),
            format!("structure_seed = {}", s.seed),
            format!(
                "objective = {}",
                match t.objective {
                    Objective::Generative => "generative",
                    Objective::Discriminative => "discriminative",
                }
            ),
            format!(
                "init = {}",
                match t.init {
                    None => "auto",
                    Some(InitMode::Optimistic) => "optimistic",
                    Some(InitMode::Dirichlet) => "dirichlet",
                }
            ),
            format!(
                "star_init = {}",
                match t.star_init {
                    StarInit::Structure => "structure",
                    StarInit::Supervised => "supervised",
                }
            ),
            format!("alpha0 = {}", t.alpha0),
            format!("max_outer = {}", t.max_outer),
            format!("tol = {}", t.tol),
            format!("patience = {}", t.patience),
            format!("q_backtracks = {}", t.q_backtracks),
            format!("em_max_iters = {}", t.em.max_iters),
            format!("em_rel_tol = {}", t.em.rel_tol),
            format!("em_smoothing = {}", t.em.smoothing),
            format!("grad_max_iters = {}", t.grad.max_iters),
            format!("grad_rel_tol = {}", t.grad.rel_tol),
            format!("learning_rate = {}", t.grad.learning_rate),
            format!("max_halvings = {}", t.grad.max_halvings),
        ]);
        lines.join("\n") + "\n"
    }
}

impl Default for McpConfig {
    fn default() -> Self {
        McpConfig::new(Objective::Generative)
    }
}
