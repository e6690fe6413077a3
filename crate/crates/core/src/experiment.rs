//! The repeated-split experiment: supervised, safe semi-supervised and oracle runs per seed,
//! aggregated into a small report.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TruncationChoice};
use crate::data::{load_csv, make_split, preprocess, Dataset, SplitSpec};
use crate::error::{Result, SpnError};
use crate::metrics::{binary_f1, macro_f1, mean_and_stderr, mean_test_ll, predict_all};
use crate::safe_ssl::{fit_supervised, mcp_spn, McpConfig, Objective, Validation};
use crate::spn::Spn;
use crate::structure::{
    candidate_depths, learn_structure, remove_degenerate_leaves, select_truncation, truncate, LearnedStructure,
    StructureConfig, TruncationMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub objective: Objective,
    /// Mean test log-likelihood (generative) or test macro-F1 (discriminative).
    pub supervised_metric: f64,
    pub ssl_metric: f64,
    pub oracle_metric: Option<f64>,
    /// Positive-class F1 for two-class discriminative runs.
    pub supervised_binary_f1: Option<f64>,
    pub ssl_binary_f1: Option<f64>,
    /// Training objective of the semi-supervised and supervised models on the final soft labels.
    pub safety_ssl: f64,
    pub safety_supervised: f64,
    pub fell_back: bool,
    pub depth: usize,
    pub outer_iterations: usize,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl TrialResult {
    /// `L(theta*) >= L(theta+) - 1e-9`.
    pub fn is_safe(&self) -> bool {
        self.safety_ssl >= self.safety_supervised - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub methods: Vec<MethodSummary>,
    /// Successful trials, ordered by seed.
    pub trials: Vec<TrialResult>,
    /// `(seed, error message)` for excluded trials.
    pub failures: Vec<(u64, String)>,
}

impl ExperimentReport {
    pub fn from_trials(mut trials: Vec<TrialResult>, failures: Vec<(u64, String)>) -> Self {
        trials.sort_by_key(|t| t.seed);
        let summary = |name: &str, vals: Vec<f64>| {
            let (mean, stderr) = mean_and_stderr(&vals);
            MethodSummary { method: name.into(), mean, stderr, trials: vals.len() }
        };
        let mut methods = vec![
            summary("supervised", trials.iter().map(|t| t.supervised_metric).collect()),
            summary("ssl", trials.iter().map(|t| t.ssl_metric).collect()),
        ];
        let oracle: Vec<f64> = trials.iter().filter_map(|t| t.oracle_metric).collect();
        if !oracle.is_empty() {
            methods.push(summary("oracle", oracle));
        }
        let bin: Vec<f64> = trials.iter().filter_map(|t| t.supervised_binary_f1).collect();
        if !bin.is_empty() {
            methods.push(summary("supervised_binary_f1", bin));
            methods.push(summary("ssl_binary_f1", trials.iter().filter_map(|t| t.ssl_binary_f1).collect()));
        }
        Self { methods, trials, failures }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mean,stderr,trials,failed\n");
        for m in &self.methods {
            writeln!(out, "{},{:.17e},{:.17e},{},{}", m.method, m.mean, m.stderr, m.trials, self.failures.len()).unwrap();
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t).expect("trial serializes"));
            out.push('\n');
        }
        out
    }

    /// Per-trial wall-clock times; kept apart from the reproducible files.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("seed,runtime_seconds\n");
        for t in &self.trials {
            writeln!(out, "{},{:.3}", t.seed, t.runtime_seconds).unwrap();
        }
        out
    }

    /// Writes `report.csv`, `results.jsonl`, `failures.txt` and `timing.csv`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("results.jsonl"), self.to_jsonl())?;
        let mut fails = String::new();
        for (seed, msg) in &self.failures {
            writeln!(fails, "{seed}\t{msg}").unwrap();
        }
        std::fs::write(dir.join("failures.txt"), fails)?;
        std::fs::write(dir.join("timing.csv"), self.timing_csv())
    }
}

/// Learns a structure, cleans degenerate leaves and truncates it per `choice`.
/// `val` is only used by validation-based truncation.
#[allow(clippy::too_many_arguments)]
pub fn build_structure(
    x: &[Vec<f64>],
    y: &[usize],
    u: &[Vec<f64>],
    val: Validation<'_, f64>,
    k: usize,
    structure: &StructureConfig,
    training: &McpConfig,
    choice: TruncationChoice,
) -> Result<(LearnedStructure<f64>, usize)> {
    let learned = remove_degenerate_leaves(&learn_structure(x, y, u, k, structure)?);
    let mode = match choice {
        TruncationChoice::None => {
            let d = learned.spn.max_depth();
            return Ok((learned, d));
        }
        TruncationChoice::Aic => TruncationMode::Aic { x, y, em: training.em },
        TruncationChoice::Validation => {
            TruncationMode::Validation { x, y, val_x: val.x, val_y: val.y, grad: training.grad }
        }
    };
    let (depth, _) = select_truncation(&learned, &candidate_depths(&learned), &mode)?;
    Ok((truncate(&learned, depth), depth))
}

fn test_metric(spn: &Spn<f64>, x: &[Vec<f64>], y: &[usize], objective: Objective) -> Result<(f64, Option<f64>)> {
    match objective {
        Objective::Generative => Ok((mean_test_ll(spn, x, y)?, None)),
        Objective::Discriminative => {
            let pred = predict_all(spn, x)?;
            let k = spn.num_classes();
            let bin = if k == 2 { Some(binary_f1(y, &pred)?) } else { None };
            Ok((macro_f1(y, &pred, k)?, bin))
        }
    }
}

/// One complete trial for `seed`.
pub fn run_trial(data: &Dataset<f64>, cfg: &ExperimentConfig, seed: u64) -> Result<TrialResult> {
    let start = Instant::now();
    let mut spec = SplitSpec::standard(data, seed);
    spec.test_fraction = cfg.test_fraction;
    if let Some(n) = cfg.labelled_count {
        spec.labelled_count = n;
    }
    if let Some(n) = cfg.validation_count {
        spec.validation_count = n;
    }
    let split = make_split(data, &spec).map_err(|e| SpnError::Config(e.to_string()))?;
    let (pd, _) = preprocess(data, &split.train()).map_err(|e| SpnError::Config(e.to_string()))?;
    let (x, y) = pd.labelled_rows(&split.labelled);
    let (vx, vy) = pd.labelled_rows(&split.validation);
    let u = pd.rows(&split.unlabelled);
    let (tx, ty) = pd.labelled_rows(&split.test);
    let k = pd.num_classes;
    let objective = cfg.objective();

    let structure_cfg = StructureConfig { seed, ..cfg.structure };
    let mut training = cfg.training.clone();
    training.seed = seed;
    let val = Validation { x: &vx, y: &vy };
    let (structure, depth) =
        build_structure(&x, &y, &u, val, k, &structure_cfg, &training, cfg.truncation_choice())?;
    let outcome = mcp_spn(&structure.spn, &x, &y, &u, Some(val), &training)?;
    let (supervised_metric, supervised_binary_f1) = test_metric(&outcome.theta_plus, &tx, &ty, objective)?;
    let (ssl_metric, ssl_binary_f1) = test_metric(&outcome.theta_star, &tx, &ty, objective)?;

    let oracle_metric = if cfg.oracle {
        let mut all: Vec<usize> = split.train();
        all.retain(|i| pd.labels[*i].is_some());
        let (ox, oy) = pd.labelled_rows(&all);
        let (oracle, _) = build_structure(&ox, &oy, &[], val, k, &structure_cfg, &training, cfg.truncation_choice())?;
        let mut spn = oracle.spn;
        fit_supervised(&mut spn, &ox, &oy, &training)?;
        Some(test_metric(&spn, &tx, &ty, objective)?.0)
    } else {
        None
    };

    Ok(TrialResult {
        seed,
        objective,
        supervised_metric,
        ssl_metric,
        oracle_metric,
        supervised_binary_f1,
        ssl_binary_f1,
        safety_ssl: outcome.safety.0,
        safety_supervised: outcome.safety.1,
        fell_back: outcome.fell_back,
        depth,
        outer_iterations: outcome.history.len(),
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs `cfg.trials` independent trials (in parallel) on an already loaded dataset.
pub fn run_experiment_on(data: &Dataset<f64>, cfg: &ExperimentConfig) -> ExperimentReport {
    let outcomes: Vec<(u64, Result<TrialResult>)> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed + i;
            (seed, run_trial(data, cfg, seed))
        })
        .collect();
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(t) => trials.push(t),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    ExperimentReport::from_trials(trials, failures)
}

/// Loads the configured dataset and runs the experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let path = cfg.dataset.as_ref().ok_or_else(|| SpnError::Config("config has no dataset".into()))?;
    let data = load_csv(path, &cfg.label_column).map_err(|e| SpnError::Config(format!("{}: {e}", path.display())))?;
    Ok(run_experiment_on(&data, cfg))
}

/// `x,y,log_density` over a regular grid of the first two features, for plotting.
pub fn density_grid(spn: &Spn<f64>, x_range: (f64, f64), y_range: (f64, f64), steps: usize) -> Result<String> {
    let mut out = String::from("x,y,log_density\n");
    let step = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (steps.max(2) - 1) as f64;
    for i in 0..steps {
        for j in 0..steps {
            let p = [step(x_range, i), step(y_range, j)];
            let v = spn.log_value(&crate::spn::Evidence::marginal(&p))?;
            writeln!(out, "{},{},{}", p[0], p[1], v).unwrap();
        }
    }
    Ok(out)
}
