//! Contrastive pessimistic likelihood: adversarial soft labels for unlabelled data and the
//! alternating MCP-SPN loop with a fallback to the supervised solution.

mod simplex;

pub use simplex::project_simplex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Uniform};
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::disc_learn::{conditional_ll, fit_discriminative, GradConfig};
use crate::error::{Result, SpnError};
use crate::gen_learn::{fit_generative, generative_ll, EmConfig};
use crate::metrics::{macro_f1, predict_all};
use crate::scalar::{log_sum_exp, Real};
use crate::spn::{Evidence, Spn, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Generative,
    Discriminative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Posterior of the supervised model.
    Optimistic,
    /// Independent draws from `Dir(1/K, ..., 1/K)`.
    Dirichlet,
}

impl Objective {
    /// Default soft-label initialisation for this objective.
    pub fn default_init(self) -> InitMode {
        match self {
            Objective::Generative => InitMode::Dirichlet,
            Objective::Discriminative => InitMode::Optimistic,
        }
    }
}

/// One point of the `(K-1)`-simplex per unlabelled datum.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabels<F> {
    rows: Vec<Vec<F>>,
    num_classes: usize,
}

impl<F: Real> SoftLabels<F> {
    pub fn new(rows: Vec<Vec<F>>, num_classes: usize) -> Result<Self> {
        for (m, r) in rows.iter().enumerate() {
            let s: F = r.iter().copied().sum();
            if r.len() != num_classes
                || r.iter().any(|&v| v < F::zero() || !v.is_finite())
                || (s - F::one()).abs() > F::lit(1e-9).max(F::epsilon() * F::lit(16.0))
            {
                return Err(SpnError::Config(format!("soft label row {m} is not on the simplex")));
            }
        }
        Ok(Self { rows, num_classes })
    }

    pub fn empty(num_classes: usize) -> Self {
        Self { rows: Vec::new(), num_classes }
    }

    pub fn rows(&self) -> &[Vec<F>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// `L(theta | X, U, q)` for the chosen objective.
pub fn objective_value<F: Real>(spn: &Spn<F>, batch: &Batch<'_, F>, objective: Objective) -> Result<F> {
    match objective {
        Objective::Generative => generative_ll(spn, batch),
        Objective::Discriminative => conditional_ll(spn, batch),
    }
}

/// Adversarial state: frozen supervised network, current network, soft labels and step schedule.
#[derive(Debug, Clone)]
pub struct CpleState<F> {
    theta_plus: Spn<F>,
    pub theta_star: Spn<F>,
    pub q: SoftLabels<F>,
    pub alpha0: F,
    pub iteration: usize,
    pub objective: Objective,
}

impl<F: Real> CpleState<F> {
    pub fn new(theta_plus: Spn<F>, q: SoftLabels<F>, alpha0: F, objective: Objective) -> Self {
        Self { theta_star: theta_plus.clone(), theta_plus, q, alpha0, iteration: 1, objective }
    }

    pub fn theta_plus(&self) -> &Spn<F> {
        &self.theta_plus
    }

    /// `alpha0 / sqrt(iteration)`.
    pub fn alpha(&self) -> F {
        self.alpha0 / F::from_usize_lossy(self.iteration.max(1)).sqrt()
    }

    /// `L(theta* | X, U, q) - L(theta+ | X, U, q)`.
    pub fn cple_objective(&self, x: &[Vec<F>], y: &[usize], u: &[Vec<F>]) -> Result<F> {
        cple_value(&self.theta_star, &self.theta_plus, x, y, u, self.q.rows(), self.objective)
    }

    /// `grad q = dL(theta*)/dq - dL(theta+)/dq`.
    pub fn soft_label_gradient(&self, u: &[Vec<F>]) -> Result<Vec<Vec<F>>> {
        soft_label_gradient(&self.theta_star, &self.theta_plus, u, self.q.rows())
    }
}

fn cple_value<F: Real>(
    star: &Spn<F>,
    plus: &Spn<F>,
    x: &[Vec<F>],
    y: &[usize],
    u: &[Vec<F>],
    q: &[Vec<F>],
    objective: Objective,
) -> Result<F> {
    let batch = Batch::new(x, y, u, q)?;
    Ok(objective_value(star, &batch, objective)? - objective_value(plus, &batch, objective)?)
}

/// `dL/dq_mk = (dS[u_m, q_m]/dq_mk) / S[u_m, q_m]` for one network.
///
/// The derivative w.r.t. an indicator value is the summed backward signal of every indicator
/// leaf with that state. The marginal term of the conditional objective does not depend on
/// `q`, so the same expression serves both objectives.
pub fn log_likelihood_q_gradient<F: Real>(spn: &Spn<F>, u: &[Vec<F>], q: &[Vec<F>]) -> Result<Vec<Vec<F>>> {
    spn.ensure_valid()?;
    let by_class = spn.indicators_by_class();
    let mut ws = Workspace::new(spn);
    let mut out = Vec::with_capacity(u.len());
    let mut terms = Vec::new();
    for (m, (row, qm)) in u.iter().zip(q).enumerate() {
        let root = ws.run(spn, &Evidence::soft(row, qm));
        if root == F::neg_infinity() {
            return Err(SpnError::DegenerateEvidence { index: m });
        }
        out.push(
            by_class
                .iter()
                .map(|leaves| {
                    terms.clear();
                    terms.extend(leaves.iter().map(|&l| ws.derivs[l]));
                    (log_sum_exp(&terms) - root).exp()
                })
                .collect(),
        );
    }
    Ok(out)
}

pub fn soft_label_gradient<F: Real>(
    star: &Spn<F>,
    plus: &Spn<F>,
    u: &[Vec<F>],
    q: &[Vec<F>],
) -> Result<Vec<Vec<F>>> {
    let a = log_likelihood_q_gradient(star, u, q)?;
    let b = log_likelihood_q_gradient(plus, u, q)?;
    Ok(a.into_iter()
        .zip(b)
        .map(|(ra, rb)| ra.into_iter().zip(rb).map(|(x, y)| x - y).collect())
        .collect())
}

/// Draw from `Dir(a, ..., a)` via log-space Gamma sampling (`G(a) = G(a+1) U^(1/a)`), which
/// stays finite for small concentrations.
fn dirichlet_row<F: Real>(k: usize, concentration: f64, rng: &mut ChaCha8Rng) -> Vec<F> {
    let gamma = Gamma::new(concentration + 1.0, 1.0).expect("positive shape");
    let unif = Uniform::new(f64::MIN_POSITIVE, 1.0).expect("valid range");
    let logs: Vec<f64> = (0..k).map(|_| gamma.sample(rng).ln() + unif.sample(rng).ln() / concentration).collect();
    let z = log_sum_exp(&logs);
    let mut row: Vec<F> = logs.iter().map(|&l| F::lit((l - z).exp())).collect();
    let s: F = row.iter().copied().sum();
    for v in &mut row {
        *v = *v / s;
    }
    row
}

pub fn init_soft_labels<F: Real>(
    mode: InitMode,
    spn_plus: &Spn<F>,
    u: &[Vec<F>],
    seed: u64,
) -> Result<SoftLabels<F>> {
    let k = spn_plus.num_classes();
    let rows = match mode {
        InitMode::Optimistic => u
            .iter()
            .enumerate()
            .map(|(m, row)| {
                let p = spn_plus.class_posterior(row).map_err(|e| match e {
                    SpnError::DegenerateEvidence { .. } => SpnError::DegenerateEvidence { index: m },
                    other => other,
                })?;
                // Renormalize away rounding so rows sit on the simplex exactly.
                Ok(project_simplex(&p))
            })
            .collect::<Result<Vec<_>>>()?,
        InitMode::Dirichlet => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = 1.0 / k as f64;
            (0..u.len()).map(|_| dirichlet_row(k, a, &mut rng)).collect()
        }
    };
    SoftLabels::new(rows, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McpConfig {
    pub objective: Objective,
    /// `None` uses the objective's default.
    pub init: Option<InitMode>,
    pub alpha0: f64,
    pub max_outer: usize,
    /// Relative change of the CPLE objective that counts as converged.
    pub tol: f64,
    /// Outer iterations without validation improvement before stopping.
    pub patience: usize,
    /// Step halvings tried before a soft-label step is rejected.
    pub q_backtracks: usize,
    /// Where the first inner fit of `theta*` starts.
    pub star_init: StarInit,
    pub em: EmConfig,
    pub grad: GradConfig,
    pub seed: u64,
}

impl McpConfig {
    pub fn new(objective: Objective) -> Self {
        Self {
            objective,
            init: None,
            alpha0: 1.0,
            max_outer: 30,
            tol: 1e-6,
            patience: 10,
            q_backtracks: 10,
            star_init: StarInit::Supervised,
            em: EmConfig::default(),
            grad: GradConfig::default(),
            seed: 0,
        }
    }
}

/// Starting parameters of the semi-supervised network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StarInit {
    /// The structure's own parameters, the same start the supervised fit had.
    Structure,
    /// The fitted supervised parameters.
    Supervised,
}

/// Labelled hold-out used for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a, F> {
    pub x: &'a [Vec<F>],
    pub y: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub cple: f64,
    pub train_obj: f64,
    pub val_score: Option<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct McpOutcome<F> {
    pub theta_star: Spn<F>,
    pub theta_plus: Spn<F>,
    pub q: SoftLabels<F>,
    pub history: Vec<HistoryRecord>,
    /// `L(theta* | X, U, q)` and `L(theta+ | X, U, q)` at the returned `q`.
    pub safety: (F, F),
    /// The semi-supervised solution was worse and got replaced by the supervised one.
    pub fell_back: bool,
}

/// Fits `spn` on labelled data only, with the objective's learner.
pub fn fit_supervised<F: Real>(spn: &mut Spn<F>, x: &[Vec<F>], y: &[usize], cfg: &McpConfig) -> Result<F> {
    fit_objective(spn, &Batch::supervised(x, y)?, cfg)
}

fn fit_objective<F: Real>(spn: &mut Spn<F>, batch: &Batch<'_, F>, cfg: &McpConfig) -> Result<F> {
    Ok(match cfg.objective {
        Objective::Generative => fit_generative(spn, batch, &cfg.em)?.objective,
        Objective::Discriminative => fit_discriminative(spn, batch, &cfg.grad)?.objective,
    })
}

/// Validation score: log-likelihood (generative) or macro-F1 (discriminative).
pub fn validation_score<F: Real>(spn: &Spn<F>, val: &Validation<'_, F>, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Generative => Ok(generative_ll(spn, &Batch::supervised(val.x, val.y)?)?.as_f64()),
        Objective::Discriminative => {
            let pred = predict_all(spn, val.x)?;
            macro_f1(val.y, &pred, spn.num_classes())
        }
    }
}

/// One pessimistic step `q <- proj(q - alpha grad)`, halving `alpha` until the contrastive
/// objective does not increase. Returns the objective at the kept `q`.
#[allow(clippy::too_many_arguments)]
fn soft_label_step<F: Real>(
    state: &mut CpleState<F>,
    x: &[Vec<F>],
    y: &[usize],
    u: &[Vec<F>],
    current: F,
    backtracks: usize,
) -> Result<F> {
    let grad = state.soft_label_gradient(u)?;
    let mut alpha = state.alpha();
    for _ in 0..=backtracks {
        let rows: Vec<Vec<F>> = state
            .q
            .rows()
            .iter()
            .zip(&grad)
            .map(|(qm, gm)| {
                let moved: Vec<F> = qm.iter().zip(gm).map(|(&a, &g)| a - alpha * g).collect();
                project_simplex(&moved)
            })
            .collect();
        let value = cple_value(&state.theta_star, &state.theta_plus, x, y, u, &rows, state.objective)?;
        if value <= current {
            state.q = SoftLabels { rows, num_classes: state.q.num_classes() };
            return Ok(value);
        }
        alpha = alpha / F::lit(2.0);
    }
    Ok(current)
}

/// Alternates an inner maximisation of `theta*` at fixed soft labels with one pessimistic
/// soft-label step, then falls back to `theta+` if the contrastive objective ended negative.
pub fn mcp_spn<F: Real>(
    structure: &Spn<F>,
    x: &[Vec<F>],
    y: &[usize],
    u: &[Vec<F>],
    validation: Option<Validation<'_, F>>,
    cfg: &McpConfig,
) -> Result<McpOutcome<F>> {
    structure.ensure_valid()?;
    if cfg.alpha0 <= 0.0 || cfg.max_outer == 0 {
        return Err(SpnError::Config("mcp needs alpha0 > 0 and max_outer >= 1".into()));
    }
    let mut plus = structure.clone();
    fit_supervised(&mut plus, x, y, cfg)?;
    let k = plus.num_classes();
    if u.is_empty() {
        let l = objective_value(&plus, &Batch::supervised(x, y)?, cfg.objective)?;
        return Ok(McpOutcome {
            theta_star: plus.clone(),
            theta_plus: plus,
            q: SoftLabels::empty(k),
            history: Vec::new(),
            safety: (l, l),
            fell_back: false,
        });
    }

    let init = cfg.init.unwrap_or_else(|| cfg.objective.default_init());
    let q = init_soft_labels(init, &plus, u, cfg.seed)?;
    let mut state = CpleState::new(plus, q, F::lit(cfg.alpha0), cfg.objective);
    if cfg.star_init == StarInit::Structure {
        state.theta_star = structure.clone();
    }

    let mut history = Vec::new();
    let mut best: Option<((f64, f64), Spn<F>, SoftLabels<F>)> = None;
    let mut stale = 0;
    let mut prev_cple: Option<F> = None;
    for t in 1..=cfg.max_outer {
        state.iteration = t;
        let train_obj = {
            let batch = Batch::new(x, y, u, state.q.rows())?;
            fit_objective(&mut state.theta_star, &batch, cfg)?
        };
        let val_score = match &validation {
            Some(v) => Some(validation_score(&state.theta_star, v, cfg.objective)?),
            None => None,
        };
        if let Some(score) = val_score {
            // Macro-F1 on a small validation set ties often; the conditional log-likelihood
            // breaks ties.
            let key = match cfg.objective {
                Objective::Generative => (score, 0.0),
                Objective::Discriminative => {
                    let v = validation.as_ref().expect("score implies validation");
                    (score, conditional_ll(&state.theta_star, &Batch::supervised(v.x, v.y)?)?.as_f64())
                }
            };
            if best.as_ref().is_none_or(|(b, _, _)| key > *b) {
                best = Some((key, state.theta_star.clone(), state.q.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let before = state.cple_objective(x, y, u)?;
        let alpha = state.alpha();
        let cple = soft_label_step(&mut state, x, y, u, before, cfg.q_backtracks)?;
        history.push(HistoryRecord {
            iteration: t,
            cple: cple.as_f64(),
            train_obj: train_obj.as_f64(),
            val_score,
            alpha: alpha.as_f64(),
        });
        let converged = prev_cple.is_some_and(|p| (cple - p).abs() / p.abs().max(F::one()) < F::lit(cfg.tol));
        prev_cple = Some(cple);
        if converged || (validation.is_some() && stale >= cfg.patience) {
            break;
        }
    }

    let (mut star, q) = match best {
        Some((_, spn, q)) => (spn, q),
        None => (state.theta_star.clone(), state.q.clone()),
    };
    let plus = state.theta_plus;
    let batch = Batch::new(x, y, u, q.rows())?;
    let l_star = objective_value(&star, &batch, cfg.objective)?;
    let l_plus = objective_value(&plus, &batch, cfg.objective)?;
    let fell_back = l_star < l_plus;
    if fell_back {
        star = plus.clone();
    }
    let safety = if fell_back { (l_plus, l_plus) } else { (l_star, l_plus) };
    Ok(McpOutcome { theta_star: star, theta_plus: plus, q, history, safety, fell_back })
}
