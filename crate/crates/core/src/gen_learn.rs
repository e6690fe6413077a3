//! Generative parameter learning: EM on labelled data plus soft-labelled unlabelled data.

use crate::batch::Batch;
use crate::error::{Result, SpnError};
use crate::leaves::SufficientStats;
use crate::parallel::map_reduce;
use crate::scalar::Real;
use crate::spn::{Node, Spn, Workspace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Added to every expected edge count before renormalizing.
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 200, rel_tol: 1e-6, smoothing: 1e-8 }
    }
}

/// Expected counts and sufficient statistics collected by one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmAccumulators<F> {
    /// Expected count per sum edge, in `ParamVector::weights` layout.
    pub edge_counts: Vec<F>,
    /// Responsibility-weighted statistics per Gaussian leaf.
    pub leaf_stats: Vec<SufficientStats<F>>,
    /// Objective at the parameters the statistics were collected under.
    pub log_likelihood: F,
}

impl<F: Real> EmAccumulators<F> {
    fn zeros(spn: &Spn<F>) -> Self {
        Self {
            edge_counts: vec![F::zero(); spn.num_edges()],
            leaf_stats: vec![SufficientStats::default(); spn.num_gaussians()],
            log_likelihood: F::zero(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.edge_counts.iter_mut().zip(&other.edge_counts) {
            *a = *a + *b;
        }
        for (a, b) in self.leaf_stats.iter_mut().zip(&other.leaf_stats) {
            a.merge(b);
        }
        self.log_likelihood = self.log_likelihood + other.log_likelihood;
        self
    }
}

/// `sum_n log S[x_n, y_n] + sum_m log S[u_m, q_m]`.
pub fn generative_ll<F: Real>(spn: &Spn<F>, batch: &Batch<'_, F>) -> Result<F> {
    spn.ensure_valid()?;
    let total = map_reduce(
        batch.len(),
        |range| {
            let mut ws = Workspace::new(spn);
            let mut s = F::zero();
            for i in range {
                let ev = batch.evidence(i);
                check_dims(spn, ev.features)?;
                let v = ws.forward(spn, &ev);
                if v == F::neg_infinity() {
                    return Err(SpnError::DegenerateEvidence { index: i });
                }
                s = s + v;
            }
            Ok(s)
        },
        |a, b| a + b,
    )?;
    Ok(total.unwrap_or_else(F::zero))
}

fn check_dims<F: Real>(spn: &Spn<F>, x: &[F]) -> Result<()> {
    if x.len() != spn.num_features() {
        return Err(SpnError::DimensionMismatch { expected: spn.num_features(), got: x.len() });
    }
    Ok(())
}

/// E-step: for every datum, `n_ij += w_ij (1/S) dS/dS_i S_j` and `g_i = (1/S) dS/dS_i S_i`.
pub fn accumulate<F: Real>(spn: &Spn<F>, batch: &Batch<'_, F>) -> Result<EmAccumulators<F>> {
    spn.ensure_valid()?;
    let acc = map_reduce(
        batch.len(),
        |range| {
            let mut ws = Workspace::new(spn);
            let mut acc = EmAccumulators::zeros(spn);
            for i in range {
                let ev = batch.evidence(i);
                check_dims(spn, ev.features)?;
                let root = ws.run(spn, &ev);
                if root == F::neg_infinity() {
                    return Err(SpnError::DegenerateEvidence { index: i });
                }
                acc.log_likelihood = acc.log_likelihood + root;
                for (node_idx, node) in spn.nodes().iter().enumerate() {
                    let d = ws.derivs[node_idx];
                    if d == F::neg_infinity() {
                        continue;
                    }
                    match node {
                        Node::Sum { children, weights } => {
                            let off = spn.edge_offset(node_idx);
                            for (j, (c, &w)) in children.iter().zip(weights).enumerate() {
                                if w > F::zero() {
                                    let r = (w.ln() + d + ws.values[c.0] - root).exp();
                                    acc.edge_counts[off + j] = acc.edge_counts[off + j] + r;
                                }
                            }
                        }
                        Node::Gaussian(g) => {
                            let resp = (d + ws.values[node_idx] - root).exp();
                            acc.leaf_stats[spn.gauss_index(node_idx)].push(resp, ev.features[g.var]);
                        }
                        _ => {}
                    }
                }
            }
            Ok(acc)
        },
        EmAccumulators::merge,
    )?;
    Ok(acc.unwrap_or_else(|| EmAccumulators::zeros(spn)))
}

/// Outcome of one M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStep {
    /// Some leaf variance was clamped to the floor.
    pub clamped: bool,
    /// Leaves that received no responsibility and kept their parameters.
    pub skipped_leaves: usize,
}

/// M-step: `w_ij = (n_ij + eps) / sum_l (n_il + eps)`, Gaussian leaves from weighted moments.
pub fn maximize<F: Real>(spn: &mut Spn<F>, acc: &EmAccumulators<F>, smoothing: f64) -> MStep {
    let eps = F::lit(smoothing);
    let floor = spn.variance_floor();
    let mut params = spn.params();
    let mut offset = 0;
    for node in spn.nodes() {
        if let Node::Sum { weights, .. } = node {
            let n = weights.len();
            let counts = &acc.edge_counts[offset..offset + n];
            let total: F = counts.iter().map(|&c| c + eps).sum();
            if total > F::zero() {
                for (w, &c) in params.weights[offset..offset + n].iter_mut().zip(counts) {
                    *w = (c + eps) / total;
                }
            }
            offset += n;
        }
    }
    let mut step = MStep { clamped: false, skipped_leaves: 0 };
    for (g, stats) in acc.leaf_stats.iter().enumerate() {
        match stats.solve(floor) {
            Ok((mean, var, clamped)) => {
                params.means[g] = mean;
                params.variances[g] = var;
                step.clamped |= clamped;
            }
            Err(_) => step.skipped_leaves += 1,
        }
    }
    spn.set_params(&params);
    step
}

/// One full EM iteration. Returns the objective before the update and the M-step summary.
pub fn em_step<F: Real>(spn: &mut Spn<F>, batch: &Batch<'_, F>, smoothing: f64) -> Result<(F, MStep)> {
    let acc = accumulate(spn, batch)?;
    let m = maximize(spn, &acc, smoothing);
    Ok((acc.log_likelihood, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<F> {
    /// Objective at the returned parameters.
    pub objective: F,
    /// Objective before each applied update, then the final value.
    pub trace: Vec<F>,
    /// Per applied update: whether a variance clamp occurred.
    pub clamped: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn relative_change<F: Real>(new: F, old: F) -> F {
    (new - old).abs() / old.abs().max(F::one())
}

/// Repeats EM until the relative objective change drops below `rel_tol` or the budget runs out.
pub fn fit_generative<F: Real>(spn: &mut Spn<F>, batch: &Batch<'_, F>, cfg: &EmConfig) -> Result<FitReport<F>> {
    if cfg.max_iters == 0 || !(cfg.rel_tol > 0.0) {
        return Err(SpnError::Config("EM needs max_iters >= 1 and rel_tol > 0".into()));
    }
    let mut trace = Vec::new();
    let mut clamped = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut prev: Option<F> = None;
    loop {
        let acc = accumulate(spn, batch)?;
        let ll = acc.log_likelihood;
        trace.push(ll);
        if let Some(p) = prev {
            if relative_change(ll, p) < F::lit(cfg.rel_tol) {
                converged = true;
                break;
            }
        }
        if iterations == cfg.max_iters {
            break;
        }
        let m = maximize(spn, &acc, cfg.smoothing);
        clamped.push(m.clamped);
        iterations += 1;
        prev = Some(ll);
    }
    let objective = *trace.last().expect("at least one evaluation");
    Ok(FitReport { objective, trace, clamped, iterations, converged })
}
