//! Discriminative learning: conditional log-likelihood `sum log S[y|x] + sum log S[q|u]`,
//! its gradient by two backward passes per datum, and line-searched projected ascent.

use crate::batch::Batch;
use crate::error::{Result, SpnError};
use crate::gen_learn::{relative_change, FitReport};
use crate::parallel::map_reduce;
use crate::scalar::Real;
use crate::spn::{Node, ParamVector, Spn, Workspace};

/// Lower bound applied to every weight after an ascent step.
pub const MIN_WEIGHT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub learning_rate: f64,
    pub max_halvings: usize,
}

impl Default for GradConfig {
    fn default() -> Self {
        Self { max_iters: 500, rel_tol: 1e-6, learning_rate: 0.1, max_halvings: 20 }
    }
}

/// Gradient in the layout of [`ParamVector`].
pub type GradientVector<F> = ParamVector<F>;

pub fn conditional_ll<F: Real>(spn: &Spn<F>, batch: &Batch<'_, F>) -> Result<F> {
    spn.ensure_valid()?;
    let total = map_reduce(
        batch.len(),
        |range| {
            let mut ws = Workspace::new(spn);
            let mut s = F::zero();
            for i in range {
                let ev = batch.evidence(i);
                if ev.features.len() != spn.num_features() {
                    return Err(SpnError::DimensionMismatch { expected: spn.num_features(), got: ev.features.len() });
                }
                let joint = ws.forward(spn, &ev);
                let marginal = ws.forward(spn, &batch.marginal_evidence(i));
                if marginal == F::neg_infinity() {
                    return Err(SpnError::DegenerateEvidence { index: i });
                }
                s = s + (joint - marginal);
            }
            Ok(s)
        },
        |a, b| a + b,
    )?;
    Ok(total.unwrap_or_else(F::zero))
}

/// Objective and its gradient with respect to every weight, mean and variance.
pub fn cll_gradient<F: Real>(spn: &Spn<F>, batch: &Batch<'_, F>) -> Result<(F, GradientVector<F>)> {
    spn.ensure_valid()?;
    let zeros = || GradientVector {
        weights: vec![F::zero(); spn.num_edges()],
        means: vec![F::zero(); spn.num_gaussians()],
        variances: vec![F::zero(); spn.num_gaussians()],
    };
    let reduced = map_reduce(
        batch.len(),
        |range| {
            let mut cond = Workspace::new(spn);
            let mut marg = Workspace::new(spn);
            let mut grad = zeros();
            let mut obj = F::zero();
            for i in range {
                let ev = batch.evidence(i);
                if ev.features.len() != spn.num_features() {
                    return Err(SpnError::DimensionMismatch { expected: spn.num_features(), got: ev.features.len() });
                }
                let ra = cond.run(spn, &ev);
                let rb = marg.run(spn, &batch.marginal_evidence(i));
                if ra == F::neg_infinity() || rb == F::neg_infinity() {
                    return Err(SpnError::DegenerateEvidence { index: i });
                }
                obj = obj + (ra - rb);
                accumulate_gradient(spn, ev.features, &cond, ra, &marg, rb, &mut grad);
            }
            Ok((obj, grad))
        },
        |(oa, mut ga), (ob, gb)| {
            ga.add_assign(&gb);
            (oa + ob, ga)
        },
    )?;
    Ok(reduced.unwrap_or_else(|| (F::zero(), zeros())))
}

/// Adds `(1/S[y|x]) dS[y|x]/dtheta - (1/S[1|x]) dS[1|x]/dtheta` for one datum.
fn accumulate_gradient<F: Real>(
    spn: &Spn<F>,
    x: &[F],
    cond: &Workspace<F>,
    root_cond: F,
    marg: &Workspace<F>,
    root_marg: F,
    grad: &mut GradientVector<F>,
) {
    let ratio = |d: F, v: F, root: F| {
        if d == F::neg_infinity() || v == F::neg_infinity() {
            F::zero()
        } else {
            (d + v - root).exp()
        }
    };
    for (i, node) in spn.nodes().iter().enumerate() {
        match node {
            Node::Sum { children, .. } => {
                let (da, db) = (cond.derivs[i], marg.derivs[i]);
                let off = spn.edge_offset(i);
                for (j, c) in children.iter().enumerate() {
                    let g = ratio(da, cond.values[c.0], root_cond) - ratio(db, marg.values[c.0], root_marg);
                    grad.weights[off + j] = grad.weights[off + j] + g;
                }
            }
            Node::Gaussian(leaf) => {
                // (1/S) dS/dS_leaf * dp/dtheta = responsibility * dlog p/dtheta
                let r = ratio(cond.derivs[i], cond.values[i], root_cond) - ratio(marg.derivs[i], marg.values[i], root_marg);
                let (sm, sv) = leaf.score(x[leaf.var]);
                let g = spn.gauss_index(i);
                grad.means[g] = grad.means[g] + r * sm;
                grad.variances[g] = grad.variances[g] + r * sv;
            }
            _ => {}
        }
    }
}

/// Step, clamp weights to `MIN_WEIGHT` and renormalize, clamp variances to the floor.
pub fn ascent_step<F: Real>(spn: &mut Spn<F>, grad: &GradientVector<F>, lr: F) {
    let mut p = spn.params();
    let min_w = F::lit(MIN_WEIGHT);
    let mut off = 0;
    for node in spn.nodes() {
        if let Node::Sum { children, .. } = node {
            let n = children.len();
            let ws = &mut p.weights[off..off + n];
            for (w, &g) in ws.iter_mut().zip(&grad.weights[off..off + n]) {
                *w = (*w + lr * g).max(min_w);
            }
            let total: F = ws.iter().copied().sum();
            for w in ws.iter_mut() {
                *w = *w / total;
            }
            off += n;
        }
    }
    let floor = spn.variance_floor();
    for (m, &g) in p.means.iter_mut().zip(&grad.means) {
        *m = *m + lr * g;
    }
    for (v, &g) in p.variances.iter_mut().zip(&grad.variances) {
        *v = (*v + lr * g).max(floor);
    }
    spn.set_params(&p);
}

/// Diagonal rescaling of a gradient into an ascent direction: weights by `w`, means by the
/// variance, variances by `2 var^2` (the inverse Fisher information of each Gaussian parameter).
pub fn precondition<F: Real>(spn: &Spn<F>, grad: &GradientVector<F>) -> GradientVector<F> {
    let p = spn.params();
    let two = F::lit(2.0);
    GradientVector {
        weights: grad.weights.iter().zip(&p.weights).map(|(&g, &w)| g * w).collect(),
        means: grad.means.iter().zip(&p.variances).map(|(&g, &v)| g * v).collect(),
        variances: grad.variances.iter().zip(&p.variances).map(|(&g, &v)| g * two * v * v).collect(),
    }
}

/// Full-batch preconditioned ascent with backtracking; the objective sequence is non-decreasing.
pub fn fit_discriminative<F: Real>(
    spn: &mut Spn<F>,
    batch: &Batch<'_, F>,
    cfg: &GradConfig,
) -> Result<FitReport<F>> {
    if cfg.max_iters == 0 || !(cfg.learning_rate > 0.0) {
        return Err(SpnError::Config("gradient ascent needs max_iters >= 1 and a positive rate".into()));
    }
    let lr0 = F::lit(cfg.learning_rate);
    let (mut obj, mut grad) = cll_gradient(spn, batch)?;
    let mut trace = vec![obj];
    let mut lr = lr0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let saved = spn.params();
        let dir = precondition(spn, &grad);
        let scale = F::one() / dir.norm().max(F::one());
        let mut step = lr;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            ascent_step(spn, &dir, step * scale);
            let candidate = conditional_ll(spn, batch)?;
            if candidate >= obj {
                accepted = Some(candidate);
                break;
            }
            spn.set_params(&saved);
            step = step / F::lit(2.0);
        }
        let Some(new_obj) = accepted else {
            converged = true;
            break;
        };
        iterations += 1;
        let rel = relative_change(new_obj, obj);
        obj = new_obj;
        trace.push(obj);
        if rel < F::lit(cfg.rel_tol) {
            converged = true;
            break;
        }
        let (o, g) = cll_gradient(spn, batch)?;
        debug_assert!((o - obj).abs() <= F::lit(1e-9) * obj.abs().max(F::one()));
        grad = g;
        lr = (step * F::lit(2.0)).min(lr0);
    }
    Ok(FitReport { objective: obj, trace, clamped: Vec::new(), iterations, converged })
}
