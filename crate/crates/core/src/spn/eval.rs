//! Upward (value) and downward (derivative) passes, all in the log domain.

use super::{Node, Spn};
use crate::error::{Result, SpnError};
use crate::leaves::ClassAssignment;
use crate::scalar::{log_add_exp, Real};

/// Complete evidence over the features plus an assignment for the class indicators.
#[derive(Debug, Clone, Copy)]
pub struct Evidence<'a, F> {
    pub features: &'a [F],
    pub class: ClassAssignment<'a, F>,
}

impl<'a, F> Evidence<'a, F> {
    pub fn new(features: &'a [F], class: ClassAssignment<'a, F>) -> Self {
        Self { features, class }
    }

    pub fn labelled(features: &'a [F], class: usize) -> Self {
        Self { features, class: ClassAssignment::OneHot(class) }
    }

    pub fn marginal(features: &'a [F]) -> Self {
        Self { features, class: ClassAssignment::Marginalized }
    }

    pub fn soft(features: &'a [F], q: &'a [F]) -> Self {
        Self { features, class: ClassAssignment::Soft(q) }
    }
}

/// Per-node `log S_i[evidence]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTrace<F> {
    pub log_values: Vec<F>,
    structure_id: u64,
}

impl<F: Real> EvaluationTrace<F> {
    pub fn root_log_value(&self, spn: &Spn<F>) -> F {
        self.log_values[spn.root().0]
    }
}

/// Per-node `log dS/dS_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives<F> {
    pub log_node_derivs: Vec<F>,
}

/// Parameter-derived constants shared by every datum of a pass: log edge weights and the
/// Gaussian normalizers. Stale as soon as the parameters change.
#[derive(Debug, Clone)]
pub(crate) struct Prepared<F> {
    log_weights: Vec<F>,
    /// Per node: `-log(2 pi var) / 2` and `1 / (2 var)` for Gaussian leaves, unused otherwise.
    gauss: Vec<(F, F)>,
}

impl<F: Real> Prepared<F> {
    pub(crate) fn new(spn: &Spn<F>) -> Self {
        let mut log_weights = Vec::with_capacity(spn.num_edges());
        let mut gauss = vec![(F::zero(), F::zero()); spn.len()];
        for (i, n) in spn.nodes().iter().enumerate() {
            match n {
                Node::Sum { weights, .. } => log_weights.extend(weights.iter().map(|w| w.ln())),
                Node::Gaussian(g) => {
                    let v = g.variance;
                    gauss[i] = (-F::lit(0.5) * (F::lit(std::f64::consts::TAU) * v).ln(), F::one() / (F::lit(2.0) * v));
                }
                _ => {}
            }
        }
        Self { log_weights, gauss }
    }
}

/// Reusable buffers for the hot loops of the learners. Build a fresh one after changing the
/// network's parameters.
#[derive(Debug, Clone)]
pub struct Workspace<F> {
    pub values: Vec<F>,
    pub derivs: Vec<F>,
    prep: Prepared<F>,
}

impl<F: Real> Workspace<F> {
    pub fn new(spn: &Spn<F>) -> Self {
        Self { values: vec![F::zero(); spn.len()], derivs: vec![F::zero(); spn.len()], prep: Prepared::new(spn) }
    }

    /// Runs both passes; returns the root log-value.
    pub fn run(&mut self, spn: &Spn<F>, ev: &Evidence<'_, F>) -> F {
        spn.forward(ev, &self.prep, &mut self.values);
        spn.backward(&self.values, &self.prep, &mut self.derivs);
        self.values[spn.root().0]
    }

    pub fn forward(&mut self, spn: &Spn<F>, ev: &Evidence<'_, F>) -> F {
        spn.forward(ev, &self.prep, &mut self.values);
        self.values[spn.root().0]
    }
}

impl<F: Real> Spn<F> {
    pub(crate) fn ensure_valid(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(SpnError::InvalidSpn(self.validate().clone()))
        }
    }

    fn check_dims(&self, features: &[F]) -> Result<()> {
        if features.len() != self.num_features() {
            return Err(SpnError::DimensionMismatch { expected: self.num_features(), got: features.len() });
        }
        Ok(())
    }

    pub fn evaluate(&self, ev: &Evidence<'_, F>) -> Result<EvaluationTrace<F>> {
        self.ensure_valid()?;
        self.check_dims(ev.features)?;
        let mut log_values = vec![F::zero(); self.len()];
        self.forward(ev, &Prepared::new(self), &mut log_values);
        Ok(EvaluationTrace { log_values, structure_id: self.structure_id() })
    }

    /// `log S[evidence]` at the root.
    pub fn log_value(&self, ev: &Evidence<'_, F>) -> Result<F> {
        Ok(self.evaluate(ev)?.root_log_value(self))
    }

    pub fn derivative_pass(&self, trace: &EvaluationTrace<F>) -> Result<Derivatives<F>> {
        if trace.structure_id != self.structure_id() || trace.log_values.len() != self.len() {
            return Err(SpnError::TraceMismatch);
        }
        let mut log_node_derivs = vec![F::zero(); self.len()];
        self.backward(&trace.log_values, &Prepared::new(self), &mut log_node_derivs);
        Ok(Derivatives { log_node_derivs })
    }

    /// `log S[x, OneHot(k)]` for every class.
    pub fn class_log_joint(&self, x: &[F]) -> Result<Vec<F>> {
        self.ensure_valid()?;
        self.check_dims(x)?;
        let mut buf = vec![F::zero(); self.len()];
        let prep = Prepared::new(self);
        Ok((0..self.num_classes())
            .map(|k| {
                self.forward(&Evidence::labelled(x, k), &prep, &mut buf);
                buf[self.root().0]
            })
            .collect())
    }

    /// `p(y = k | x) = S[x, OneHot(k)] / S[x, Marginalized]`.
    pub fn class_posterior(&self, x: &[F]) -> Result<Vec<F>> {
        let joint = self.class_log_joint(x)?;
        let marginal = self.log_value(&Evidence::marginal(x))?;
        if marginal == F::neg_infinity() {
            return Err(SpnError::DegenerateEvidence { index: 0 });
        }
        Ok(joint.into_iter().map(|l| (l - marginal).exp()).collect())
    }

    /// Unchecked upward pass into `out` (one slot per node).
    pub(crate) fn forward(&self, ev: &Evidence<'_, F>, prep: &Prepared<F>, out: &mut [F]) {
        for &i in self.topological_order() {
            out[i] = match &self.nodes[i] {
                Node::Gaussian(g) => {
                    let d = ev.features[g.var] - g.mean;
                    let (norm, half_prec) = prep.gauss[i];
                    norm - d * d * half_prec
                }
                Node::Indicator(ind) => ind.value(&ev.class).ln(),
                Node::Product { children } => {
                    children.iter().fold(F::zero(), |acc, c| acc + out[c.0])
                }
                Node::Sum { children, weights } => {
                    let mut max = F::neg_infinity();
                    for (c, &w) in children.iter().zip(weights) {
                        if w > F::zero() {
                            max = max.max(out[c.0]);
                        }
                    }
                    if max == F::neg_infinity() || max == F::infinity() {
                        max
                    } else {
                        let mut s = F::zero();
                        for (c, &w) in children.iter().zip(weights) {
                            if w > F::zero() {
                                s = s + w * (out[c.0] - max).exp();
                            }
                        }
                        max + s.ln()
                    }
                }
            };
        }
    }

    /// Unchecked downward pass: `out[i] = log dS_root / dS_i` given forward values.
    pub(crate) fn backward(&self, values: &[F], prep: &Prepared<F>, out: &mut [F]) {
        for d in out.iter_mut() {
            *d = F::neg_infinity();
        }
        out[self.root().0] = F::zero();
        for &i in self.topological_order().iter().rev() {
            let di = out[i];
            if di == F::neg_infinity() {
                continue;
            }
            match &self.nodes[i] {
                Node::Sum { children, .. } => {
                    let off = self.edge_offset(i);
                    for (j, c) in children.iter().enumerate() {
                        out[c.0] = log_add_exp(out[c.0], di + prep.log_weights[off + j]);
                    }
                }
                Node::Product { children } => {
                    for (j, c) in children.iter().enumerate() {
                        let vj = values[c.0];
                        let siblings = if vj > F::neg_infinity() {
                            values[i] - vj
                        } else {
                            children
                                .iter()
                                .enumerate()
                                .filter(|&(l, _)| l != j)
                                .fold(F::zero(), |acc, (_, s)| acc + values[s.0])
                        };
                        out[c.0] = log_add_exp(out[c.0], di + siblings);
                    }
                }
                _ => {}
            }
        }
    }
}
