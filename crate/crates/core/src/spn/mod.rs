//! Sum-product network representation, structural validity and parameter layout.

mod eval;
mod format;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

pub use eval::{Derivatives, EvaluationTrace, Evidence, Workspace};
pub use format::{parse_model, write_model};

use crate::leaves::{GaussianLeaf, IndicatorLeaf};
use crate::scalar::Real;

/// Tolerance on `|sum(w) - 1|` for a sum node to count as normalized, in double precision.
/// Narrower scalar types get `children * epsilon` on top.
pub const WEIGHT_NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub enum Node<F> {
    Sum { children: Vec<NodeId>, weights: Vec<F> },
    Product { children: Vec<NodeId> },
    Gaussian(GaussianLeaf<F>),
    Indicator(IndicatorLeaf),
}

impl<F> Node<F> {
    pub fn children(&self) -> &[NodeId] {
        match self {
            Node::Sum { children, .. } | Node::Product { children } => children,
            _ => &[],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Node::Gaussian(_) | Node::Indicator(_))
    }
}

/// Variable layout of a network: features `0..num_features` plus the class variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub num_features: usize,
    pub num_classes: usize,
    pub class_var: usize,
}

impl Header {
    /// Features `0..d`, class variable `d`.
    pub fn new(num_features: usize, num_classes: usize) -> Self {
        Self { num_features, num_classes, class_var: num_features }
    }

    /// Density over features only; no class variable in the root scope.
    pub fn unlabelled(num_features: usize) -> Self {
        Self::new(num_features, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DanglingChild { node: NodeId, child: NodeId },
    Cycle { node: NodeId },
    Unreachable { node: NodeId },
    EmptyChildren { node: NodeId },
    WeightCount { node: NodeId },
    NegativeWeight { node: NodeId, weight: f64 },
    Unnormalized { node: NodeId, total: f64 },
    Incomplete { node: NodeId },
    NotDecomposable { node: NodeId },
    RootScope,
    BadLeaf { node: NodeId, msg: String },
    MissingRoot,
}

/// Every structural problem found by [`Spn::validate`]; empty means valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Violation) -> bool) -> usize {
        self.violations.iter().filter(|v| pred(v)).count()
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Flat view of every learnable parameter. Also used for gradients, with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<F> {
    /// Sum-node edge weights, node by node in id order.
    pub weights: Vec<F>,
    /// Gaussian means, leaves in id order.
    pub means: Vec<F>,
    pub variances: Vec<F>,
}

impl<F: Real> ParamVector<F> {
    pub fn zeros_like(other: &Self) -> Self {
        Self {
            weights: vec![F::zero(); other.weights.len()],
            means: vec![F::zero(); other.means.len()],
            variances: vec![F::zero(); other.variances.len()],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &F> {
        self.weights.iter().chain(&self.means).chain(&self.variances)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut F> {
        self.weights.iter_mut().chain(self.means.iter_mut()).chain(self.variances.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.means.len() + self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a = *a + b;
        }
    }

    pub fn norm(&self) -> F {
        self.iter().map(|&v| v * v).sum::<F>().sqrt()
    }
}

/// Topology derived once per structure.
#[derive(Debug, Clone)]
struct Layout {
    /// Children before parents.
    order: Vec<usize>,
    scopes: Vec<Vec<usize>>,
    /// Offset of each sum node's first edge in `ParamVector::weights`.
    edge_offset: Vec<usize>,
    num_edges: usize,
    /// Index of each Gaussian leaf in `ParamVector::means`.
    gauss_index: Vec<usize>,
    num_gaussians: usize,
    depth: Vec<usize>,
}

static NEXT_STRUCTURE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone)]
pub struct Spn<F> {
    nodes: Vec<Node<F>>,
    root: NodeId,
    header: Header,
    variance_floor: F,
    report: ValidityReport,
    layout: Option<Layout>,
    structure_id: u64,
}

impl<F: Real> Spn<F> {
    /// Builds a network and runs the validity checks once; invalid networks can still be
    /// inspected and serialized but refuse to evaluate.
    pub fn new(nodes: Vec<Node<F>>, root: NodeId, header: Header) -> Self {
        let (report, layout) = analyse(&nodes, root, &header);
        Self {
            nodes,
            root,
            header,
            variance_floor: F::zero(),
            report,
            layout,
            structure_id: NEXT_STRUCTURE_ID.fetch_add(1, Ordering::Relaxed),
        }
    }

    pub fn nodes(&self) -> &[Node<F>] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node<F> {
        &self.nodes[id.0]
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn header(&self) -> Header {
        self.header
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.header.num_features
    }

    pub fn class_var(&self) -> usize {
        self.header.class_var
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn variance_floor(&self) -> F {
        self.variance_floor
    }

    /// Sets the global variance floor and lifts every leaf variance below it.
    pub fn set_variance_floor(&mut self, floor: F) {
        self.variance_floor = floor;
        for node in &mut self.nodes {
            if let Node::Gaussian(g) = node {
                if g.variance < floor {
                    g.variance = floor;
                }
            }
        }
    }

    pub fn validate(&self) -> &ValidityReport {
        &self.report
    }

    pub fn is_valid(&self) -> bool {
        self.report.is_empty()
    }

    pub(crate) fn structure_id(&self) -> u64 {
        self.structure_id
    }

    fn layout(&self) -> &Layout {
        self.layout.as_ref().expect("layout exists for acyclic networks")
    }

    /// Node indices, children before parents. Empty for cyclic graphs.
    pub fn topological_order(&self) -> &[usize] {
        self.layout.as_ref().map(|l| l.order.as_slice()).unwrap_or(&[])
    }

    /// Sorted variable indices a node depends on.
    pub fn scope(&self, id: NodeId) -> &[usize] {
        &self.layout().scopes[id.0]
    }

    /// Distance from the root along the shortest path (root = 0).
    pub fn depth(&self, id: NodeId) -> usize {
        self.layout().depth[id.0]
    }

    pub fn max_depth(&self) -> usize {
        self.layout().depth.iter().copied().max().unwrap_or(0)
    }

    pub fn num_edges(&self) -> usize {
        self.layout().num_edges
    }

    pub fn num_gaussians(&self) -> usize {
        self.layout().num_gaussians
    }

    pub(crate) fn edge_offset(&self, node: usize) -> usize {
        self.layout().edge_offset[node]
    }

    pub(crate) fn gauss_index(&self, node: usize) -> usize {
        self.layout().gauss_index[node]
    }

    /// Free parameters: `(children - 1)` per sum node plus mean and variance per Gaussian.
    pub fn free_parameter_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Sum { children, .. } => children.len() - 1,
                Node::Gaussian(_) => 2,
                _ => 0,
            })
            .sum()
    }

    pub fn params(&self) -> ParamVector<F> {
        let mut p = ParamVector {
            weights: Vec::with_capacity(self.num_edges()),
            means: Vec::with_capacity(self.num_gaussians()),
            variances: Vec::with_capacity(self.num_gaussians()),
        };
        for node in &self.nodes {
            match node {
                Node::Sum { weights, .. } => p.weights.extend_from_slice(weights),
                Node::Gaussian(g) => {
                    p.means.push(g.mean);
                    p.variances.push(g.variance);
                }
                _ => {}
            }
        }
        p
    }

    /// Overwrites all parameters. Weights must already be normalized per sum node.
    pub fn set_params(&mut self, p: &ParamVector<F>) {
        assert_eq!(p.weights.len(), self.num_edges(), "weight vector layout");
        assert_eq!(p.means.len(), self.num_gaussians(), "leaf vector layout");
        let (mut e, mut g) = (0, 0);
        for node in &mut self.nodes {
            match node {
                Node::Sum { weights, .. } => {
                    let n = weights.len();
                    weights.copy_from_slice(&p.weights[e..e + n]);
                    e += n;
                }
                Node::Gaussian(leaf) => {
                    leaf.mean = p.means[g];
                    leaf.variance = p.variances[g];
                    g += 1;
                }
                _ => {}
            }
        }
    }

    /// Replaces one sum node's weights; they are renormalized to sum to one.
    pub fn set_sum_weights(&mut self, id: NodeId, new: &[F]) {
        if let Node::Sum { weights, .. } = &mut self.nodes[id.0] {
            assert_eq!(weights.len(), new.len());
            let total: F = new.iter().copied().sum();
            for (w, &v) in weights.iter_mut().zip(new) {
                *w = v / total;
            }
        } else {
            panic!("node {} is not a sum node", id.0);
        }
    }

    pub fn set_gaussian(&mut self, id: NodeId, mean: F, variance: F) {
        if let Node::Gaussian(g) = &mut self.nodes[id.0] {
            g.mean = mean;
            g.variance = variance;
        } else {
            panic!("node {} is not a Gaussian leaf", id.0);
        }
    }

    /// Ids of indicator leaves, grouped by class state.
    pub fn indicators_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Node::Indicator(ind) = n {
                if ind.state < out.len() {
                    out[ind.state].push(i);
                }
            }
        }
        out
    }
}

fn analyse<F: Real>(
    nodes: &[Node<F>],
    root: NodeId,
    header: &Header,
) -> (ValidityReport, Option<Layout>) {
    let mut v = Vec::new();
    let n = nodes.len();
    if root.0 >= n {
        v.push(Violation::MissingRoot);
        return (ValidityReport { violations: v }, None);
    }

    let mut dangling = false;
    for (i, node) in nodes.iter().enumerate() {
        for &c in node.children() {
            if c.0 >= n {
                v.push(Violation::DanglingChild { node: NodeId(i), child: c });
                dangling = true;
            }
        }
        match node {
            Node::Sum { children, weights } => {
                if children.is_empty() {
                    v.push(Violation::EmptyChildren { node: NodeId(i) });
                }
                if weights.len() != children.len() {
                    v.push(Violation::WeightCount { node: NodeId(i) });
                }
                for &w in weights {
                    if !(w >= F::zero()) {
                        v.push(Violation::NegativeWeight { node: NodeId(i), weight: w.as_f64() });
                    }
                }
                let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
                let tol = WEIGHT_NORMALIZATION_TOL + weights.len() as f64 * F::epsilon().as_f64();
                if !children.is_empty() && (total - 1.0).abs() > tol {
                    v.push(Violation::Unnormalized { node: NodeId(i), total });
                }
            }
            Node::Product { children } => {
                if children.is_empty() {
                    v.push(Violation::EmptyChildren { node: NodeId(i) });
                }
            }
            Node::Gaussian(g) => {
                if g.var >= header.num_features || g.var == header.class_var {
                    v.push(Violation::BadLeaf {
                        node: NodeId(i),
                        msg: format!("Gaussian over non-feature variable {}", g.var),
                    });
                }
                if !(g.variance > F::zero()) || !g.mean.is_finite() || !g.variance.is_finite() {
                    v.push(Violation::BadLeaf { node: NodeId(i), msg: "bad Gaussian parameters".into() });
                }
            }
            Node::Indicator(ind) => {
                if ind.var != header.class_var {
                    v.push(Violation::BadLeaf {
                        node: NodeId(i),
                        msg: format!("indicator over non-class variable {}", ind.var),
                    });
                }
                if ind.state >= header.num_classes {
                    v.push(Violation::BadLeaf { node: NodeId(i), msg: format!("state {} out of range", ind.state) });
                }
            }
        }
    }
    if dangling {
        return (ValidityReport { violations: v }, None);
    }

    // Iterative DFS from the root: post-order gives children before parents.
    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut colour = vec![WHITE; n];
    let mut order = Vec::with_capacity(n);
    let mut cyclic = false;
    let mut stack: Vec<(usize, usize)> = vec![(root.0, 0)];
    colour[root.0] = GREY;
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        let children = nodes[node].children();
        if *next < children.len() {
            let c = children[*next].0;
            *next += 1;
            match colour[c] {
                WHITE => {
                    colour[c] = GREY;
                    stack.push((c, 0));
                }
                GREY => {
                    v.push(Violation::Cycle { node: NodeId(c) });
                    cyclic = true;
                }
                _ => {}
            }
        } else {
            colour[node] = BLACK;
            order.push(node);
            stack.pop();
        }
    }
    for (i, &c) in colour.iter().enumerate() {
        if c == WHITE {
            v.push(Violation::Unreachable { node: NodeId(i) });
        }
    }
    if cyclic {
        return (ValidityReport { violations: v }, None);
    }

    // Unreachable nodes still get scopes so the report covers them too.
    let mut full_order = order.clone();
    let mut seen = vec![false; n];
    for &i in &order {
        seen[i] = true;
    }
    for start in 0..n {
        if !seen[start] {
            extend_postorder(nodes, start, &mut seen, &mut full_order);
        }
    }

    let mut scopes: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &i in &full_order {
        scopes[i] = match &nodes[i] {
            Node::Gaussian(g) => vec![g.var],
            Node::Indicator(ind) => vec![ind.var],
            Node::Sum { children, .. } => {
                let first = children.first().map(|c| scopes[c.0].clone()).unwrap_or_default();
                if children.iter().any(|c| scopes[c.0] != first) {
                    v.push(Violation::Incomplete { node: NodeId(i) });
                }
                let set: BTreeSet<usize> = children.iter().flat_map(|c| scopes[c.0].iter().copied()).collect();
                set.into_iter().collect()
            }
            Node::Product { children } => {
                let mut set = BTreeSet::new();
                let mut overlap = false;
                for c in children {
                    for &var in &scopes[c.0] {
                        if !set.insert(var) {
                            overlap = true;
                        }
                    }
                }
                if overlap {
                    v.push(Violation::NotDecomposable { node: NodeId(i) });
                }
                set.into_iter().collect()
            }
        };
    }

    let mut expected: Vec<usize> = (0..header.num_features).collect();
    if header.num_classes > 0 {
        expected.push(header.class_var);
    }
    expected.sort_unstable();
    expected.dedup();
    if scopes[root.0] != expected {
        v.push(Violation::RootScope);
    }

    let mut edge_offset = vec![usize::MAX; n];
    let mut gauss_index = vec![usize::MAX; n];
    let (mut e, mut g) = (0, 0);
    for (i, node) in nodes.iter().enumerate() {
        match node {
            Node::Sum { weights, .. } => {
                edge_offset[i] = e;
                e += weights.len();
            }
            Node::Gaussian(_) => {
                gauss_index[i] = g;
                g += 1;
            }
            _ => {}
        }
    }

    let mut depth = vec![usize::MAX; n];
    depth[root.0] = 0;
    for &i in order.iter().rev() {
        let d = depth[i];
        for c in nodes[i].children() {
            depth[c.0] = depth[c.0].min(d + 1);
        }
    }
    for d in depth.iter_mut() {
        if *d == usize::MAX {
            *d = 0;
        }
    }

    let layout = Layout { order, scopes, edge_offset, num_edges: e, gauss_index, num_gaussians: g, depth };
    (ValidityReport { violations: v }, Some(layout))
}

fn extend_postorder<F>(nodes: &[Node<F>], start: usize, seen: &mut [bool], out: &mut Vec<usize>) {
    let mut stack = vec![(start, 0usize)];
    seen[start] = true;
    while let Some(&mut (node, ref mut next)) = stack.last_mut() {
        let children = nodes[node].children();
        if *next < children.len() {
            let c = children[*next].0;
            *next += 1;
            if !seen[c] {
                seen[c] = true;
                stack.push((c, 0));
            }
        } else {
            out.push(node);
            stack.pop();
        }
    }
}
