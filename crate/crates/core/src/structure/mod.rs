//! learnSPN-style structure induction for Gaussian features under a class-conditioning root,
//! plus depth truncation and degenerate-leaf cleanup.

mod kmeans;
mod select;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kmeans::kmeans;
pub use select::{candidate_depths, select_truncation, CandidateScore, TruncationMode};

use crate::error::{Result, SpnError};
use crate::leaves::{compute_variance_floor, GaussianLeaf, IndicatorLeaf};
use crate::scalar::Real;
use crate::spn::{Header, Node, NodeId, Spn};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureConfig {
    /// Below this many rows a node becomes a factorized product.
    pub min_instances: usize,
    /// Feature pairs with `|rho|` under this are treated as independent.
    pub corr_threshold: f64,
    pub num_clusters: usize,
    pub max_depth: usize,
    /// k-means restarts per instance split.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self { min_instances: 30, corr_threshold: 0.1, num_clusters: 2, max_depth: 12, restarts: 10, seed: 0 }
    }
}

impl StructureConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(SpnError::Config(m.to_string()));
        if self.min_instances == 0 {
            return bad("min_instances must be positive");
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold < 1.0) {
            return bad("corr_threshold must lie in (0, 1)");
        }
        if self.num_clusters < 2 {
            return bad("num_clusters must be at least 2");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        Ok(())
    }
}

/// Moments of the rows routed to a node during induction, per scope feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub rows: usize,
    pub vars: Vec<usize>,
    pub mean: Vec<f64>,
    /// Maximum-likelihood variance before flooring.
    pub var: Vec<f64>,
    pub distinct: Vec<usize>,
}

impl NodeStats {
    fn compute(data: &[Vec<f64>], rows: &[usize], vars: &[usize]) -> Self {
        let n = rows.len() as f64;
        let mut mean = Vec::with_capacity(vars.len());
        let mut var = Vec::with_capacity(vars.len());
        let mut distinct = Vec::with_capacity(vars.len());
        for &v in vars {
            let mut col: Vec<f64> = rows.iter().map(|&r| data[r][v]).collect();
            let m = col.iter().sum::<f64>() / n;
            mean.push(m);
            var.push(col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n);
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            col.dedup();
            distinct.push(col.len());
        }
        Self { rows: rows.len(), vars: vars.to_vec(), mean, var, distinct }
    }

    fn single(&self, i: usize) -> Self {
        Self {
            rows: self.rows,
            vars: vec![self.vars[i]],
            mean: vec![self.mean[i]],
            var: vec![self.var[i]],
            distinct: vec![self.distinct[i]],
        }
    }

    fn empty(rows: usize) -> Self {
        Self { rows, vars: Vec::new(), mean: Vec::new(), var: Vec::new(), distinct: Vec::new() }
    }
}

/// A learned network together with the induction statistics truncation needs.
#[derive(Debug, Clone)]
pub struct LearnedStructure<F> {
    pub spn: Spn<F>,
    /// Indexed by node id.
    pub stats: Vec<NodeStats>,
    /// Feature means over every row used for induction.
    pub global_mean: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    variance_floor: f64,
    global_mean: Vec<f64>,
    nodes: Vec<NodeStats>,
}

impl<F: Real> LearnedStructure<F> {
    /// JSON with per-node row counts and moments, stored next to the model file.
    pub fn sidecar_json(&self) -> String {
        serde_json::to_string(&Sidecar {
            variance_floor: self.spn.variance_floor().as_f64(),
            global_mean: self.global_mean.clone(),
            nodes: self.stats.clone(),
        })
        .expect("sidecar serializes")
    }

    pub fn from_sidecar(mut spn: Spn<F>, json: &str) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(json).map_err(|e| SpnError::Config(format!("sidecar: {e}")))?;
        if side.nodes.len() != spn.len() {
            return Err(SpnError::Config(format!(
                "sidecar describes {} nodes, model has {}",
                side.nodes.len(),
                spn.len()
            )));
        }
        spn.set_variance_floor(F::lit(side.variance_floor));
        Ok(Self { spn, stats: side.nodes, global_mean: side.global_mean })
    }
}

fn leaf_params(stats: &NodeStats, i: usize, global_mean: &[f64], floor: f64) -> (f64, f64) {
    if stats.distinct[i] < 2 {
        (global_mean[stats.vars[i]], floor)
    } else {
        (stats.mean[i], stats.var[i].max(floor))
    }
}

struct Builder<'a> {
    data: &'a [Vec<f64>],
    cfg: &'a StructureConfig,
    floor: f64,
    global_mean: &'a [f64],
    nodes: Vec<Node<f64>>,
    stats: Vec<NodeStats>,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn push(&mut self, node: Node<f64>, stats: NodeStats) -> NodeId {
        self.nodes.push(node);
        self.stats.push(stats);
        NodeId(self.nodes.len() - 1)
    }

    fn leaves(&mut self, stats: &NodeStats) -> Vec<NodeId> {
        (0..stats.vars.len())
            .map(|i| {
                let (m, v) = leaf_params(stats, i, self.global_mean, self.floor);
                self.push(Node::Gaussian(GaussianLeaf::new(stats.vars[i], m, v)), stats.single(i))
            })
            .collect()
    }

    fn factorized(&mut self, rows: &[usize], scope: &[usize]) -> NodeId {
        let stats = NodeStats::compute(self.data, rows, scope);
        let children = self.leaves(&stats);
        if children.len() == 1 {
            return children[0];
        }
        self.push(Node::Product { children }, stats)
    }

    fn build(&mut self, rows: &[usize], scope: &[usize], depth: usize, try_vars: bool) -> NodeId {
        if scope.len() == 1 || rows.len() < self.cfg.min_instances || depth >= self.cfg.max_depth {
            return self.factorized(rows, scope);
        }
        if try_vars {
            let groups = independent_groups(self.data, rows, scope, self.cfg.corr_threshold);
            if groups.len() > 1 {
                let children: Vec<NodeId> = groups.iter().map(|g| self.build(rows, g, depth + 1, false)).collect();
                let stats = NodeStats::compute(self.data, rows, scope);
                return self.push(Node::Product { children }, stats);
            }
        }
        let points: Vec<Vec<f64>> = rows.iter().map(|&r| scope.iter().map(|&v| self.data[r][v]).collect()).collect();
        let assign = kmeans(&points, self.cfg.num_clusters, self.cfg.restarts, &mut self.rng);
        let mut clusters = vec![Vec::new(); self.cfg.num_clusters];
        for (&r, &c) in rows.iter().zip(&assign) {
            clusters[c].push(r);
        }
        clusters.retain(|c| !c.is_empty());
        if clusters.len() < 2 {
            return self.factorized(rows, scope);
        }
        let n = rows.len() as f64;
        let weights: Vec<f64> = clusters.iter().map(|c| c.len() as f64 / n).collect();
        let children: Vec<NodeId> = clusters.iter().map(|c| self.build(c, scope, depth + 1, true)).collect();
        let stats = NodeStats::compute(self.data, rows, scope);
        self.push(Node::Sum { children, weights }, stats)
    }
}

/// Connected components of the graph linking features with `|rho| >= threshold`.
/// Zero-variance features correlate with nothing.
fn independent_groups(data: &[Vec<f64>], rows: &[usize], scope: &[usize], threshold: f64) -> Vec<Vec<usize>> {
    let d = scope.len();
    let n = rows.len() as f64;
    let cols: Vec<Vec<f64>> = scope
        .iter()
        .map(|&v| {
            let col: Vec<f64> = rows.iter().map(|&r| data[r][v]).collect();
            let m = col.iter().sum::<f64>() / n;
            col.into_iter().map(|x| x - m).collect()
        })
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..d {
        for j in i + 1..d {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let rho = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j]);
            if rho.abs() >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; d];
    for i in 0..d {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(scope[i]);
    }
    groups
}

fn cast_node<F: Real>(node: &Node<f64>) -> Node<F> {
    match node {
        Node::Sum { children, weights } => {
            Node::Sum { children: children.clone(), weights: weights.iter().map(|&w| F::lit(w)).collect() }
        }
        Node::Product { children } => Node::Product { children: children.clone() },
        Node::Gaussian(g) => Node::Gaussian(GaussianLeaf::new(g.var, F::lit(g.mean), F::lit(g.variance))),
        Node::Indicator(i) => Node::Indicator(*i),
    }
}

/// Learns a structure from labelled rows `x` (labels `y`) and unlabelled rows `u`.
///
/// The root is a sum over one `Product(indicator k, subtree_k)` per class. Labelled rows feed
/// only their class branch; unlabelled rows feed every branch. Root weights are the labelled
/// class frequencies. The variance floor is derived from all rows.
pub fn learn_structure<F: Real>(
    x: &[Vec<F>],
    y: &[usize],
    u: &[Vec<F>],
    num_classes: usize,
    cfg: &StructureConfig,
) -> Result<LearnedStructure<F>> {
    cfg.check()?;
    if x.len() != y.len() {
        return Err(SpnError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() + u.len();
    if n < cfg.min_instances.max(2) {
        return Err(SpnError::TooFewRows { needed: cfg.min_instances.max(2), got: n });
    }
    if num_classes == 0 {
        return Err(SpnError::Config("need at least one class".into()));
    }
    let data: Vec<Vec<f64>> = x.iter().chain(u).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let d = data[0].len();
    if d == 0 {
        return Err(SpnError::Config("need at least one feature".into()));
    }
    if let Some(r) = data.iter().find(|r| r.len() != d) {
        return Err(SpnError::DimensionMismatch { expected: d, got: r.len() });
    }
    if let Some(&c) = y.iter().find(|&&c| c >= num_classes) {
        return Err(SpnError::Config(format!("label {c} out of range for {num_classes} classes")));
    }
    let floor = compute_variance_floor(&data)?;
    let global_mean: Vec<f64> = (0..d).map(|v| data.iter().map(|r| r[v]).sum::<f64>() / n as f64).collect();
    let scope: Vec<usize> = (0..d).collect();
    let all: Vec<usize> = (0..n).collect();

    let mut b = Builder {
        data: &data,
        cfg,
        floor,
        global_mean: &global_mean,
        nodes: Vec::new(),
        stats: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut counts = vec![0usize; num_classes];
    for &c in y {
        counts[c] += 1;
    }
    let mut branches = Vec::with_capacity(num_classes);
    for k in 0..num_classes {
        let mut rows: Vec<usize> = y.iter().enumerate().filter(|&(_, &c)| c == k).map(|(i, _)| i).collect();
        rows.extend(x.len()..n);
        if rows.is_empty() {
            rows = all.clone();
        }
        let ind = b.push(Node::Indicator(IndicatorLeaf { var: d, state: k }), NodeStats::empty(rows.len()));
        let sub = b.build(&rows, &scope, 2, true);
        let stats = NodeStats::compute(&data, &rows, &scope);
        branches.push(b.push(Node::Product { children: vec![ind, sub] }, stats));
    }
    let weights: Vec<f64> = if counts.iter().all(|&c| c > 0) {
        counts.iter().map(|&c| c as f64 / y.len() as f64).collect()
    } else {
        let total = (y.len() + num_classes) as f64;
        counts.iter().map(|&c| (c + 1) as f64 / total).collect()
    };
    let root_stats = NodeStats::compute(&data, &all, &scope);
    let root = b.push(Node::Sum { children: branches, weights }, root_stats);

    let nodes: Vec<Node<F>> = b.nodes.iter().map(cast_node).collect();
    let mut spn = Spn::new(nodes, root, Header::new(d, num_classes));
    spn.set_variance_floor(F::lit(floor));
    spn.ensure_valid()?;
    Ok(LearnedStructure { spn, stats: b.stats, global_mean })
}

/// Replaces every interior node deeper than `depth` by a fully factorized product of Gaussian
/// leaves fitted to the rows that reached it. Products absorb replaced product children.
pub fn truncate<F: Real>(learned: &LearnedStructure<F>, depth: usize) -> LearnedStructure<F> {
    struct Out<F> {
        nodes: Vec<Node<F>>,
        stats: Vec<NodeStats>,
    }
    impl<F> Out<F> {
        fn push(&mut self, n: Node<F>, s: NodeStats) -> NodeId {
            self.nodes.push(n);
            self.stats.push(s);
            NodeId(self.nodes.len() - 1)
        }
    }
    let spn = &learned.spn;
    let floor = spn.variance_floor().as_f64();

    fn leaves<F: Real>(out: &mut Out<F>, st: &NodeStats, gm: &[f64], floor: f64) -> Vec<NodeId> {
        (0..st.vars.len())
            .map(|i| {
                let (m, v) = leaf_params(st, i, gm, floor);
                out.push(Node::Gaussian(GaussianLeaf::new(st.vars[i], F::lit(m), F::lit(v))), st.single(i))
            })
            .collect()
    }

    fn emit<F: Real>(
        l: &LearnedStructure<F>,
        id: NodeId,
        depth: usize,
        floor: f64,
        out: &mut Out<F>,
    ) -> NodeId {
        let node = l.spn.node(id);
        let st = &l.stats[id.0];
        if !node.is_leaf() && l.spn.depth(id) > depth {
            let kids = leaves(out, st, &l.global_mean, floor);
            if kids.len() == 1 {
                return kids[0];
            }
            return out.push(Node::Product { children: kids }, st.clone());
        }
        match node {
            Node::Sum { children, weights } => {
                let kids: Vec<NodeId> = children.iter().map(|&c| emit(l, c, depth, floor, out)).collect();
                out.push(Node::Sum { children: kids, weights: weights.clone() }, st.clone())
            }
            Node::Product { children } => {
                let mut kids = Vec::new();
                for &c in children {
                    let child = l.spn.node(c);
                    if !child.is_leaf() && l.spn.depth(c) > depth {
                        kids.extend(leaves(out, &l.stats[c.0], &l.global_mean, floor));
                    } else {
                        kids.push(emit(l, c, depth, floor, out));
                    }
                }
                out.push(Node::Product { children: kids }, st.clone())
            }
            leaf => out.push(leaf.clone(), st.clone()),
        }
    }

    let mut out = Out { nodes: Vec::new(), stats: Vec::new() };
    let root = emit(learned, spn.root(), depth, floor, &mut out);
    let mut t = Spn::new(out.nodes, root, spn.header());
    t.set_variance_floor(spn.variance_floor());
    LearnedStructure { spn: t, stats: out.stats, global_mean: learned.global_mean.clone() }
}

/// Leaves fitted on fewer than two distinct values, or whose raw variance is under a tenth of
/// the floor.
pub fn degenerate_leaves<F: Real>(learned: &LearnedStructure<F>) -> Vec<NodeId> {
    let floor = learned.spn.variance_floor().as_f64();
    learned
        .spn
        .nodes()
        .iter()
        .enumerate()
        .filter(|(i, n)| {
            let st = &learned.stats[*i];
            matches!(n, Node::Gaussian(_)) && (st.distinct[0] < 2 || st.var[0] < floor / 10.0)
        })
        .map(|(i, _)| NodeId(i))
        .collect()
}

/// Resets every degenerate leaf to `(global mean of its feature, floor)`.
pub fn remove_degenerate_leaves<F: Real>(learned: &LearnedStructure<F>) -> LearnedStructure<F> {
    let mut out = learned.clone();
    let floor = out.spn.variance_floor();
    for id in degenerate_leaves(learned) {
        if let Node::Gaussian(g) = out.spn.node(id) {
            let m = F::lit(learned.global_mean[g.var]);
            out.spn.set_gaussian(id, m, floor);
        }
    }
    out
}
