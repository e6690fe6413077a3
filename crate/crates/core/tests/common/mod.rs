//! Test helpers: an independent linear-domain evaluator and random network generators.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use sspn::leaves::{GaussianLeaf, IndicatorLeaf};
use sspn::{Header, Node, NodeId, Spn64};

#[derive(Debug, Clone)]
pub enum ONode {
    Sum(Vec<usize>, Vec<f64>),
    Prod(Vec<usize>),
    Gauss { var: usize, mean: f64, variance: f64 },
    Ind { state: usize },
}

/// Direct recursive evaluation with plain products, sums and `exp`, no log-domain tricks.
/// Parameters are public so tests can perturb them without renormalizing.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub nodes: Vec<ONode>,
    pub root: usize,
}

pub fn gauss_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * variance)).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

impl Oracle {
    pub fn from_spn(spn: &Spn64) -> Self {
        let nodes = spn
            .nodes()
            .iter()
            .map(|n| match n {
                Node::Sum { children, weights } => ONode::Sum(children.iter().map(|c| c.0).collect(), weights.clone()),
                Node::Product { children } => ONode::Prod(children.iter().map(|c| c.0).collect()),
                Node::Gaussian(g) => ONode::Gauss { var: g.var, mean: g.mean, variance: g.variance },
                Node::Indicator(i) => ONode::Ind { state: i.state },
            })
            .collect();
        Self { nodes, root: spn.root().0 }
    }

    /// `S[x, ind]` where `ind[k]` is the value every indicator of state `k` takes.
    pub fn value(&self, x: &[f64], ind: &[f64]) -> f64 {
        self.eval(self.root, x, ind, None)
    }

    /// Same, with node `node` forced to output `v`.
    pub fn value_with(&self, x: &[f64], ind: &[f64], node: usize, v: f64) -> f64 {
        self.eval(self.root, x, ind, Some((node, v)))
    }

    fn eval(&self, i: usize, x: &[f64], ind: &[f64], ov: Option<(usize, f64)>) -> f64 {
        if let Some((n, v)) = ov {
            if n == i {
                return v;
            }
        }
        match &self.nodes[i] {
            ONode::Sum(c, w) => c.iter().zip(w).map(|(&c, &w)| w * self.eval(c, x, ind, ov)).sum(),
            ONode::Prod(c) => c.iter().map(|&c| self.eval(c, x, ind, ov)).product(),
            ONode::Gauss { var, mean, variance } => gauss_pdf(x[*var], *mean, *variance),
            ONode::Ind { state } => ind[*state],
        }
    }

    pub fn node_value(&self, i: usize, x: &[f64], ind: &[f64]) -> f64 {
        self.eval(i, x, ind, None)
    }

    pub fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
    }

    /// `sum log S[y|x] + sum log S[q|u]`.
    pub fn cll(&self, k: usize, x: &[Vec<f64>], y: &[usize], u: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
        let ones = vec![1.0; k];
        let a: f64 = x.iter().zip(y).map(|(r, &c)| (self.value(r, &Self::one_hot(c, k)) / self.value(r, &ones)).ln()).sum();
        let b: f64 = u.iter().zip(q).map(|(r, qm)| (self.value(r, qm) / self.value(r, &ones)).ln()).sum();
        a + b
    }

    /// `sum log S[x, y] + sum log S[u, q]`.
    pub fn joint_ll(&self, k: usize, x: &[Vec<f64>], y: &[usize], u: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
        let a: f64 = x.iter().zip(y).map(|(r, &c)| self.value(r, &Self::one_hot(c, k)).ln()).sum();
        let b: f64 = u.iter().zip(q).map(|(r, qm)| self.value(r, qm).ln()).sum();
        a + b
    }

    /// Mutable references to every free parameter, in the library's `ParamVector` order:
    /// all weights node by node, then all means, then all variances.
    pub fn param_count(&self) -> (usize, usize) {
        let w = self.nodes.iter().map(|n| if let ONode::Sum(_, w) = n { w.len() } else { 0 }).sum();
        let g = self.nodes.iter().filter(|n| matches!(n, ONode::Gauss { .. })).count();
        (w, g)
    }

    /// Adds `h` to parameter `idx` of the flat layout `[weights | means | variances]`.
    pub fn nudge(&mut self, idx: usize, h: f64) {
        let (nw, ng) = self.param_count();
        let mut e = 0;
        let mut g = 0;
        for n in &mut self.nodes {
            match n {
                ONode::Sum(_, w) => {
                    if idx >= e && idx < e + w.len() {
                        w[idx - e] += h;
                        return;
                    }
                    e += w.len();
                }
                ONode::Gauss { mean, variance, .. } => {
                    if idx == nw + g {
                        *mean += h;
                        return;
                    }
                    if idx == nw + ng + g {
                        *variance += h;
                        return;
                    }
                    g += 1;
                }
                _ => {}
            }
        }
        panic!("parameter {idx} out of range");
    }
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let g = Gamma::new(1.0, 1.0).unwrap();
    let v: Vec<f64> = (0..n).map(|_| g.sample(rng) + 1e-3).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node<f64>>,
    d: usize,
    k: usize,
    dense: bool,
}

impl Gen<'_> {
    fn push(&mut self, n: Node<f64>) -> NodeId {
        self.nodes.push(n);
        NodeId(self.nodes.len() - 1)
    }

    fn leaf(&mut self, var: usize) -> NodeId {
        if var == self.d {
            if self.k == 1 || (!self.dense && self.rng.random_bool(0.3)) {
                let state = self.rng.random_range(0..self.k);
                return self.push(Node::Indicator(IndicatorLeaf { var, state }));
            }
            let children: Vec<NodeId> =
                (0..self.k).map(|s| self.push(Node::Indicator(IndicatorLeaf { var, state: s }))).collect();
            let weights = dirichlet(self.rng, self.k);
            return self.push(Node::Sum { children, weights });
        }
        let mean: f64 = StandardNormal.sample(self.rng);
        let variance = self.rng.random_range(0.3..2.0);
        self.push(Node::Gaussian(GaussianLeaf::new(var, mean, variance)))
    }

    fn build(&mut self, scope: &[usize], depth: usize) -> NodeId {
        if scope.len() == 1 {
            if scope[0] != self.d && depth < 3 && self.rng.random_bool(0.3) {
                let children = vec![self.leaf(scope[0]), self.leaf(scope[0])];
                let weights = dirichlet(self.rng, 2);
                return self.push(Node::Sum { children, weights });
            }
            return self.leaf(scope[0]);
        }
        if depth >= 3 || self.rng.random_bool(0.5) {
            let mut s = scope.to_vec();
            s.shuffle(self.rng);
            let parts = if depth >= 3 { s.len() } else { self.rng.random_range(2..=s.len().min(3)) };
            let mut groups = vec![Vec::new(); parts];
            for (i, v) in s.into_iter().enumerate() {
                groups[i % parts].push(v);
            }
            let children: Vec<NodeId> = groups.iter().map(|g| self.build(g, depth + 1)).collect();
            self.push(Node::Product { children })
        } else {
            let n = self.rng.random_range(2..=3);
            let children: Vec<NodeId> = (0..n).map(|_| self.build(scope, depth + 1)).collect();
            let weights = dirichlet(self.rng, n);
            self.push(Node::Sum { children, weights })
        }
    }
}

/// Random valid network over `d` features and a `k`-state class variable with at most
/// `max_nodes` nodes.
pub fn random_spn(rng: &mut ChaCha8Rng, d: usize, k: usize, max_nodes: usize) -> Spn64 {
    generate(rng, d, k, max_nodes, false)
}

/// Like [`random_spn`], but every class leaf mixes all states, so every label has positive mass.
pub fn random_dense_spn(rng: &mut ChaCha8Rng, d: usize, k: usize, max_nodes: usize) -> Spn64 {
    generate(rng, d, k, max_nodes, true)
}

fn generate(rng: &mut ChaCha8Rng, d: usize, k: usize, max_nodes: usize, dense: bool) -> Spn64 {
    loop {
        let mut g = Gen { rng: &mut *rng, nodes: Vec::new(), d, k, dense };
        let scope: Vec<usize> = (0..=d).collect();
        let root = g.build(&scope, 0);
        if g.nodes.len() > max_nodes {
            continue;
        }
        let mut spn = Spn64::new(g.nodes, root, Header::new(d, k));
        assert!(spn.is_valid(), "{}", spn.validate());
        spn.set_variance_floor(1e-3);
        return spn;
    }
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect()
}

/// A point on the simplex with every entry bounded away from zero.
pub fn interior_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    dirichlet(rng, k).into_iter().map(|p| 0.8 * p + 0.2 / k as f64).collect()
}

/// Relative difference with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn data_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

/// Relative agreement within `1e-4`, with an absolute allowance of `1e-7` for components whose
/// true value is zero and whose difference quotient is pure rounding noise.
pub fn fd_ratio(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / (1e-4 * analytic.abs().max(fd.abs()) + 1e-7)
}

fn central<G: Fn(&Oracle) -> f64>(oracle: &Oracle, idx: usize, value: f64, f: &G) -> f64 {
    let h = 1e-5 * value.abs().max(1.0);
    let mut plus = oracle.clone();
    plus.nudge(idx, h);
    let mut minus = oracle.clone();
    minus.nudge(idx, -h);
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub compared: usize,
    /// Largest `fd_ratio`; at most one means every component agreed.
    pub worst: f64,
}

impl GradCheck {
    fn add(&mut self, r: f64) {
        self.compared += 1;
        self.worst = self.worst.max(r);
    }

    pub fn merge(&mut self, o: GradCheck) {
        self.compared += o.compared;
        self.worst = self.worst.max(o.worst);
    }
}

/// Compares the conditional log-likelihood gradient and the soft-label gradient of a random
/// network against central differences of the direct evaluator. Returns `(params, soft labels)`.
pub fn check_gradients(spn: &Spn64, data_seed: u64) -> (GradCheck, GradCheck) {
    use sspn::disc_learn::cll_gradient;
    use sspn::safe_ssl::log_likelihood_q_gradient;
    use sspn::Batch;

    let (d, k) = (spn.num_features(), spn.num_classes());
    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
    let x = random_rows(&mut rng, 6, d);
    let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..k)).collect();
    let u = random_rows(&mut rng, 4, d);
    let q: Vec<Vec<f64>> = (0..4).map(|_| interior_simplex(&mut rng, k)).collect();

    let oracle = Oracle::from_spn(spn);
    let batch = Batch::new(&x, &y, &u, &q).unwrap();
    let (_, grad) = cll_gradient(spn, &batch).unwrap();
    let values: Vec<f64> = spn.params().iter().copied().collect();
    let mut params = GradCheck::default();
    let objective = |o: &Oracle| o.cll(k, &x, &y, &u, &q);
    for (idx, (&g, &v)) in grad.iter().zip(&values).enumerate() {
        params.add(fd_ratio(g, central(&oracle, idx, v, &objective)));
    }

    let qg = log_likelihood_q_gradient(spn, &u, &q).unwrap();
    let mut soft = GradCheck::default();
    for m in 0..u.len() {
        for c in 0..k {
            let f = |dq: f64| {
                let mut qm = q[m].clone();
                qm[c] += dq;
                oracle.value(&u[m], &qm).ln()
            };
            let h = 1e-6;
            soft.add(fd_ratio(qg[m][c], (f(h) - f(-h)) / (2.0 * h)));
        }
    }
    (params, soft)
}

/// One standard split of a bundled dataset, z-scored on the training rows.
pub struct Problem {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub u: Vec<Vec<f64>>,
    pub val_x: Vec<Vec<f64>>,
    pub val_y: Vec<usize>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<usize>,
    pub k: usize,
}

pub fn problem(file: &str, seed: u64) -> Problem {
    use sspn::data::{load_csv, make_split, preprocess, SplitSpec};
    let data = load_csv::<f64>(data_path(file), "class").unwrap();
    let split = make_split(&data, &SplitSpec::standard(&data, seed)).unwrap();
    let (z, _) = preprocess(&data, &split.train()).unwrap();
    let (x, y) = z.labelled_rows(&split.labelled);
    let (val_x, val_y) = z.labelled_rows(&split.validation);
    let (test_x, test_y) = z.labelled_rows(&split.test);
    Problem { x, y, u: z.rows(&split.unlabelled), val_x, val_y, test_x, test_y, k: z.num_classes }
}

/// Free parameters counted straight from the text format.
pub fn count_free_params(model: &str) -> usize {
    model
        .lines()
        .filter_map(|l| {
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.get(2) {
                Some(&"SUM") => Some(t[3].split(',').count() - 1),
                Some(&"GAUSS") => Some(2),
                _ => None,
            }
        })
        .sum()
}

pub const DATASETS: [&str; 6] = ["iris.csv", "wine.csv", "bupa.csv", "haberman.csv", "ionosphere.csv", "wdbc.csv"];
