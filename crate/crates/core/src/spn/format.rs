//! Line-oriented text format for networks.
//!
//! ```text
//! spn-model v1
//! features 2
//! classes 2
//! classvar 2
//! root 0
//! node 0 SUM 1:2.5000000000000000e-1,2:7.5000000000000000e-1
//! node 1 PROD 3,5
//! node 3 IND 2 1
//! node 5 GAUSS 0 1.0000000000000000e0 2.0000000000000000e0
//! ```
//!
//! Indicator states are one-based on disk. Reals use 17 significant digits.

use std::fmt::Write as _;

use super::{Header, Node, NodeId, Spn};
use crate::error::{Result, SpnError};
use crate::leaves::{GaussianLeaf, IndicatorLeaf};
use crate::scalar::Real;

const MAGIC: &str = "spn-model v1";

fn real<F: Real>(v: F) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn write_model<F: Real>(spn: &Spn<F>) -> String {
    let h = spn.header();
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "features {}", h.num_features).unwrap();
    writeln!(out, "classes {}", h.num_classes).unwrap();
    writeln!(out, "classvar {}", h.class_var).unwrap();
    writeln!(out, "root {}", spn.root().0).unwrap();
    for (i, node) in spn.nodes().iter().enumerate() {
        match node {
            Node::Sum { children, weights } => {
                let parts: Vec<String> =
                    children.iter().zip(weights).map(|(c, &w)| format!("{}:{}", c.0, real(w))).collect();
                writeln!(out, "node {i} SUM {}", parts.join(",")).unwrap();
            }
            Node::Product { children } => {
                let parts: Vec<String> = children.iter().map(|c| c.0.to_string()).collect();
                writeln!(out, "node {i} PROD {}", parts.join(",")).unwrap();
            }
            Node::Gaussian(g) => {
                writeln!(out, "node {i} GAUSS {} {} {}", g.var, real(g.mean), real(g.variance)).unwrap();
            }
            Node::Indicator(ind) => {
                writeln!(out, "node {i} IND {} {}", ind.var, ind.state + 1).unwrap();
            }
        }
    }
    out
}

fn err(line: usize, msg: impl Into<String>) -> SpnError {
    SpnError::Format { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| err(line, format!("bad {what}")))
}

fn float<F: Real>(tok: Option<&str>, line: usize, what: &str) -> Result<F> {
    let v: f64 = num(tok, line, what)?;
    F::from_f64(v).ok_or_else(|| err(line, format!("{what} out of range")))
}

/// Parses a model. Structural problems are not errors here; they show up in `validate()`.
pub fn parse_model<F: Real>(text: &str) -> Result<Spn<F>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        Some((n, _)) => return Err(err(n, "expected `spn-model v1` header")),
        None => return Err(err(0, "empty model")),
    }
    let (mut features, mut classes, mut classvar, mut root) = (None, None, None, None);
    let mut nodes: Vec<Option<Node<F>>> = Vec::new();
    for (n, line) in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("features") => features = Some(num::<usize>(tok.next(), n, "feature count")?),
            Some("classes") => classes = Some(num::<usize>(tok.next(), n, "class count")?),
            Some("classvar") => classvar = Some(num::<usize>(tok.next(), n, "class variable")?),
            Some("root") => root = Some(num::<usize>(tok.next(), n, "root id")?),
            Some("node") => {
                let id: usize = num(tok.next(), n, "node id")?;
                let kind = tok.next().ok_or_else(|| err(n, "missing node kind"))?;
                let node = match kind {
                    "SUM" => {
                        let spec = tok.next().ok_or_else(|| err(n, "missing children"))?;
                        let mut children = Vec::new();
                        let mut weights = Vec::new();
                        for item in spec.split(',') {
                            let (c, w) = item.split_once(':').ok_or_else(|| err(n, "expected child:weight"))?;
                            children.push(NodeId(num(Some(c), n, "child id")?));
                            weights.push(float(Some(w), n, "weight")?);
                        }
                        Node::Sum { children, weights }
                    }
                    "PROD" => {
                        let spec = tok.next().ok_or_else(|| err(n, "missing children"))?;
                        let children = spec
                            .split(',')
                            .map(|c| num(Some(c), n, "child id").map(NodeId))
                            .collect::<Result<Vec<_>>>()?;
                        Node::Product { children }
                    }
                    "GAUSS" => {
                        let var = num(tok.next(), n, "variable")?;
                        let mean = float(tok.next(), n, "mean")?;
                        let variance = float(tok.next(), n, "variance")?;
                        Node::Gaussian(GaussianLeaf::new(var, mean, variance))
                    }
                    "IND" => {
                        let var = num(tok.next(), n, "variable")?;
                        let state: usize = num(tok.next(), n, "state")?;
                        if state == 0 {
                            return Err(err(n, "indicator states are one-based"));
                        }
                        Node::Indicator(IndicatorLeaf { var, state: state - 1 })
                    }
                    other => return Err(err(n, format!("unknown node kind `{other}`"))),
                };
                if tok.next().is_some() {
                    return Err(err(n, "trailing tokens"));
                }
                if nodes.len() <= id {
                    nodes.resize(id + 1, None);
                }
                if nodes[id].is_some() {
                    return Err(err(n, format!("duplicate node {id}")));
                }
                nodes[id] = Some(node);
            }
            Some(other) => return Err(err(n, format!("unknown directive `{other}`"))),
            None => {}
        }
    }
    let features = features.ok_or_else(|| err(0, "missing `features`"))?;
    let classes = classes.ok_or_else(|| err(0, "missing `classes`"))?;
    let classvar = classvar.ok_or_else(|| err(0, "missing `classvar`"))?;
    let root = root.ok_or_else(|| err(0, "missing `root`"))?;
    let nodes = nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| err(0, format!("node ids not dense: {i} missing"))))
        .collect::<Result<Vec<_>>>()?;
    let header = Header { num_features: features, num_classes: classes, class_var: classvar };
    Ok(Spn::new(nodes, NodeId(root), header))
}
