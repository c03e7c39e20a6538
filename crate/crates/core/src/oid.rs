//! Observability inference diagrams.
//!
//! The diagram has an edge `i → j` when `x_j` enters the right-hand side of
//! `ẋ_i`, detected numerically as `|∂q_i/∂x_j| > threshold` at any of a set of
//! sample states. Its strongly connected components without incoming edges
//! (root SCCs) each need at least one sensor.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::model::{ContinuousModel, ModelError, StateVector};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OidError {
    #[error("at least one sample state is required")]
    NoSamples,
    #[error("correlation needs at least 3 nodes and equal-length vectors")]
    Correlation,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Directed graph with ordered, duplicate-free adjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    names: Vec<String>,
    out: Vec<BTreeSet<usize>>,
}

impl Digraph {
    pub fn new(n: usize) -> Self {
        Digraph {
            names: (0..n).map(|i| i.to_string()).collect(),
            out: vec![BTreeSet::new(); n],
        }
    }

    pub fn with_names(names: Vec<String>) -> Self {
        let n = names.len();
        Digraph {
            names,
            out: vec![BTreeSet::new(); n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Digraph::new(n);
        for &(i, j) in edges {
            g.add_edge(i, j);
        }
        g
    }

    pub fn n(&self) -> usize {
        self.out.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Returns `false` if the edge already existed.
    pub fn add_edge(&mut self, i: usize, j: usize) -> bool {
        assert!(i < self.n() && j < self.n(), "edge ({i}, {j}) out of range");
        self.out[i].insert(j)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.out[i].contains(&j)
    }

    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[i].iter().copied()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n()).flat_map(|i| self.out[i].iter().map(move |&j| (i, j))).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(BTreeSet::len).sum()
    }

    pub fn without_self_loops(&self) -> Self {
        let mut g = self.clone();
        for (i, s) in g.out.iter_mut().enumerate() {
            s.remove(&i);
        }
        g
    }

    fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut pred = vec![Vec::new(); self.n()];
        for (i, j) in self.edges() {
            pred[j].push(i);
        }
        pred
    }

    /// Writes one `source target` line per edge, using node names.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{} {}", self.names[i], self.names[j])?;
        }
        Ok(())
    }

    /// Trivial Graph Format: `id label` node lines, `#`, then `source target`.
    pub fn write_tgf<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, name) in self.names.iter().enumerate() {
            writeln!(out, "{} {name}", i + 1)?;
        }
        writeln!(out, "#")?;
        for (i, j) in self.edges() {
            writeln!(out, "{} {}", i + 1, j + 1)?;
        }
        Ok(())
    }
}

/// `count` seeded random states inside the model bounds.
///
/// Finite intervals are sampled uniformly; half-infinite ones at distance
/// `U(0.5, 1.5)` from the finite bound; unbounded coordinates from `U(0.5, 1.5)`.
pub fn sample_states(model: &ContinuousModel, count: usize, seed: u64) -> Vec<StateVector> {
    let mut rng = stream(seed, Purpose::OidSamples, 0);
    let lo = model.lower_bounds();
    let hi = model.upper_bounds();
    (0..count)
        .map(|_| {
            DVector::from_fn(model.dim(), |i, _| {
                let u: f64 = rng.random_range(0.0..1.0);
                match (lo[i].is_finite(), hi[i].is_finite()) {
                    (true, true) => lo[i] + (hi[i] - lo[i]) * (0.05 + 0.9 * u),
                    (true, false) => lo[i] + 0.5 + u,
                    (false, true) => hi[i] - 0.5 - u,
                    (false, false) => 0.5 + u,
                }
            })
        })
        .collect()
}

/// Edge `i → j` iff `|∂q_i/∂x_j| > threshold` at any sample state.
pub fn build_oid(model: &ContinuousModel, samples: &[StateVector], threshold: f64) -> Result<Digraph, OidError> {
    if samples.is_empty() {
        return Err(OidError::NoSamples);
    }
    let n = model.dim();
    let mut g = Digraph::with_names(model.names().to_vec());
    for x in samples {
        let jac = model.eval_field_jacobian(x)?;
        for i in 0..n {
            for j in 0..n {
                if jac[(i, j)].abs() > threshold {
                    g.add_edge(i, j);
                }
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SccDecomposition {
    /// Components with sorted members, ordered by their smallest node.
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
    pub condensation_edges: BTreeSet<(usize, usize)>,
    pub is_root: Vec<bool>,
}

impl SccDecomposition {
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn root_components(&self) -> Vec<&Vec<usize>> {
        self.components.iter().zip(&self.is_root).filter(|(_, &r)| r).map(|(c, _)| c).collect()
    }

    /// Nodes forming single-node components that have incoming edges.
    pub fn singleton_non_roots(&self) -> Vec<usize> {
        self.components
            .iter()
            .zip(&self.is_root)
            .filter(|(c, &r)| !r && c.len() == 1)
            .map(|(c, _)| c[0])
            .collect()
    }
}

/// Tarjan's algorithm, iterative.
pub fn scc_decompose(g: &Digraph) -> SccDecomposition {
    let n = g.n();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut raw: Vec<Vec<usize>> = Vec::new();
    let mut next = 0;
    let succ: Vec<Vec<usize>> = (0..n).map(|i| g.successors(i).collect()).collect();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos < succ[v].len() {
                let w = succ[v][*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("Tarjan stack underflow");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    raw.push(comp);
                }
            }
        }
    }
    raw.sort_by_key(|c| c[0]);
    let mut component_of = vec![0; n];
    for (c, members) in raw.iter().enumerate() {
        for &v in members {
            component_of[v] = c;
        }
    }
    let mut condensation_edges = BTreeSet::new();
    for (i, j) in g.edges() {
        let (ci, cj) = (component_of[i], component_of[j]);
        if ci != cj {
            condensation_edges.insert((ci, cj));
        }
    }
    let mut is_root = vec![true; raw.len()];
    for &(_, cj) in &condensation_edges {
        is_root[cj] = false;
    }
    SccDecomposition {
        components: raw,
        component_of,
        condensation_edges,
        is_root,
    }
}

/// Per-node centralities, computed on the graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Centralities {
    pub in_degree: Vec<f64>,
    pub out_degree: Vec<f64>,
    /// Harmonic closeness over incoming paths, divided by `n − 1`.
    pub in_closeness: Vec<f64>,
    /// Harmonic closeness over outgoing paths, divided by `n − 1`.
    pub out_closeness: Vec<f64>,
    /// Brandes betweenness divided by `(n − 1)(n − 2)`.
    pub betweenness: Vec<f64>,
    pub pagerank: Vec<f64>,
}

impl Centralities {
    pub const MEASURES: [&'static str; 6] = [
        "in_degree",
        "out_degree",
        "in_closeness",
        "out_closeness",
        "betweenness",
        "pagerank",
    ];

    pub fn measure(&self, name: &str) -> Option<&[f64]> {
        Some(match name {
            "in_degree" => &self.in_degree,
            "out_degree" => &self.out_degree,
            "in_closeness" => &self.in_closeness,
            "out_closeness" => &self.out_closeness,
            "betweenness" => &self.betweenness,
            "pagerank" => &self.pagerank,
            _ => return None,
        })
    }

    pub fn write_csv<W: Write>(&self, names: &[String], out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["node"];
        header.extend(Self::MEASURES);
        w.write_record(&header)?;
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![name.clone()];
            for m in Self::MEASURES {
                row.push(format!("{:.16e}", self.measure(m).unwrap()[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn bfs_distances(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        let d = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                q.push_back(w);
            }
        }
    }
    dist
}

fn harmonic(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let norm = if n > 1 { (n - 1) as f64 } else { 1.0 };
    (0..n)
        .map(|s| {
            bfs_distances(adj, s)
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != s)
                .filter_map(|(_, d)| d.map(|d| 1.0 / d as f64))
                .sum::<f64>()
                / norm
        })
        .collect()
}

fn brandes(adj: &[Vec<usize>]) -> Vec<f64> {
    let n = adj.len();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut order = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist: Vec<i64> = vec![-1; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            order.push(v);
            for &w in &adj[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    q.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        for &w in order.iter().rev() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    if n > 2 {
        let norm = ((n - 1) * (n - 2)) as f64;
        cb.iter_mut().for_each(|c| *c /= norm);
    }
    cb
}

fn pagerank(adj: &[Vec<usize>], damping: f64, tol: f64) -> Vec<f64> {
    let n = adj.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mut p = vec![1.0 / nf; n];
    for _ in 0..10_000 {
        let dangling: f64 = (0..n).filter(|&v| adj[v].is_empty()).map(|v| p[v]).sum();
        let mut next = vec![(1.0 - damping) / nf + damping * dangling / nf; n];
        for v in 0..n {
            if !adj[v].is_empty() {
                let share = damping * p[v] / adj[v].len() as f64;
                for &w in &adj[v] {
                    next[w] += share;
                }
            }
        }
        let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if change < tol {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter().map(|v| v / total).collect()
}

pub fn centralities(g: &Digraph) -> Centralities {
    let g = g.without_self_loops();
    let n = g.n();
    let out_adj: Vec<Vec<usize>> = (0..n).map(|i| g.successors(i).collect()).collect();
    let in_adj = g.predecessors();
    Centralities {
        in_degree: in_adj.iter().map(|p| p.len() as f64).collect(),
        out_degree: out_adj.iter().map(|s| s.len() as f64).collect(),
        in_closeness: harmonic(&in_adj),
        out_closeness: harmonic(&out_adj),
        betweenness: brandes(&out_adj),
        pagerank: pagerank(&out_adj, 0.85, 1e-10),
    }
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

/// Pearson coefficient between selection probabilities and each centrality.
pub fn selection_correlation(
    probabilities: &[f64],
    c: &Centralities,
) -> Result<Vec<(&'static str, Option<f64>)>, OidError> {
    if probabilities.len() < 3 || probabilities.len() != c.pagerank.len() {
        return Err(OidError::Correlation);
    }
    Ok(Centralities::MEASURES
        .iter()
        .map(|&m| (m, pearson(probabilities, c.measure(m).unwrap())))
        .collect())
}
