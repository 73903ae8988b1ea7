//! Exact directed KNN graphs and their degree centralities.
//!
//! Every node points at its `k` most similar other nodes. Scores follow a
//! "higher is more similar" convention for all metrics; distances are negated.
//! Equal scores are resolved by ascending node index, so construction is a pure
//! function of the input and matches an exhaustive pairwise selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_edge_list, parse_edge_list, read_text, write_text};
use crate::error::{Error, Result};
use crate::graph::UndirectedGraph;
use crate::sparse::{SparseFeatureMatrix, SparseRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Cosine,
    Euclidean,
    Manhattan,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Cosine, Metric::Euclidean, Metric::Manhattan];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
            Metric::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Metric::Cosine),
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "manhattan" | "l1" => Ok(Metric::Manhattan),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

/// Similarity between two rows; higher means closer.
///
/// Cosine of a zero-norm vector is defined as 0 against everything.
pub fn similarity(u: &SparseRow<'_>, v: &SparseRow<'_>, metric: Metric) -> Result<f64> {
    if u.dim != v.dim {
        return Err(Error::Shape(format!("rows of dimension {} and {}", u.dim, v.dim)));
    }
    let norms = match metric {
        Metric::Cosine => (u.norm_sq().sqrt(), v.norm_sq().sqrt()),
        _ => (0.0, 0.0),
    };
    Ok(score(u, v, metric, norms))
}

#[inline]
fn score(u: &SparseRow<'_>, v: &SparseRow<'_>, metric: Metric, (nu, nv): (f64, f64)) -> f64 {
    match metric {
        Metric::Cosine => {
            if nu == 0.0 || nv == 0.0 {
                0.0
            } else {
                u.dot(v) / (nu * nv)
            }
        }
        Metric::Euclidean => {
            let mut acc = 0.0;
            u.zip_union(v, |a, b| acc += (a - b) * (a - b));
            -acc.sqrt()
        }
        Metric::Manhattan => {
            let mut acc = 0.0;
            u.zip_union(v, |a, b| acc += (a - b).abs());
            -acc
        }
    }
}

/// Heap entry ordered so that the *worst* candidate sits on top.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    node: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // lower score is worse; on equal score the larger index is worse
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then(self.node.cmp(&other.node))
    }
}

/// Directed KNN graph with exactly `k` sorted out-neighbors per node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedKnnGraph {
    n_nodes: usize,
    k: usize,
    metric: Metric,
    out_adj: Vec<Vec<u32>>,
}

/// JSON sidecar written next to an exported edge list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSidecar {
    pub n_nodes: usize,
    pub k: usize,
    pub metric: Metric,
    pub n_directed_edges: usize,
    pub n_undirected_edges: usize,
}

/// Exhaustive top-`k` selection under `metric`. `k >= n_rows` is clamped to `n_rows - 1`.
pub fn build_knn_graph(f: &SparseFeatureMatrix, k: usize, metric: Metric) -> Result<DirectedKnnGraph> {
    let n = f.n_rows();
    if n == 0 {
        return Err(Error::Input("cannot build a KNN graph on an empty matrix".into()));
    }
    if n < 2 {
        return Err(Error::Input("a KNN graph needs at least 2 nodes".into()));
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let k = if k >= n {
        log::warn!("k = {k} >= n = {n}; clamping to {}", n - 1);
        n - 1
    } else {
        k
    };
    let norms: Vec<f64> = match metric {
        Metric::Cosine => (0..n).map(|i| f.row(i).norm_sq().sqrt()).collect(),
        _ => vec![0.0; n],
    };
    let out_adj = (0..n)
        .into_par_iter()
        .map(|i| {
            let qi = f.row(i);
            let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let c = Candidate { score: score(&qi, &f.row(j), metric, (norms[i], norms[j])), node: j as u32 };
                if heap.len() < k {
                    heap.push(c);
                } else if let Some(worst) = heap.peek() {
                    if c < *worst {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            let mut nbrs: Vec<u32> = heap.into_iter().map(|c| c.node).collect();
            nbrs.sort_unstable();
            nbrs
        })
        .collect();
    Ok(DirectedKnnGraph { n_nodes: n, k, metric, out_adj })
}

impl DirectedKnnGraph {
    /// Wraps precomputed adjacency, checking the KNN invariants.
    pub fn from_adjacency(k: usize, metric: Metric, out_adj: Vec<Vec<u32>>) -> Result<Self> {
        let n_nodes = out_adj.len();
        let expected = k.min(n_nodes.saturating_sub(1));
        for (u, nbrs) in out_adj.iter().enumerate() {
            if nbrs.len() != expected {
                return Err(Error::Contract(format!(
                    "node {u} has out-degree {}, expected {expected}",
                    nbrs.len()
                )));
            }
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Contract(format!("node {u}: neighbors not strictly sorted")));
                }
            }
            if let Some(&v) = nbrs.iter().find(|&&v| v as usize >= n_nodes || v as usize == u) {
                return Err(Error::Contract(format!("node {u}: invalid neighbor {v}")));
            }
        }
        Ok(Self { n_nodes, k: expected, metric, out_adj })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn out_neighbors(&self, u: usize) -> &[u32] {
        &self.out_adj[u]
    }

    pub fn out_adj(&self) -> &[Vec<u32>] {
        &self.out_adj
    }

    pub fn n_directed_edges(&self) -> usize {
        self.out_adj.iter().map(Vec::len).sum()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.out_adj[u].binary_search(&(v as u32)).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.out_adj.iter().enumerate().flat_map(|(u, nbrs)| nbrs.iter().map(move |&v| (u as u32, v)))
    }

    /// Undirected view: `{u, v}` is an edge iff `u -> v` or `v -> u`.
    pub fn symmetrize(&self) -> UndirectedGraph {
        UndirectedGraph::from_edges(self.n_nodes, self.edges())
            .expect("knn adjacency indices are in range")
    }

    pub fn in_degrees(&self) -> Vec<u64> {
        let mut deg = vec![0u64; self.n_nodes];
        for (_, v) in self.edges() {
            deg[v as usize] += 1;
        }
        deg
    }

    pub fn sidecar(&self) -> GraphSidecar {
        let report = degree_report(self);
        GraphSidecar {
            n_nodes: self.n_nodes,
            k: self.k,
            metric: self.metric,
            n_directed_edges: self.n_directed_edges(),
            n_undirected_edges: report.n_undirected_edges,
        }
    }

    /// Writes `src dst` lines to `edges_path` and the JSON sidecar to `sidecar_path`.
    pub fn save(&self, edges_path: &Path, sidecar_path: &Path) -> Result<()> {
        write_text(edges_path, &format_edge_list(self.edges()))?;
        write_text(sidecar_path, &(serde_json::to_string_pretty(&self.sidecar())? + "\n"))
    }

    pub fn load(edges_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let sidecar: GraphSidecar = serde_json::from_str(&read_text(sidecar_path)?)?;
        let edges = parse_edge_list(&read_text(edges_path)?, sidecar.n_nodes)?;
        let mut out_adj = vec![Vec::new(); sidecar.n_nodes];
        for (s, d) in edges {
            out_adj[s as usize].push(d);
        }
        for nbrs in &mut out_adj {
            nbrs.sort_unstable();
        }
        let g = Self::from_adjacency(sidecar.k, sidecar.metric, out_adj)?;
        if g.n_directed_edges() != sidecar.n_directed_edges {
            return Err(Error::Contract(format!(
                "sidecar declares {} directed edges, edge list has {}",
                sidecar.n_directed_edges,
                g.n_directed_edges()
            )));
        }
        Ok(g)
    }
}

/// Per-node degree centralities of a directed KNN graph.
///
/// `nonreciprocal_in[v]` counts in-neighbors `u` of `v` for which `v -> u` is absent.
/// With that in-degree variant and `n_undirected_edges` counting each unordered
/// pair once, `sum(nonreciprocal_in) = 2|E| - k|V|` holds exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub k: usize,
    pub in_degree: Vec<u64>,
    pub out_degree: Vec<u64>,
    pub undirected_degree: Vec<u64>,
    pub nonreciprocal_in: Vec<u64>,
    pub n_undirected_edges: usize,
}

/// Outcome of checking the in-degree / edge-count identity on one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeIdentity {
    pub sum_nonreciprocal_in: u64,
    pub two_e_minus_kv: i64,
    pub n_undirected_edges: usize,
    pub k_times_v: usize,
    pub holds: bool,
}

pub fn degree_report(g: &DirectedKnnGraph) -> DegreeReport {
    let n = g.n_nodes();
    let mut in_degree = vec![0u64; n];
    let mut nonreciprocal_in = vec![0u64; n];
    let mut n_undirected_edges = 0usize;
    for (u, v) in g.edges() {
        let (u, v) = (u as usize, v as usize);
        in_degree[v] += 1;
        let reciprocal = g.has_edge(v, u);
        if !reciprocal {
            nonreciprocal_in[v] += 1;
        }
        // a reciprocal pair is counted once, from its lower endpoint
        if !reciprocal || u < v {
            n_undirected_edges += 1;
        }
    }
    let undirected_degree = g.symmetrize().degrees();
    DegreeReport {
        k: g.k(),
        in_degree,
        out_degree: g.out_adj().iter().map(|a| a.len() as u64).collect(),
        undirected_degree,
        nonreciprocal_in,
        n_undirected_edges,
    }
}

impl DegreeReport {
    pub fn n_nodes(&self) -> usize {
        self.in_degree.len()
    }

    pub fn max_in_degree(&self) -> u64 {
        self.in_degree.iter().copied().max().unwrap_or(0)
    }

    pub fn zero_in_degree_count(&self) -> usize {
        self.in_degree.iter().filter(|&&d| d == 0).count()
    }

    pub fn identity(&self) -> DegreeIdentity {
        let sum: u64 = self.nonreciprocal_in.iter().sum();
        let kv = self.k * self.n_nodes();
        let rhs = 2 * self.n_undirected_edges as i64 - kv as i64;
        DegreeIdentity {
            sum_nonreciprocal_in: sum,
            two_e_minus_kv: rhs,
            n_undirected_edges: self.n_undirected_edges,
            k_times_v: kv,
            holds: sum as i64 == rhs && self.n_undirected_edges <= kv,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,in,out,undirected,nonreciprocal_in\n");
        for i in 0..self.n_nodes() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                self.in_degree[i], self.out_degree[i], self.undirected_degree[i], self.nonreciprocal_in[i]
            );
        }
        out
    }
}
