use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph stored as sorted, symmetric neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndirectedGraph {
    n_nodes: usize,
    adj: Vec<Vec<u32>>,
}

impl UndirectedGraph {
    /// Validates symmetry, sortedness and the absence of self-loops.
    pub fn new(adj: Vec<Vec<u32>>) -> Result<Self> {
        let n_nodes = adj.len();
        for (u, nbrs) in adj.iter().enumerate() {
            for w in nbrs.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Contract(format!("node {u}: neighbors not strictly sorted")));
                }
            }
            for &v in nbrs {
                let v = v as usize;
                if v >= n_nodes {
                    return Err(Error::Bounds(format!("node {u}: neighbor {v} >= {n_nodes}")));
                }
                if v == u {
                    return Err(Error::Contract(format!("self-loop on node {u}")));
                }
                if adj[v].binary_search(&(u as u32)).is_err() {
                    return Err(Error::Contract(format!("asymmetric adjacency: {u}-{v} without {v}-{u}")));
                }
            }
        }
        Ok(Self { n_nodes, adj })
    }

    /// Builds from arbitrary (possibly directed, duplicated) pairs; self-loops are dropped.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut adj = vec![Vec::new(); n_nodes];
        for (s, d) in edges {
            if s as usize >= n_nodes || d as usize >= n_nodes {
                return Err(Error::Bounds(format!("edge {s}-{d} with n_nodes {n_nodes}")));
            }
            if s != d {
                adj[s as usize].push(d);
                adj[d as usize].push(s);
            }
        }
        for nbrs in &mut adj {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        Ok(Self { n_nodes, adj })
    }

    pub fn empty(n_nodes: usize) -> Self {
        Self { n_nodes, adj: vec![Vec::new(); n_nodes] }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adj[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn degrees(&self) -> Vec<u64> {
        self.adj.iter().map(|a| a.len() as u64).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, nbrs)| {
            nbrs.iter().filter(move |&&v| (v as usize) > u).map(move |&v| (u as u32, v))
        })
    }

    /// Relabels nodes: new id of node `u` is `perm[u]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for (u, nbrs) in self.adj.iter().enumerate() {
            adj[perm[u]] = nbrs.iter().map(|&v| perm[v as usize] as u32).collect();
            adj[perm[u]].sort_unstable();
        }
        Self { n_nodes: self.n_nodes, adj }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn asymmetric_rejected() {
        assert!(matches!(UndirectedGraph::new(vec![vec![1], vec![]]), Err(Error::Contract(_))));
        assert!(matches!(UndirectedGraph::new(vec![vec![0]]), Err(Error::Contract(_))));
        assert!(UndirectedGraph::new(vec![vec![1], vec![0]]).is_ok());
    }

    #[test]
    fn from_edges_dedups_and_drops_loops() {
        let g = UndirectedGraph::from_edges(3, [(0, 1), (1, 0), (2, 2), (1, 2)]).unwrap();
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
    }
}
