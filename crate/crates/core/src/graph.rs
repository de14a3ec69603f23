//! Undirected CSR graph and the structural quantities used by the
//! calibrators: degrees, hop distance to the training set, node homophily,
//! mean relative degree and the GCN propagation operator.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::numerics::SparseMatrix;

/// Immutable undirected graph in CSR form.
///
/// Neighbor lists are sorted, deduplicated, symmetric and free of self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a symmetric, deduplicated, self-loop-free graph.
    ///
    /// The edge list may contain duplicates, self-loops, or only one
    /// direction of each edge.
    pub fn build(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (line, &(u, v)) in edges.iter().enumerate() {
            for id in [u, v] {
                if id >= num_nodes {
                    return Err(Error::NodeOutOfRange {
                        id,
                        num_nodes,
                        line,
                    });
                }
            }
            if u != v {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in adj {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self {
            num_nodes,
            offsets,
            neighbors,
        })
    }

    /// Parses the `u v` per-line text format (`#` comments, blank lines ignored).
    pub fn parse_edge_list(text: &str) -> Result<Vec<(usize, usize)>> {
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let mut next = |what: &str| -> Result<usize> {
                it.next()
                    .ok_or_else(|| Error::Parse {
                        line: i + 1,
                        msg: format!("missing {what} node id"),
                    })?
                    .parse()
                    .map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("bad {what} node id: {e}"),
                    })
            };
            let u = next("source")?;
            let v = next("target")?;
            if it.next().is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected exactly two node ids".into(),
                });
            }
            edges.push((u, v));
        }
        Ok(edges)
    }

    /// Like [`Graph::build`], reporting out-of-range ids by 1-based text line.
    pub fn from_edge_list_text(text: &str, num_nodes: usize) -> Result<Self> {
        let mut edges = Vec::new();
        let mut lines = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed = Self::parse_edge_list(line).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line: i + 1, msg },
                other => other,
            })?;
            edges.extend(parsed);
            lines.push(i + 1);
        }
        Self::build(&edges, num_nodes).map_err(|e| match e {
            Error::NodeOutOfRange {
                id,
                num_nodes,
                line,
            } => Error::NodeOutOfRange {
                id,
                num_nodes,
                line: lines[line],
            },
            other => other,
        })
    }

    /// One `u v` line per undirected edge with `u < v`.
    pub fn to_edge_list_text(&self) -> String {
        let mut s = String::new();
        for (u, v) in self.edges() {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[usize] {
        &self.neighbors
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.degree(i)).collect()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃ = D + I`.
    pub fn normalized_adjacency(&self) -> SparseMatrix {
        let inv_sqrt: Vec<f64> = (0..self.num_nodes)
            .map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let rows = (0..self.num_nodes)
            .map(|i| {
                let mut row = Vec::with_capacity(self.degree(i) + 1);
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                for &j in self.neighbors(i) {
                    row.push((j, inv_sqrt[i] * inv_sqrt[j]));
                }
                row
            })
            .collect();
        SparseMatrix::from_rows(rows)
    }

    /// `η_i = 1 + hops to the nearest source`; unreachable nodes get
    /// `1 + num_nodes`.
    pub fn hop_distance_to_set(&self, sources: &[usize]) -> Result<Vec<usize>> {
        if sources.is_empty() {
            return Err(Error::EmptySources);
        }
        let unreached = usize::MAX;
        let mut dist = vec![unreached; self.num_nodes];
        let mut queue = VecDeque::new();
        for &s in sources {
            if s >= self.num_nodes {
                return Err(Error::NodeOutOfRange {
                    id: s,
                    num_nodes: self.num_nodes,
                    line: 0,
                });
            }
            if dist[s] == unreached {
                dist[s] = 0;
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == unreached {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        Ok(dist
            .into_iter()
            .map(|d| {
                if d == unreached {
                    1 + self.num_nodes
                } else {
                    1 + d
                }
            })
            .collect())
    }

    /// Fraction of neighbors sharing the node's label; 0 for isolated nodes.
    pub fn node_homophily(&self, labels: &[usize]) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| {
                let nb = self.neighbors(i);
                if nb.is_empty() {
                    0.0
                } else {
                    nb.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / nb.len() as f64
                }
            })
            .collect()
    }

    /// `r̄_i = mean_j √((d_i+1)/(d_j+1))` over neighbors; 1 for isolated nodes.
    pub fn mean_relative_degree(&self) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| {
                let nb = self.neighbors(i);
                if nb.is_empty() {
                    return 1.0;
                }
                let di = (self.degree(i) + 1) as f64;
                nb.iter()
                    .map(|&j| (di / (self.degree(j) + 1) as f64).sqrt())
                    .sum::<f64>()
                    / nb.len() as f64
            })
            .collect()
    }
}

/// Per-node structural diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralProfile {
    pub degrees: Vec<usize>,
    pub eta: Vec<usize>,
    pub homophily: Vec<f64>,
    pub mean_relative_degree: Vec<f64>,
}

impl StructuralProfile {
    pub fn compute(graph: &Graph, labels: &[usize], train: &[usize]) -> Result<Self> {
        Ok(Self {
            degrees: graph.degrees(),
            eta: graph.hop_distance_to_set(train)?,
            homophily: graph.node_homophily(labels),
            mean_relative_degree: graph.mean_relative_degree(),
        })
    }
}
