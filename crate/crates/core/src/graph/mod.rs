//! Graph containers, dataset generation and ingestion, and edge-density
//! domain splitting.

mod format;
mod split;
mod synth;
mod tu;

pub use format::{read_dataset, write_dataset};
pub use split::{domain_tags, split_by_edge_density, Domain, DomainSplit};
pub use synth::{contains_motif, synth_domain_dataset, MotifRule, SynthConfig};
pub use tu::load_tu_dataset;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Undirected graph with a hard 0/1 adjacency and dense node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    adjacency: Tensor,
    features: Tensor,
    label: Option<usize>,
}

impl Graph {
    pub fn new(adjacency: Tensor, features: Tensor, label: Option<usize>) -> Result<Self> {
        let n = adjacency.rows();
        if n == 0 || adjacency.cols() != n {
            return Err(Error::invalid(format!(
                "adjacency must be square and non-empty, got {:?}",
                adjacency.shape()
            )));
        }
        if features.rows() != n {
            return Err(Error::Shape {
                op: "graph",
                lhs: adjacency.shape(),
                rhs: features.shape(),
            });
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::invalid(format!("self loop at node {i}")));
            }
            for j in i + 1..n {
                let a = adjacency[(i, j)];
                if a != adjacency[(j, i)] || (a != 0.0 && a != 1.0) {
                    return Err(Error::invalid(format!(
                        "adjacency entry ({i},{j}) must be symmetric 0/1"
                    )));
                }
            }
        }
        Ok(Self {
            adjacency,
            features,
            label,
        })
    }

    /// Builds from an undirected edge list; duplicate edges collapse.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        label: Option<usize>,
    ) -> Result<Self> {
        let mut adjacency = Tensor::zeros(n, n);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!("edge ({u},{v}) outside {n} nodes")));
            }
            if u == v {
                return Err(Error::invalid(format!("self loop at node {u}")));
            }
            adjacency[(u, v)] = 1.0;
            adjacency[(v, u)] = 1.0;
        }
        Self::new(adjacency, features, label)
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edges `(u, v)` with `u < v`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.num_nodes();
        let mut out = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if self.adjacency[(u, v)] != 0.0 {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.sum() as usize / 2
    }

    /// Undirected edges per node.
    pub fn edge_ratio(&self) -> f64 {
        self.num_edges() as f64 / self.num_nodes() as f64
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .map(|i| self.adjacency.row(i).iter().sum::<f64>() as usize)
            .collect()
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let adjacency = Tensor::from_fn(n, n, |i, j| self.adjacency[(perm[i], perm[j])]);
        let features = Tensor::from_fn(n, self.feature_dim(), |i, j| self.features[(perm[i], j)]);
        Self {
            adjacency,
            features,
            label: self.label,
        }
    }
}

/// Ordered collection of graphs sharing a feature dimension and label space.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
}

impl GraphDataset {
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<Graph>,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        for (i, g) in graphs.iter().enumerate() {
            if g.feature_dim() != feature_dim {
                return Err(Error::invalid(format!(
                    "graph {i} has feature dim {}, dataset expects {feature_dim}",
                    g.feature_dim()
                )));
            }
            if let Some(label) = g.label() {
                if label >= num_classes {
                    return Err(Error::Label {
                        label,
                        classes: num_classes,
                    });
                }
            }
        }
        Ok(Self {
            name: name.into(),
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Labels of every graph; errors if any graph is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                g.label()
                    .ok_or_else(|| Error::invalid(format!("graph {i} of {} is unlabeled", self.name)))
            })
            .collect()
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Self {
        Self {
            name: name.into(),
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    /// Concatenation; all parts must agree on classes and feature dim.
    pub fn concat(name: impl Into<String>, parts: &[&GraphDataset]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of no datasets"))?;
        let mut graphs = Vec::new();
        for p in parts {
            if p.num_classes != first.num_classes || p.feature_dim != first.feature_dim {
                return Err(Error::Incompatible(format!(
                    "{} ({} classes, dim {}) vs {} ({} classes, dim {})",
                    first.name, first.num_classes, first.feature_dim, p.name, p.num_classes, p.feature_dim
                )));
            }
            graphs.extend(p.graphs.iter().cloned());
        }
        Self::new(name, graphs, first.num_classes, first.feature_dim)
    }

    pub fn mean_edge_ratio(&self) -> f64 {
        self.graphs.iter().map(Graph::edge_ratio).sum::<f64>() / self.len().max(1) as f64
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(g: &Graph) -> Tensor {
    let n = g.num_nodes();
    let a = g.adjacency();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / (a.row(i).iter().sum::<f64>() + 1.0).sqrt())
        .collect();
    Tensor::from_fn(n, n, |i, j| {
        let aij = if i == j { 1.0 } else { a[(i, j)] };
        inv_sqrt[i] * aij * inv_sqrt[j]
    })
}
