//! Erdős–Rényi graphs with a planted motif, used as a controllable
//! distribution-shift benchmark: the edge probability is the domain variable.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Graph, GraphDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotifRule {
    /// A triangle plus a fourth node joined to one triangle vertex, with the
    /// edges added on top of the random graph.
    TrianglePendant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_graphs: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub edge_prob: f64,
    pub feature_dim: usize,
    pub motif: MotifRule,
}

impl SynthConfig {
    pub fn new(num_graphs: usize, edge_prob: f64) -> Self {
        Self {
            num_graphs,
            nodes_min: 10,
            nodes_max: 30,
            edge_prob,
            feature_dim: 8,
            motif: MotifRule::TrianglePendant,
        }
    }
}

/// True when some triangle has a vertex with a neighbor outside it, the
/// subgraph that [`MotifRule::TrianglePendant`] plants. Dense random graphs
/// contain it by chance, which is what makes the task density-sensitive.
pub fn contains_motif(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(|r| r.iter().filter(|&&e| e).count()).collect();
    (0..n).any(|a| {
        (a + 1..n).filter(|&b| adj[a][b]).any(|b| {
            (b + 1..n)
                .filter(|&c| adj[a][c] && adj[b][c])
                .any(|c| degree[a] > 2 || degree[b] > 2 || degree[c] > 2)
        })
    })
}

fn erdos_renyi(rng: &mut impl Rng, n: usize, p: f64) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                adj[u][v] = true;
                adj[v][u] = true;
            }
        }
    }
    adj
}

fn plant_motif(rng: &mut impl Rng, adj: &mut [Vec<bool>]) {
    let n = adj.len();
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.shuffle(rng);
    let (a, b, c, d) = (nodes[0], nodes[1], nodes[2], nodes[3]);
    for (u, v) in [(a, b), (b, c), (c, a)] {
        adj[u][v] = true;
        adj[v][u] = true;
    }
    adj[d][a] = true;
    adj[a][d] = true;
}

fn degree_features(adj: &[Vec<bool>], dim: usize) -> Tensor {
    let n = adj.len();
    let mut x = Tensor::zeros(n, dim);
    for (i, row) in adj.iter().enumerate() {
        let deg = row.iter().filter(|&&e| e).count();
        x[(i, deg.min(dim - 1))] = 1.0;
    }
    x
}

/// Balanced motif-detection dataset over ER(p) graphs.
///
/// Label 1 graphs get a triangle-plus-pendant planted on four random nodes;
/// label 0 graphs are left as drawn. The label records the planting, not the
/// motif's presence: as `p` grows, unlabelled copies of the motif appear by
/// chance and the planted edges change the degree profile less, so the
/// signal fades. Node features are one-hot degree buckets clipped at
/// `feature_dim - 1`.
pub fn synth_domain_dataset(seed: u64, cfg: &SynthConfig) -> Result<GraphDataset> {
    if !(cfg.edge_prob > 0.0 && cfg.edge_prob < 1.0) {
        return Err(Error::invalid(format!(
            "edge probability {} outside (0, 1)",
            cfg.edge_prob
        )));
    }
    if cfg.nodes_min < 4 {
        return Err(Error::invalid(format!(
            "motif needs at least 4 nodes, nodes_min = {}",
            cfg.nodes_min
        )));
    }
    if cfg.nodes_min > cfg.nodes_max || cfg.nodes_min < 6 || cfg.nodes_max > 64 {
        return Err(Error::invalid(format!(
            "nodes range [{}, {}] must lie within [6, 64]",
            cfg.nodes_min, cfg.nodes_max
        )));
    }
    if cfg.feature_dim < 2 {
        return Err(Error::invalid("degree features need at least 2 buckets"));
    }

    let mut rng = rng::stream(seed, 0);
    let mut labels: Vec<usize> = (0..cfg.num_graphs).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);

    let mut graphs = Vec::with_capacity(cfg.num_graphs);
    for label in labels {
        let n = rng.gen_range(cfg.nodes_min..=cfg.nodes_max);
        let adj = match (cfg.motif, label) {
            (MotifRule::TrianglePendant, 1) => {
                let mut adj = erdos_renyi(&mut rng, n, cfg.edge_prob);
                plant_motif(&mut rng, &mut adj);
                adj
            }
            (MotifRule::TrianglePendant, _) => erdos_renyi(&mut rng, n, cfg.edge_prob),
        };
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if adj[u][v] {
                    edges.push((u, v));
                }
            }
        }
        let x = degree_features(&adj, cfg.feature_dim);
        graphs.push(Graph::from_edges(n, &edges, x, Some(label))?);
    }
    GraphDataset::new(
        format!("er-p{}", cfg.edge_prob),
        graphs,
        2,
        cfg.feature_dim,
    )
}
