//! Reader for the TU graph-classification layout: `DS_A.txt`,
//! `DS_graph_indicator.txt`, `DS_graph_labels.txt` and optionally
//! `DS_node_labels.txt`, where `DS` is the dataset name.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Graph, GraphDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

fn find_prefix(dir: &Path) -> Result<String> {
    let fallback = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if dir.join(format!("{fallback}_A.txt")).exists() {
        return Ok(fallback);
    }
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(prefix) = name.strip_suffix("_A.txt") {
            return Ok(prefix.to_string());
        }
    }
    Err(Error::MissingFile(dir.join(format!("{fallback}_A.txt"))))
}

fn read_required(path: PathBuf) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    Ok(fs::read_to_string(path)?)
}

fn parse_ints(text: &str, what: &'static str) -> Result<Vec<i64>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<i64>()
                .map_err(|e| Error::parse(what, i + 1, e.to_string()))
        })
        .collect()
}

/// Sorted distinct values mapped to `0..k`.
fn remap(values: &[i64]) -> BTreeMap<i64, usize> {
    let mut map = BTreeMap::new();
    for &v in values {
        map.entry(v).or_insert(0);
    }
    for (i, slot) in map.values_mut().enumerate() {
        *slot = i;
    }
    map
}

pub fn load_tu_dataset(dir: impl AsRef<Path>) -> Result<GraphDataset> {
    let dir = dir.as_ref();
    let prefix = find_prefix(dir)?;
    let file = |suffix: &str| dir.join(format!("{prefix}_{suffix}.txt"));

    let indicator = parse_ints(&read_required(file("graph_indicator"))?, "graph indicator")?;
    let graph_labels = parse_ints(&read_required(file("graph_labels"))?, "graph labels")?;
    let edges_text = read_required(file("A"))?;
    let node_labels = match file("node_labels") {
        p if p.exists() => Some(parse_ints(&fs::read_to_string(p)?, "node labels")?),
        _ => None,
    };

    let num_nodes = indicator.len();
    let num_graphs = graph_labels.len();
    // Graph ids must be 1..=num_graphs, non-decreasing, each used.
    let mut offsets = vec![0usize; num_graphs + 1];
    let mut prev = 0i64;
    for (i, &gid) in indicator.iter().enumerate() {
        if gid < 1 || gid as usize > num_graphs || gid < prev || gid > prev + 1 {
            return Err(Error::parse(
                "graph indicator",
                i + 1,
                format!("graph id {gid} after {prev} is not contiguous"),
            ));
        }
        prev = gid;
        offsets[gid as usize] = i + 1;
    }
    if prev as usize != num_graphs {
        return Err(Error::parse(
            "graph indicator",
            num_nodes,
            format!("only {prev} of {num_graphs} graphs have nodes"),
        ));
    }

    let (feature_dim, node_label_map) = match &node_labels {
        Some(labels) => {
            if labels.len() != num_nodes {
                return Err(Error::parse(
                    "node labels",
                    labels.len(),
                    format!("{} labels for {num_nodes} nodes", labels.len()),
                ));
            }
            let map = remap(labels);
            (map.len(), Some(map))
        }
        None => (1, None),
    };

    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (i, line) in edges_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(|s| s.trim().parse::<usize>());
        let (u, v) = match (parts.next(), parts.next(), parts.next()) {
            (Some(Ok(u)), Some(Ok(v)), None) => (u, v),
            _ => return Err(Error::parse("edge list", i + 1, format!("bad line {line:?}"))),
        };
        if u == 0 || v == 0 || u > num_nodes || v > num_nodes {
            return Err(Error::parse(
                "edge list",
                i + 1,
                format!("node id out of range 1..={num_nodes}"),
            ));
        }
        let (gu, gv) = (indicator[u - 1] as usize, indicator[v - 1] as usize);
        if gu != gv {
            return Err(Error::parse("edge list", i + 1, "edge crosses graphs"));
        }
        let base = offsets[gu - 1];
        let (a, b) = (u - 1 - base, v - 1 - base);
        if a != b {
            edge_lists[gu - 1].push((a.min(b), a.max(b)));
        }
    }

    let label_map = remap(&graph_labels);
    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let (start, end) = (offsets[g], offsets[g + 1]);
        let n = end - start;
        let features = match (&node_labels, &node_label_map) {
            (Some(labels), Some(map)) => {
                Tensor::from_fn(n, feature_dim, |i, j| (map[&labels[start + i]] == j) as u8 as f64)
            }
            _ => Tensor::ones(n, 1),
        };
        let label = label_map[&graph_labels[g]];
        graphs.push(Graph::from_edges(n, &edge_lists[g], features, Some(label))?);
    }

    GraphDataset::new(prefix, graphs, label_map.len(), feature_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn toy_single_graph() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("TOY");
        fs::create_dir(&dir).unwrap();
        // TU edge lists carry both directions.
        write(&dir, "TOY_A.txt", "1, 2\n2, 1\n2, 3\n3, 2\n");
        write(&dir, "TOY_graph_indicator.txt", "1\n1\n1\n");
        write(&dir, "TOY_graph_labels.txt", "-1\n");
        let ds = load_tu_dataset(&dir).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.feature_dim(), 1);
        assert_eq!(ds.num_classes(), 1);
        let g = &ds.graphs()[0];
        assert_eq!(g.adjacency().data().iter().filter(|&&v| v != 0.0).count(), 4);
        assert_eq!(g.label(), Some(0));
    }

    #[test]
    fn one_directional_edges_are_symmetrized_and_labels_one_hot() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        write(dir, "X_A.txt", "1,2\n2,3\n4,5\n");
        write(dir, "X_graph_indicator.txt", "1\n1\n1\n2\n2\n");
        write(dir, "X_graph_labels.txt", "1\n-1\n");
        write(dir, "X_node_labels.txt", "0\n2\n5\n2\n0\n");
        let ds = load_tu_dataset(dir).unwrap();
        assert_eq!(ds.feature_dim(), 3);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.graphs()[0].label(), Some(1));
        assert_eq!(ds.graphs()[1].label(), Some(0));
        let g1 = &ds.graphs()[1];
        assert_eq!(g1.edges(), vec![(0, 1)]);
        assert_eq!(g1.features().row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(g1.features().row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn errors() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        assert!(matches!(load_tu_dataset(dir), Err(Error::MissingFile(_))));

        write(dir, "Y_A.txt", "1,9\n");
        write(dir, "Y_graph_indicator.txt", "1\n1\n");
        assert!(matches!(load_tu_dataset(dir), Err(Error::MissingFile(_))));
        write(dir, "Y_graph_labels.txt", "0\n");
        assert!(matches!(load_tu_dataset(dir), Err(Error::Parse { .. })));

        write(dir, "Y_A.txt", "1,2\n");
        write(dir, "Y_graph_indicator.txt", "1\n3\n");
        write(dir, "Y_graph_labels.txt", "0\n1\n1\n");
        assert!(matches!(load_tu_dataset(dir), Err(Error::Parse { .. })));
    }
}
