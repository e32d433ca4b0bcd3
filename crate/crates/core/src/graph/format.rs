//! Line-oriented dataset file:
//!
//! ```text
//! graphs=<N> classes=<c> dim=<d>
//! g <n> <label>          # label is `-` when absent
//! <d floats>             # n feature lines
//! e <u> <v>              # 0-indexed, u < v, any number of lines
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Graph, GraphDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub fn dataset_to_string(ds: &GraphDataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "graphs={} classes={} dim={}",
        ds.len(),
        ds.num_classes(),
        ds.feature_dim()
    );
    for g in ds.graphs() {
        let label = g.label().map_or("-".to_string(), |l| l.to_string());
        let _ = writeln!(out, "g {} {label}", g.num_nodes());
        for i in 0..g.num_nodes() {
            let row: Vec<String> = g.features().row(i).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        for (u, v) in g.edges() {
            let _ = writeln!(out, "e {u} {v}");
        }
    }
    out
}

pub fn write_dataset(path: impl AsRef<Path>, ds: &GraphDataset) -> Result<()> {
    fs::write(path, dataset_to_string(ds))?;
    Ok(())
}

fn header_field(tok: Option<&str>, key: &str) -> Result<usize> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::parse("dataset header", 1, format!("expected {key}=<int>")))
}

pub fn dataset_from_str(name: &str, text: &str) -> Result<GraphDataset> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse("dataset", 1, "empty file"))?;
    let mut toks = header.split_whitespace();
    let count = header_field(toks.next(), "graphs")?;
    let classes = header_field(toks.next(), "classes")?;
    let dim = header_field(toks.next(), "dim")?;

    let mut graphs = Vec::with_capacity(count);
    let mut pending = lines.peekable();
    while let Some((ln, line)) = pending.next() {
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        if toks.next() != Some("g") {
            return Err(Error::parse("dataset", ln, "expected graph record `g <n> <label>`"));
        }
        let n: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse("dataset", ln, "bad node count"))?;
        let label = match toks.next() {
            Some("-") => None,
            Some(t) => Some(
                t.parse::<usize>()
                    .map_err(|_| Error::parse("dataset", ln, "bad label"))?,
            ),
            None => return Err(Error::parse("dataset", ln, "missing label")),
        };
        let mut data = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let (fl, fline) = pending
                .next()
                .ok_or_else(|| Error::parse("dataset", ln, "truncated feature block"))?;
            let row: Vec<f64> = fline
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse("dataset", fl, e.to_string()))?;
            if row.len() != dim {
                return Err(Error::parse(
                    "dataset",
                    fl,
                    format!("{} features, expected {dim}", row.len()),
                ));
            }
            data.extend(row);
        }
        let mut edges = Vec::new();
        while let Some(&(el, eline)) = pending.peek() {
            if !eline.starts_with("e ") {
                break;
            }
            pending.next();
            let parts: Vec<usize> = eline[2..]
                .split_whitespace()
                .map(|t| t.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse("dataset", el, "bad edge"))?;
            match parts[..] {
                [u, v] if u < v && v < n => edges.push((u, v)),
                _ => return Err(Error::parse("dataset", el, "edge must be `e u v` with u < v < n")),
            }
        }
        let features = Tensor::from_vec(n, dim, data)?;
        graphs.push(Graph::from_edges(n, &edges, features, label)?);
    }
    if graphs.len() != count {
        return Err(Error::parse(
            "dataset",
            text.lines().count(),
            format!("header promises {count} graphs, found {}", graphs.len()),
        ));
    }
    GraphDataset::new(name, graphs, classes, dim)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<GraphDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset_from_str(&name, &fs::read_to_string(path)?)
}
