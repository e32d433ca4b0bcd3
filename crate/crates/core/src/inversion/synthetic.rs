use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EdgeMode, GeneratorConfig};
use crate::error::{Error, Result};
use crate::graph::{read_dataset, write_dataset, GraphDataset};

/// Where a synthetic set came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Provenance {
    pub expert: String,
    pub seed: u64,
    pub config: GeneratorConfig,
}

/// Hardened synthetic graphs of one expert, labelled with the classes they
/// were generated for.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub dataset: GraphDataset,
    pub provenance: Provenance,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("prov")
}

fn provenance_to_string(p: &Provenance) -> String {
    let c = &p.config;
    let mut out = String::new();
    let _ = writeln!(out, "expert={}", p.expert);
    let _ = writeln!(out, "seed={}", p.seed);
    let _ = writeln!(out, "count={}", c.count);
    let _ = writeln!(out, "nodes_min={}", c.nodes_min);
    let _ = writeln!(out, "nodes_max={}", c.nodes_max);
    let _ = writeln!(out, "tau={:?}", c.tau);
    match c.tau_final {
        Some(t) => {
            let _ = writeln!(out, "tau_final={t:?}");
        }
        None => out.push_str("tau_final=none\n"),
    }
    let _ = writeln!(out, "epochs={}", c.epochs);
    let _ = writeln!(out, "encoder_hidden={}", c.encoder_hidden);
    let _ = writeln!(out, "feature_lr={:?}", c.feature_lr);
    let _ = writeln!(out, "encoder_lr={:?}", c.encoder_lr);
    match c.edges {
        EdgeMode::Learned => out.push_str("edges=learned\n"),
        EdgeMode::FixedRandom(p) => {
            let _ = writeln!(out, "edges=fixed:{p:?}");
        }
    }
    out
}

fn provenance_from_str(text: &str) -> Result<Provenance> {
    let mut fields = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("provenance", i + 1, "expected key=value"))?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| -> Result<&str> {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Corrupt(format!("provenance lacks {k}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Corrupt(format!("bad provenance value {k}={v}")))
    }
    let tau_final = match get("tau_final")? {
        "none" => None,
        v => Some(num("tau_final", v)?),
    };
    let edges = match get("edges")? {
        "learned" => EdgeMode::Learned,
        v => match v.strip_prefix("fixed:") {
            Some(p) => EdgeMode::FixedRandom(num("edges", p)?),
            None => return Err(Error::Corrupt(format!("bad edge mode {v}"))),
        },
    };
    let seed = num("seed", get("seed")?)?;
    Ok(Provenance {
        expert: get("expert")?.to_string(),
        seed,
        config: GeneratorConfig {
            count: num("count", get("count")?)?,
            nodes_min: num("nodes_min", get("nodes_min")?)?,
            nodes_max: num("nodes_max", get("nodes_max")?)?,
            tau: num("tau", get("tau")?)?,
            tau_final,
            epochs: num("epochs", get("epochs")?)?,
            encoder_hidden: num("encoder_hidden", get("encoder_hidden")?)?,
            feature_lr: num("feature_lr", get("feature_lr")?)?,
            encoder_lr: num("encoder_lr", get("encoder_lr")?)?,
            edges,
            seed,
        },
    })
}

/// Writes the graphs in the dataset format and the provenance to a `.prov`
/// file next to them.
pub fn write_synthetic(path: impl AsRef<Path>, set: &SyntheticSet) -> Result<()> {
    let path = path.as_ref();
    write_dataset(path, &set.dataset)?;
    fs::write(sidecar(path), provenance_to_string(&set.provenance))?;
    Ok(())
}

pub fn read_synthetic(path: impl AsRef<Path>) -> Result<SyntheticSet> {
    let path = path.as_ref();
    let mut dataset = read_dataset(path)?;
    let prov_path = sidecar(path);
    if !prov_path.exists() {
        return Err(Error::MissingFile(prov_path));
    }
    let provenance = provenance_from_str(&fs::read_to_string(prov_path)?)?;
    dataset.name = format!("synthetic-{}", provenance.expert);
    Ok(SyntheticSet {
        dataset,
        provenance,
    })
}
