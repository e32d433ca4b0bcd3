use std::fs;
use std::path::Path;

use super::{ArchitectureDescriptor, GnnModel, Param};
use crate::autodiff::BnStats;
use crate::error::{Error, Result};
use crate::persist::{decode, encode, TextDoc};

const MAGIC: &str = "graphmerge-checkpoint 1";

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    /// Tag of the source domain the model was trained on.
    pub domain: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: GnnModel,
    pub meta: TrainingMeta,
}

fn bn_names(model: &GnnModel, layer: usize) -> (String, String) {
    let prefix = match model.descriptor.kind {
        super::Backbone::Gin => format!("gin{}.bn", layer + 1),
        _ => format!("bn{}", layer + 1),
    };
    (
        format!("{prefix}.running_mean"),
        format!("{prefix}.running_var"),
    )
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let m = &ckpt.model;
    let d = &m.descriptor;
    if ckpt.meta.domain.contains(['\n', '=']) {
        return Err(Error::invalid("domain tag may not contain newlines or '='"));
    }
    let mut header = vec![
        ("kind".to_string(), d.kind.name().to_string()),
        ("layers".to_string(), d.layers.to_string()),
        ("hidden_dim".to_string(), d.hidden_dim.to_string()),
        ("num_classes".to_string(), d.num_classes.to_string()),
        ("input_dim".to_string(), d.input_dim.to_string()),
        ("bn_layers".to_string(), d.bn_layer_count().to_string()),
    ];
    if let Some(first) = m.bn.first() {
        header.push(("bn_momentum".into(), format!("{:?}", first.momentum)));
        header.push(("bn_eps".into(), format!("{:?}", first.eps)));
    }
    header.push(("meta.seed".into(), ckpt.meta.seed.to_string()));
    header.push(("meta.epochs".into(), ckpt.meta.epochs.to_string()));
    header.push(("meta.domain".into(), ckpt.meta.domain.clone()));

    let mut tensors: Vec<_> = m
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    for (layer, stats) in m.bn.iter().enumerate() {
        let (mean, var) = bn_names(m, layer);
        tensors.push((mean, stats.mean.clone()));
        tensors.push((var, stats.var.clone()));
    }
    let doc = TextDoc {
        magic: MAGIC.to_string(),
        header,
        tensors,
    };
    fs::write(path, encode(&doc))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let doc = decode(&fs::read_to_string(path)?, MAGIC)?;
    let descriptor = ArchitectureDescriptor {
        kind: doc.require("kind")?.parse()?,
        layers: doc.require_parse("layers")?,
        hidden_dim: doc.require_parse("hidden_dim")?,
        num_classes: doc.require_parse("num_classes")?,
        input_dim: doc.require_parse("input_dim")?,
    };
    if descriptor.layers != ArchitectureDescriptor::LAYERS {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} layers, only {} are supported",
            descriptor.layers,
            ArchitectureDescriptor::LAYERS
        )));
    }
    let bn_layers: usize = doc.require_parse("bn_layers")?;
    if bn_layers != descriptor.bn_layer_count() {
        return Err(Error::Corrupt(format!(
            "{bn_layers} BN layers recorded for a {} model",
            descriptor.kind
        )));
    }

    let mut params = Vec::new();
    for (name, group, rows, cols) in descriptor.param_specs() {
        let value = doc
            .tensor(&name)
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?
            .clone();
        if value.shape() != (rows, cols) {
            return Err(Error::Corrupt(format!(
                "tensor {name} has shape {:?}, descriptor implies {:?}",
                value.shape(),
                (rows, cols)
            )));
        }
        params.push(Param { name, group, value });
    }
    let mut model = GnnModel {
        descriptor,
        params,
        bn: Vec::new(),
    };
    if bn_layers > 0 {
        let momentum: f64 = doc.require_parse("bn_momentum")?;
        let eps: f64 = doc.require_parse("bn_eps")?;
        for layer in 0..bn_layers {
            let (mean_name, var_name) = bn_names(&model, layer);
            let get = |n: &str| {
                doc.tensor(n)
                    .filter(|t| t.shape() == (1, descriptor.hidden_dim))
                    .cloned()
                    .ok_or_else(|| Error::Corrupt(format!("missing or misshapen {n}")))
            };
            model.bn.push(BnStats {
                mean: get(&mean_name)?,
                var: get(&var_name)?,
                momentum,
                eps,
            });
        }
    }
    let meta = TrainingMeta {
        seed: doc.require_parse("meta.seed")?,
        epochs: doc.require_parse("meta.epochs")?,
        domain: doc.require("meta.domain")?.to_string(),
    };
    Ok(Checkpoint { model, meta })
}

/// Loads a checkpoint and checks it against an expected descriptor.
pub fn load_model(path: impl AsRef<Path>, expected: &ArchitectureDescriptor) -> Result<GnnModel> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.model.descriptor != expected {
        return Err(Error::Incompatible(format!(
            "checkpoint descriptor {:?} does not match expected {:?}",
            ckpt.model.descriptor, expected
        )));
    }
    Ok(ckpt.model)
}
