use std::fs;
use std::path::{Path, PathBuf};

use super::{GateParams, MaskPlacement, MaskedExpert, MergeHyper, MergedModel};
use crate::error::{Error, Result};
use crate::gnn::load_checkpoint;
use crate::persist::{decode, encode, TextDoc};

const MAGIC: &str = "graphmerge-merged 1";

/// Writes masks, gate weights, and hyperparameters; experts are stored by
/// reference to their checkpoint files.
pub fn save_merged(
    path: impl AsRef<Path>,
    model: &MergedModel,
    expert_paths: &[PathBuf],
) -> Result<()> {
    if expert_paths.len() != model.experts.len() {
        return Err(Error::invalid(format!(
            "{} checkpoint paths for {} experts",
            expert_paths.len(),
            model.experts.len()
        )));
    }
    let h = model.hyper;
    let mut header = vec![
        ("experts".to_string(), model.experts.len().to_string()),
        ("placement".to_string(), model.experts[0].placement.label().to_string()),
        ("k".to_string(), model.gate.k.to_string()),
        ("noisy".to_string(), model.gate.noisy.to_string()),
        ("lambda_gate".to_string(), format!("{:?}", h.lambda_gate)),
        ("lambda_mask".to_string(), format!("{:?}", h.lambda_mask)),
        ("gamma_p".to_string(), format!("{:?}", h.gamma_p)),
        ("gamma_v".to_string(), format!("{:?}", h.gamma_v)),
    ];
    for (j, p) in expert_paths.iter().enumerate() {
        let s = p
            .to_str()
            .ok_or_else(|| Error::invalid(format!("non-UTF-8 path {}", p.display())))?;
        header.push((format!("expert.{j}"), s.to_string()));
    }
    let mut tensors = vec![
        ("gate.w_g".to_string(), model.gate.w_g.clone()),
        ("gate.w_n".to_string(), model.gate.w_n.clone()),
    ];
    for (j, e) in model.experts.iter().enumerate() {
        for (&i, m) in e.masked.iter().zip(&e.masks) {
            tensors.push((format!("mask.{j}.{}", e.expert.params[i].name), m.clone()));
        }
    }
    let doc = TextDoc {
        magic: MAGIC.to_string(),
        header,
        tensors,
    };
    fs::write(path, encode(&doc))?;
    Ok(())
}

/// Loads a merged model and the expert checkpoints it references. Relative
/// expert paths resolve against the merged file's directory.
pub fn load_merged(path: impl AsRef<Path>) -> Result<(MergedModel, Vec<PathBuf>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let doc = decode(&fs::read_to_string(path)?, MAGIC)?;
    let count: usize = doc.require_parse("experts")?;
    if count == 0 {
        return Err(Error::Corrupt("merged model without experts".into()));
    }
    let placement: MaskPlacement = doc.require("placement")?.parse()?;
    let hyper = MergeHyper {
        lambda_gate: doc.require_parse("lambda_gate")?,
        lambda_mask: doc.require_parse("lambda_mask")?,
        gamma_p: doc.require_parse("gamma_p")?,
        gamma_v: doc.require_parse("gamma_v")?,
    };
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut experts = Vec::with_capacity(count);
    let mut paths = Vec::with_capacity(count);
    for j in 0..count {
        let p = PathBuf::from(doc.require(&format!("expert.{j}"))?);
        let resolved = if p.is_relative() { base.join(&p) } else { p.clone() };
        let ckpt = load_checkpoint(&resolved)?;
        let mut e = MaskedExpert::new(ckpt.model, placement);
        for (slot, &i) in e.masks.iter_mut().zip(&e.masked) {
            let name = format!("mask.{j}.{}", e.expert.params[i].name);
            let t = doc
                .tensor(&name)
                .ok_or_else(|| Error::Corrupt(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Incompatible(format!(
                    "{name} has shape {:?}, expert parameter has {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        experts.push(e);
        paths.push(p);
    }
    if let Some(first) = experts.first() {
        let d = first.expert.descriptor;
        if experts.iter().any(|e| {
            e.expert.descriptor.num_classes != d.num_classes
                || e.expert.descriptor.input_dim != d.input_dim
        }) {
            return Err(Error::Incompatible(
                "referenced experts differ in classes or input dim".into(),
            ));
        }
    }
    let get = |n: &str| {
        doc.tensor(n)
            .cloned()
            .ok_or_else(|| Error::Corrupt(format!("missing tensor {n}")))
    };
    let gate = GateParams {
        w_g: get("gate.w_g")?,
        w_n: get("gate.w_n")?,
        k: doc.require_parse("k")?,
        noisy: doc.require_parse("noisy")?,
    };
    if gate.experts() != count || gate.w_n.shape() != gate.w_g.shape() {
        return Err(Error::Corrupt("gate shape does not match expert count".into()));
    }
    if gate.k == 0 || gate.k > count {
        return Err(Error::Corrupt(format!("top-k {} outside [1, {count}]", gate.k)));
    }
    let model = MergedModel {
        experts,
        gate,
        hyper,
    };
    if model.gate.input_dim() != model.input_dim() + super::STRUCTURAL_FEATURES {
        return Err(Error::Incompatible(
            "gate input width does not match the experts' feature dim".into(),
        ));
    }
    Ok((model, paths))
}
