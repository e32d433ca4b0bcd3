//! TOML experiment configuration. Every key has a default and unknown keys
//! are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamWConfig;
use crate::error::{Error, Result};
use crate::gnn::{Backbone, TrainConfig};
use crate::inversion::{EdgeMode, GeneratorConfig};
use crate::merge::{MaskPlacement, MergeConfig, MergeHyper, MergeSetup};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub experts: Vec<ExpertSpec>,
    pub generation: GenerationConfig,
    pub merge: MergeSection,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let roster = [("GCN", "A"), ("GIN", "A"), ("GCN", "B"), ("GIN", "B")];
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            pretrain: PretrainConfig::default(),
            experts: roster
                .iter()
                .map(|&(arch, domain)| ExpertSpec {
                    arch: arch.to_string(),
                    domain: domain.to_string(),
                    seed: None,
                })
                .collect(),
            generation: GenerationConfig::default(),
            merge: MergeSection::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Source data: synthetic ER domains, or a TU dataset split by edge density
/// when `tu_path` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub tu_path: Option<PathBuf>,
    /// Domain fractions for the density split of a TU dataset.
    pub split: Vec<f64>,
    /// Edge probability per synthetic domain; the last one is the target.
    pub edge_probs: Vec<f64>,
    pub graphs_per_domain: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub feature_dim: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            tu_path: None,
            split: vec![0.4, 0.4, 0.2],
            edge_probs: vec![0.1, 0.3, 0.45],
            graphs_per_domain: 200,
            nodes_min: 10,
            nodes_max: 30,
            feature_dim: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        Self {
            epochs: 100,
            batch_size: 32,
            hidden: 32,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
        }
    }
}

/// One roster entry. Without an explicit seed, the seed is derived from the
/// global seed and the entry's position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    pub arch: String,
    pub domain: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExpertSpec {
    pub fn id(&self) -> String {
        format!("{}-{}", self.arch.to_ascii_uppercase(), self.domain)
    }

    pub fn backbone(&self) -> Result<Backbone> {
        self.arch.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub count: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub tau: f64,
    pub tau_final: Option<f64>,
    pub epochs: usize,
    pub encoder_hidden: usize,
    pub feature_lr: f64,
    pub encoder_lr: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            count: g.count,
            nodes_min: g.nodes_min,
            nodes_max: g.nodes_max,
            tau: g.tau,
            tau_final: g.tau_final,
            epochs: g.epochs,
            encoder_hidden: g.encoder_hidden,
            feature_lr: g.feature_lr,
            encoder_lr: g.encoder_lr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeSection {
    pub k: usize,
    /// `MaskCL` (classifier head) or `MaskNN` (encoder).
    pub placement: String,
    pub noisy: bool,
    pub lambda_gate: f64,
    pub lambda_mask: f64,
    pub gamma_p: f64,
    pub gamma_v: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for MergeSection {
    fn default() -> Self {
        let h = MergeHyper::default();
        let m = MergeConfig::default();
        Self {
            k: 2,
            placement: MaskPlacement::Classifier.label().to_string(),
            noisy: true,
            lambda_gate: h.lambda_gate,
            lambda_mask: h.lambda_mask,
            gamma_p: h.gamma_p,
            gamma_v: h.gamma_v,
            epochs: m.epochs,
            batch_size: m.batch_size,
            lr: m.optimizer.lr,
            weight_decay: m.optimizer.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Also run the feature-only inversion baseline (a second generation
    /// and merge pass).
    pub inverse_x: bool,
    /// Parameter soups over experts that share an architecture.
    pub soups: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            inverse_x: true,
            soups: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Domain tags in data order; the last is the target.
    pub fn domain_tags(&self) -> Vec<String> {
        let n = match self.data.tu_path {
            Some(_) => self.data.split.len(),
            None => self.data.edge_probs.len(),
        };
        crate::graph::domain_tags(n)
    }

    pub fn target_tag(&self) -> String {
        self.domain_tags().pop().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let tags = self.domain_tags();
        if tags.len() < 2 {
            return bad("need at least one source domain and a target".into());
        }
        if self.experts.is_empty() {
            return bad("expert roster is empty".into());
        }
        let mut ids = Vec::new();
        for e in &self.experts {
            e.backbone().map_err(|err| Error::Config(err.to_string()))?;
            if !tags[..tags.len() - 1].contains(&e.domain) {
                return bad(format!(
                    "expert {} trains on {:?}, which is not a source domain {:?}",
                    e.id(),
                    e.domain,
                    &tags[..tags.len() - 1]
                ));
            }
            let id = e.id();
            if ids.contains(&id) {
                return bad(format!("duplicate expert {id}"));
            }
            ids.push(id);
        }
        if self.merge.k == 0 || self.merge.k > self.experts.len() {
            return bad(format!(
                "top-k {} outside [1, {}]",
                self.merge.k,
                self.experts.len()
            ));
        }
        self.placement()?;
        self.merge_setup().hyper.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.pretrain.batch_size == 0 || self.merge.batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.data.tu_path.is_none() && self.data.graphs_per_domain == 0 {
            return bad("graphs_per_domain must be positive".into());
        }
        Ok(())
    }

    pub fn placement(&self) -> Result<MaskPlacement> {
        self.merge
            .placement
            .parse()
            .map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.pretrain.epochs,
            batch_size: self.pretrain.batch_size,
            optimizer: AdamWConfig {
                lr: self.pretrain.lr,
                weight_decay: self.pretrain.weight_decay,
                ..AdamWConfig::default()
            },
            seed,
        }
    }

    pub fn generator_config(&self, seed: u64) -> GeneratorConfig {
        let g = &self.generation;
        GeneratorConfig {
            count: g.count,
            nodes_min: g.nodes_min,
            nodes_max: g.nodes_max,
            tau: g.tau,
            tau_final: g.tau_final,
            epochs: g.epochs,
            encoder_hidden: g.encoder_hidden,
            feature_lr: g.feature_lr,
            encoder_lr: g.encoder_lr,
            edges: EdgeMode::Learned,
            seed,
        }
    }

    /// Falls back to classifier masks if the placement does not parse;
    /// [`Self::validate`] reports that case.
    pub fn merge_setup(&self) -> MergeSetup {
        let m = &self.merge;
        MergeSetup {
            placement: self.placement().unwrap_or(MaskPlacement::Classifier),
            k: m.k,
            noisy: m.noisy,
            hyper: MergeHyper {
                lambda_gate: m.lambda_gate,
                lambda_mask: m.lambda_mask,
                gamma_p: m.gamma_p,
                gamma_v: m.gamma_v,
            },
            train: MergeConfig {
                epochs: m.epochs,
                batch_size: m.batch_size,
                optimizer: AdamWConfig {
                    lr: m.lr,
                    weight_decay: m.weight_decay,
                    ..AdamWConfig::default()
                },
                seed: 0,
            },
        }
    }
}
