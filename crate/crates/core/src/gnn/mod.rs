//! Two-layer GNN graph classifiers (GCN, GIN, GAT) with a linear head.
//!
//! Parameters are split into an encoder group (message passing and
//! batch-norm affine terms) and a classifier group (the head), so that
//! masks can target either group independently.

mod checkpoint;
mod forward;
mod train;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, Checkpoint, TrainingMeta};
pub use forward::{ForwardOutput, GraphBatch};
pub use train::{
    classification_metrics, evaluate, predict_probs, pretrain, EpochStats, Metrics, TrainConfig,
};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{BnStats, Tensor};
use crate::error::{Error, Result};
use crate::rng::xavier_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Backbone {
    Gcn,
    Gin,
    Gat,
}

impl Backbone {
    pub fn name(self) -> &'static str {
        match self {
            Backbone::Gcn => "GCN",
            Backbone::Gin => "GIN",
            Backbone::Gat => "GAT",
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GCN" => Ok(Backbone::Gcn),
            "GIN" => Ok(Backbone::Gin),
            "GAT" => Ok(Backbone::Gat),
            other => Err(Error::invalid(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchitectureDescriptor {
    pub kind: Backbone,
    pub layers: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub input_dim: usize,
}

impl ArchitectureDescriptor {
    pub const LAYERS: usize = 2;
    pub const DEFAULT_HIDDEN: usize = 32;

    pub fn new(kind: Backbone, input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind,
            layers: Self::LAYERS,
            hidden_dim: Self::DEFAULT_HIDDEN,
            num_classes,
            input_dim,
        }
    }

    pub fn with_hidden(self, hidden_dim: usize) -> Self {
        Self { hidden_dim, ..self }
    }

    /// GIN carries one batch norm inside each layer's MLP; GCN and GAT
    /// normalize once after the first layer.
    pub fn bn_layer_count(&self) -> usize {
        match self.kind {
            Backbone::Gin => 2,
            Backbone::Gcn | Backbone::Gat => 1,
        }
    }

    /// `(name, group, rows, cols)` of every learnable tensor, in storage order.
    pub fn param_specs(&self) -> Vec<(String, ParamGroup, usize, usize)> {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        let enc = ParamGroup::Encoder;
        let mut specs: Vec<(String, ParamGroup, usize, usize)> = Vec::new();
        let mut push = |name: &str, rows, cols| specs.push((name.to_string(), enc, rows, cols));
        match self.kind {
            Backbone::Gcn => {
                push("conv1.weight", d, h);
                push("conv1.bias", 1, h);
                push("bn1.gamma", 1, h);
                push("bn1.beta", 1, h);
                push("conv2.weight", h, h);
                push("conv2.bias", 1, h);
            }
            Backbone::Gin => {
                for (layer, fan_in) in [(1, d), (2, h)] {
                    push(&format!("gin{layer}.eps"), 1, 1);
                    push(&format!("gin{layer}.lin1.weight"), fan_in, h);
                    push(&format!("gin{layer}.lin1.bias"), 1, h);
                    push(&format!("gin{layer}.bn.gamma"), 1, h);
                    push(&format!("gin{layer}.bn.beta"), 1, h);
                    push(&format!("gin{layer}.lin2.weight"), h, h);
                    push(&format!("gin{layer}.lin2.bias"), 1, h);
                }
            }
            Backbone::Gat => {
                push("gat1.weight", d, h);
                push("gat1.att_src", h, 1);
                push("gat1.att_dst", h, 1);
                push("gat1.bias", 1, h);
                push("bn1.gamma", 1, h);
                push("bn1.beta", 1, h);
                push("gat2.weight", h, h);
                push("gat2.att_src", h, 1);
                push("gat2.att_dst", h, 1);
                push("gat2.bias", 1, h);
            }
        }
        specs.push(("classifier.weight".into(), ParamGroup::Classifier, h, c));
        specs.push(("classifier.bias".into(), ParamGroup::Classifier, 1, c));
        specs
    }

    /// Learnable scalar count per group: `(encoder, classifier)`.
    pub fn group_sizes(&self) -> (usize, usize) {
        self.param_specs()
            .iter()
            .fold((0, 0), |(e, c), (_, g, r, k)| match g {
                ParamGroup::Encoder => (e + r * k, c),
                ParamGroup::Classifier => (e, c + r * k),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Message passing and normalization: the graph encoder.
    Encoder,
    /// The linear classification head.
    Classifier,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// A GNN classifier: descriptor, parameters, and batch-norm running moments.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub descriptor: ArchitectureDescriptor,
    pub params: Vec<Param>,
    pub bn: Vec<BnStats>,
}

impl GnnModel {
    /// Xavier-uniform weights, zero biases, unit BN scale, zero GIN epsilon.
    pub fn init(descriptor: ArchitectureDescriptor, rng: &mut impl Rng) -> Self {
        let params = descriptor
            .param_specs()
            .into_iter()
            .map(|(name, group, rows, cols)| {
                let value = if name.ends_with("gamma") {
                    Tensor::ones(rows, cols)
                } else if name.ends_with("bias") || name.ends_with("beta") || name.ends_with("eps") {
                    Tensor::zeros(rows, cols)
                } else {
                    xavier_uniform(rng, rows, cols)
                };
                Param { name, group, value }
            })
            .collect();
        let bn = (0..descriptor.bn_layer_count())
            .map(|_| BnStats::new(descriptor.hidden_dim))
            .collect();
        Self {
            descriptor,
            params,
            bn,
        }
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.param_index(name).map(|i| &self.params[i].value)
    }

    pub fn group_indices(&self, group: ParamGroup) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn check_input_dim(&self, dim: usize) -> Result<()> {
        if dim != self.descriptor.input_dim {
            return Err(Error::Shape {
                op: "gnn input",
                lhs: (0, dim),
                rhs: (0, self.descriptor.input_dim),
            });
        }
        Ok(())
    }
}
