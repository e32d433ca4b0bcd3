//! Reference merging baselines and domain-shift diagnostics.
//!
//! Output-space ensembles work for any mix of backbones; parameter soups
//! only for experts that share a descriptor. The diagnostics measure how far
//! apart two experts' predictions drift across domains and how each expert
//! fares on every domain, which needs labelled source data and so sits
//! outside the source-free pipeline.

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::gnn::{evaluate, predict_probs, GnnModel};
use crate::graph::{Graph, GraphDataset};
use crate::inversion::{generate_for_experts, EdgeMode, GeneratorConfig, SyntheticSet};
use crate::merge::{merge_synthetic, MergeEpoch, MergeSetup, MergedModel};

/// Edge probability of the fixed random structures in the feature-only
/// inversion baseline.
pub const INVERSE_X_EDGE_PROB: f64 = 0.2;

fn require_experts(experts: &[GnnModel]) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::invalid("baseline needs at least one expert"));
    }
    let c = experts[0].descriptor.num_classes;
    if experts.iter().any(|e| e.descriptor.num_classes != c) {
        return Err(Error::Incompatible("experts disagree on the number of classes".into()));
    }
    Ok(())
}

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Mean of the experts' softmax outputs, one row per graph.
pub fn ens_prob(experts: &[GnnModel], graphs: &[&Graph]) -> Result<Tensor> {
    require_experts(experts)?;
    let mut acc: Option<Tensor> = None;
    for e in experts {
        let p = predict_probs(e, graphs)?;
        match acc.as_mut() {
            Some(a) => a.add_assign(&p),
            None => acc = Some(p),
        }
    }
    Ok(acc.expect("nonempty").scale(1.0 / experts.len() as f64))
}

/// Per graph, the output of the expert with the lowest-entropy prediction;
/// ties go to the lower expert index.
pub fn ens_highconf(experts: &[GnnModel], graphs: &[&Graph]) -> Result<Tensor> {
    require_experts(experts)?;
    let probs: Vec<Tensor> = experts
        .iter()
        .map(|e| predict_probs(e, graphs))
        .collect::<Result<_>>()?;
    let c = probs[0].cols();
    let mut out = Tensor::zeros(graphs.len(), c);
    for i in 0..graphs.len() {
        let mut best = 0;
        let mut best_h = entropy(probs[0].row(i));
        for (j, p) in probs.iter().enumerate().skip(1) {
            let h = entropy(p.row(i));
            if h < best_h {
                best = j;
                best_h = h;
            }
        }
        out.row_mut(i).copy_from_slice(probs[best].row(i));
    }
    Ok(out)
}

fn require_homogeneous(models: &[&GnnModel]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("soup of no checkpoints"))?;
    for m in models {
        if m.descriptor != first.descriptor {
            return Err(Error::Incompatible(format!(
                "parameter soup needs identical architectures, got {:?} and {:?}",
                first.descriptor, m.descriptor
            )));
        }
    }
    Ok(())
}

/// Elementwise mean of same-shaped tensors. Values are summed in sorted
/// order so the result does not depend on the order of `parts`.
fn mean_tensor(parts: &[&Tensor]) -> Tensor {
    let n = parts.len() as f64;
    let mut buf = vec![0.0; parts.len()];
    let (r, c) = parts[0].shape();
    let mut out = Tensor::zeros(r, c);
    for (k, slot) in out.data_mut().iter_mut().enumerate() {
        for (b, t) in buf.iter_mut().zip(parts) {
            *b = t.data()[k];
        }
        buf.sort_by(f64::total_cmp);
        *slot = buf.iter().sum::<f64>() / n;
    }
    out
}

fn soup_of(models: &[&GnnModel]) -> GnnModel {
    let mut out = models[0].clone();
    for (i, p) in out.params.iter_mut().enumerate() {
        let parts: Vec<&Tensor> = models.iter().map(|m| &m.params[i].value).collect();
        p.value = mean_tensor(&parts);
    }
    for (l, bn) in out.bn.iter_mut().enumerate() {
        let means: Vec<&Tensor> = models.iter().map(|m| &m.bn[l].mean).collect();
        let vars: Vec<&Tensor> = models.iter().map(|m| &m.bn[l].var).collect();
        bn.mean = mean_tensor(&means);
        bn.var = mean_tensor(&vars);
    }
    out
}

/// Parameter-wise and BN-moment-wise mean of checkpoints that share one
/// descriptor.
pub fn uniform_soup(models: &[GnnModel]) -> Result<GnnModel> {
    let refs: Vec<&GnnModel> = models.iter().collect();
    require_homogeneous(&refs)?;
    Ok(soup_of(&refs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedySoup {
    pub model: GnnModel,
    /// Indices into the input checkpoints that ended up in the average.
    pub ingredients: Vec<usize>,
    pub validation_accuracy: f64,
}

/// Visits checkpoints by descending validation accuracy (ties keep input
/// order) and keeps each one whose addition to the running average does not
/// lower validation accuracy.
pub fn greedy_soup(models: &[GnnModel], validation: &GraphDataset) -> Result<GreedySoup> {
    let refs: Vec<&GnnModel> = models.iter().collect();
    require_homogeneous(&refs)?;
    if validation.is_empty() {
        return Err(Error::invalid("greedy soup needs a nonempty validation set"));
    }
    let scores: Vec<f64> = models
        .iter()
        .map(|m| evaluate(m, validation).map(|r| r.accuracy))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ingredients = vec![order[0]];
    let mut best = scores[order[0]];
    let mut model = models[order[0]].clone();
    for &i in &order[1..] {
        let mut trial = ingredients.clone();
        trial.push(i);
        let parts: Vec<&GnnModel> = trial.iter().map(|&j| &models[j]).collect();
        let candidate = soup_of(&parts);
        let acc = evaluate(&candidate, validation)?.accuracy;
        if acc >= best {
            ingredients = trial;
            best = acc;
            model = candidate;
        }
    }
    Ok(GreedySoup {
        model,
        ingredients,
        validation_accuracy: best,
    })
}

/// Mean over `ds` of the per-graph mean absolute difference between the two
/// experts' class probabilities.
fn mean_disagreement(f_i: &GnnModel, f_j: &GnnModel, ds: &GraphDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::invalid(format!("divergence on empty dataset {}", ds.name)));
    }
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let p = predict_probs(f_i, &graphs)?;
    let q = predict_probs(f_j, &graphs)?;
    if p.cols() != q.cols() {
        return Err(Error::Incompatible(format!(
            "experts emit {} and {} classes",
            p.cols(),
            q.cols()
        )));
    }
    let c = p.cols() as f64;
    let total: f64 = (0..p.rows())
        .map(|r| {
            p.row(r)
                .iter()
                .zip(q.row(r))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / c
        })
        .sum();
    Ok(total / p.rows() as f64)
}

/// Plug-in estimate `2 |E_{ds_i} δ − E_{ds_j} δ|` of the disagreement-based
/// divergence between two domains, where `δ(G)` is the mean absolute gap
/// between the two experts' probabilities on `G`. The true divergence takes
/// a supremum over all hypothesis pairs, so this is a lower bound.
pub fn hdh_divergence(
    f_i: &GnnModel,
    f_j: &GnnModel,
    ds_i: &GraphDataset,
    ds_j: &GraphDataset,
) -> Result<f64> {
    let a = mean_disagreement(f_i, f_j, ds_i)?;
    let b = mean_disagreement(f_i, f_j, ds_j)?;
    Ok(2.0 * (a - b).abs())
}

/// Largest [`hdh_divergence`] over all unordered pairs in a pool; a tighter
/// lower bound than any single pair. Zero for a pool of one.
pub fn pooled_hdh_divergence(pool: &[GnnModel], ds_i: &GraphDataset, ds_j: &GraphDataset) -> Result<f64> {
    let pairs: Vec<(usize, usize)> = (0..pool.len())
        .flat_map(|a| (a + 1..pool.len()).map(move |b| (a, b)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| hdh_divergence(&pool[a], &pool[b], ds_i, ds_j))
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(0.0, f64::max))
}

/// Error of every expert on every labelled domain.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossErrorMatrix {
    /// `errors[(i, j)]` is `1 − accuracy` of expert `i` on domain `j`.
    pub errors: Tensor,
    pub experts: Vec<String>,
    pub domains: Vec<String>,
}

impl CrossErrorMatrix {
    /// Error of expert `i` on the domain it was trained on, if that domain is
    /// among the columns.
    pub fn in_domain(&self, i: usize, domain: &str) -> Option<f64> {
        let j = self.domains.iter().position(|d| d == domain)?;
        Some(self.errors[(i, j)])
    }
}

pub fn cross_error_matrix(
    experts: &[(String, GnnModel)],
    domains: &[(String, &GraphDataset)],
) -> Result<CrossErrorMatrix> {
    if let Some((tag, _)) = domains.iter().find(|(_, d)| d.is_empty()) {
        return Err(Error::invalid(format!("domain {tag} is empty")));
    }
    let cells: Vec<(usize, usize)> = (0..experts.len())
        .flat_map(|i| (0..domains.len()).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| evaluate(&experts[i].1, domains[j].1).map(|m| 1.0 - m.accuracy))
        .collect::<Result<_>>()?;
    Ok(CrossErrorMatrix {
        errors: Tensor::from_vec(experts.len(), domains.len(), values)?,
        experts: experts.iter().map(|(n, _)| n.clone()).collect(),
        domains: domains.iter().map(|(t, _)| t.clone()).collect(),
    })
}

/// Outcome of the feature-only inversion baseline.
#[derive(Clone, Debug)]
pub struct InverseX {
    pub model: MergedModel,
    pub synthetic: Vec<SyntheticSet>,
    pub history: Vec<MergeEpoch>,
}

/// The source-free pipeline with structure frozen: each synthetic graph gets
/// a fixed Erdős–Rényi adjacency and only its node features are optimized.
/// Merging then runs unchanged on the result.
pub fn inverse_x_baseline(
    experts: &[GnnModel],
    ids: &[String],
    generator: &GeneratorConfig,
    setup: &MergeSetup,
) -> Result<InverseX> {
    let cfg = GeneratorConfig {
        edges: EdgeMode::FixedRandom(INVERSE_X_EDGE_PROB),
        ..generator.clone()
    };
    let synthetic = generate_for_experts(experts, ids, &cfg)?;
    let sets: Vec<&GraphDataset> = synthetic.iter().map(|s| &s.dataset).collect();
    let (model, history) = merge_synthetic(experts.to_vec(), &sets, setup)?;
    Ok(InverseX {
        model,
        synthetic,
        history,
    })
}
