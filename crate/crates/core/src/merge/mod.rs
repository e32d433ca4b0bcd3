//! Masked experts under a sparse noisy top-k gate.
//!
//! Every expert stays frozen. A learnable mask multiplies one parameter
//! group (the classifier head by default), and a gate routes each graph to
//! at most `k` experts whose softmax outputs are mixed with the gate
//! weights.

mod store;
mod train;

pub use store::{load_merged, save_merged};
pub use train::{mask_loss_on_tape, merge_train, merged_loss_on_tape, MergeConfig, MergeEpoch};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::{GnnModel, GraphBatch, ParamGroup};
use crate::graph::{Graph, GraphDataset};

/// Structural statistics appended to the mean node features.
pub const STRUCTURAL_FEATURES: usize = 4;

/// Which parameter group a mask multiplies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskPlacement {
    /// The classifier head (MaskCL).
    Classifier,
    /// The message-passing encoder, including BN affine terms (MaskNN).
    Encoder,
}

impl MaskPlacement {
    pub fn group(self) -> ParamGroup {
        match self {
            MaskPlacement::Classifier => ParamGroup::Classifier,
            MaskPlacement::Encoder => ParamGroup::Encoder,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MaskPlacement::Classifier => "MaskCL",
            MaskPlacement::Encoder => "MaskNN",
        }
    }
}

impl fmt::Display for MaskPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MaskPlacement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classifier" | "maskcl" | "cl" => Ok(MaskPlacement::Classifier),
            "encoder" | "masknn" | "nn" => Ok(MaskPlacement::Encoder),
            other => Err(Error::invalid(format!("unknown mask placement {other:?}"))),
        }
    }
}

/// A frozen expert and the mask over one of its parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedExpert {
    pub expert: GnnModel,
    pub placement: MaskPlacement,
    /// Indices into `expert.params` that the masks cover.
    pub masked: Vec<usize>,
    /// One mask per masked tensor, same shape, initialized to ones.
    pub masks: Vec<Tensor>,
}

impl MaskedExpert {
    pub fn new(expert: GnnModel, placement: MaskPlacement) -> Self {
        let masked = expert.group_indices(placement.group());
        let masks = masked
            .iter()
            .map(|&i| {
                let (r, c) = expert.params[i].value.shape();
                Tensor::ones(r, c)
            })
            .collect();
        Self {
            expert,
            placement,
            masked,
            masks,
        }
    }

    pub fn mask_len(&self) -> usize {
        self.masks.iter().map(Tensor::len).sum()
    }

    /// Expert parameters on the tape with the masked ones multiplied by the
    /// given mask vars.
    pub fn params_on_tape(&self, tape: &mut Tape, masks: &[Var]) -> Result<Vec<Var>> {
        let mut params = self.expert.constants_on_tape(tape);
        for (&i, &m) in self.masked.iter().zip(masks) {
            params[i] = tape.mul(params[i], m)?;
        }
        Ok(params)
    }

    /// Eval-mode logits of the masked expert, one row per graph.
    pub fn logits(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let masks: Vec<Var> = self.masks.iter().map(|m| tape.constant(m.clone())).collect();
        let params = self.params_on_tape(&mut tape, &masks)?;
        let batch = GraphBatch::from_graphs(&mut tape, graphs)?;
        let out = self
            .expert
            .forward_on_tape(&mut tape, &params, &batch, crate::autodiff::Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }
}

/// Gate weights `W_g`, `W_n` (input_dim × M) and the top-k count.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    pub w_g: Tensor,
    pub w_n: Tensor,
    pub k: usize,
    /// Whether train-mode scores get the softplus-scaled Gaussian term.
    pub noisy: bool,
}

impl GateParams {
    pub fn zeros(input_dim: usize, experts: usize, k: usize) -> Result<Self> {
        if k == 0 || k > experts {
            return Err(Error::invalid(format!("top-k {k} outside [1, {experts}]")));
        }
        Ok(Self {
            w_g: Tensor::zeros(input_dim, experts),
            w_n: Tensor::zeros(input_dim, experts),
            k,
            noisy: true,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_g.rows()
    }

    pub fn experts(&self) -> usize {
        self.w_g.cols()
    }
}

/// Weights of the merging objective's regularizers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeHyper {
    pub lambda_gate: f64,
    pub lambda_mask: f64,
    pub gamma_p: f64,
    pub gamma_v: f64,
}

impl Default for MergeHyper {
    fn default() -> Self {
        Self {
            lambda_gate: 0.1,
            lambda_mask: 0.1,
            gamma_p: 0.9,
            gamma_v: 0.1,
        }
    }
}

impl MergeHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma_p", self.gamma_p), ("gamma_v", self.gamma_v)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name}={v} outside [0, 1]")));
            }
        }
        if self.gamma_v == 0.0 {
            return Err(Error::invalid("gamma_v must be positive"));
        }
        if !(self.lambda_gate >= 0.0 && self.lambda_mask >= 0.0) {
            return Err(Error::invalid("regularizer weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedModel {
    pub experts: Vec<MaskedExpert>,
    pub gate: GateParams,
    pub hyper: MergeHyper,
}

impl MergedModel {
    /// Wraps frozen experts with identity masks and a zero gate.
    pub fn new(
        experts: Vec<GnnModel>,
        placement: MaskPlacement,
        k: usize,
        hyper: MergeHyper,
    ) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::invalid("merging needs at least one expert"))?;
        let (d, c) = (first.descriptor.input_dim, first.descriptor.num_classes);
        for e in &experts {
            if e.descriptor.num_classes != c || e.descriptor.input_dim != d {
                return Err(Error::Incompatible(format!(
                    "expert {:?} differs from {:?} in classes or input dim",
                    e.descriptor, first.descriptor
                )));
            }
        }
        hyper.validate()?;
        let gate = GateParams::zeros(d + STRUCTURAL_FEATURES, experts.len(), k)?;
        Ok(Self {
            experts: experts
                .into_iter()
                .map(|e| MaskedExpert::new(e, placement))
                .collect(),
            gate,
            hyper,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.experts[0].expert.descriptor.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.experts[0].expert.descriptor.input_dim
    }

    fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.feature_dim() != self.input_dim() {
            return Err(Error::Shape {
                op: "merged forward",
                lhs: g.features().shape(),
                rhs: (0, self.input_dim()),
            });
        }
        Ok(())
    }

    /// Eval-mode gate weights (B × M) for a list of graphs.
    pub fn gate_weights(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let feats = gate_feature_matrix(graphs)?;
        let scores = gate_scores(&self.gate, &feats, None)?;
        Ok(sparse_gate(&scores, self.gate.k))
    }

    /// `Σ_j w_j · softmax(masked expert j)` with eval-mode gate weights.
    /// Experts with zero weight for a graph are not run on it.
    pub fn predict_probs(&self, graphs: &[&Graph]) -> Result<Tensor> {
        if graphs.is_empty() {
            return Err(Error::invalid("no graphs to predict"));
        }
        for g in graphs {
            self.check_graph(g)?;
        }
        let w = self.gate_weights(graphs)?;
        let c = self.num_classes();
        let mut out = Tensor::zeros(graphs.len(), c);
        for (j, expert) in self.experts.iter().enumerate() {
            let routed: Vec<usize> = (0..graphs.len()).filter(|&i| w[(i, j)] > 0.0).collect();
            if routed.is_empty() {
                continue;
            }
            let subset: Vec<&Graph> = routed.iter().map(|&i| graphs[i]).collect();
            let probs = expert.logits(&subset)?.softmax_rows();
            for (r, &i) in routed.iter().enumerate() {
                let wij = w[(i, j)];
                for (o, p) in out.row_mut(i).iter_mut().zip(probs.row(r)) {
                    *o += wij * p;
                }
            }
        }
        Ok(out)
    }

    /// Merged probability vector of one graph (1×c). Train mode draws gate
    /// noise from `rng`.
    pub fn merged_forward(&self, g: &Graph, noise_rng: Option<&mut dyn rand::RngCore>) -> Result<Tensor> {
        self.check_graph(g)?;
        let feats = gate_feature_matrix(&[g])?;
        let noise = match noise_rng {
            Some(rng) if self.gate.noisy => Some(gate_noise(rng, 1, self.gate.experts())),
            _ => None,
        };
        let scores = gate_scores(&self.gate, &feats, noise.as_ref())?;
        let w = sparse_gate(&scores, self.gate.k);
        let mut out = Tensor::zeros(1, self.num_classes());
        for (j, expert) in self.experts.iter().enumerate() {
            let wj = w[(0, j)];
            if wj == 0.0 {
                continue;
            }
            let probs = expert.logits(&[g])?.softmax_rows();
            for (o, p) in out.row_mut(0).iter_mut().zip(probs.row(0)) {
                *o += wj * p;
            }
        }
        Ok(out)
    }

    /// Class index (ties to the lower index) and probability vector.
    pub fn predict(&self, g: &Graph) -> Result<(usize, Vec<f64>)> {
        let p = self.predict_probs(&[g])?;
        Ok((p.argmax_row(0), p.row(0).to_vec()))
    }

    /// Parameters covered by masks and the total parameter count, summed
    /// over experts.
    pub fn masked_parameter_share(&self) -> (usize, usize) {
        self.experts.iter().fold((0, 0), |(m, t), e| {
            (m + e.mask_len(), t + e.expert.num_params())
        })
    }
}

/// Everything needed to build and train a merged model besides the experts.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeSetup {
    pub placement: MaskPlacement,
    pub k: usize,
    pub noisy: bool,
    pub hyper: MergeHyper,
    pub train: MergeConfig,
}

impl Default for MergeSetup {
    fn default() -> Self {
        Self {
            placement: MaskPlacement::Classifier,
            k: 2,
            noisy: true,
            hyper: MergeHyper::default(),
            train: MergeConfig::default(),
        }
    }
}

/// Second stage of the source-free pipeline: pool the synthetic sets and
/// train masks and gate on the pool.
pub fn merge_synthetic(
    experts: Vec<GnnModel>,
    sets: &[&GraphDataset],
    setup: &MergeSetup,
) -> Result<(MergedModel, Vec<MergeEpoch>)> {
    let k = setup.k.min(experts.len());
    let mut model = MergedModel::new(experts, setup.placement, k, setup.hyper)?;
    model.gate.noisy = setup.noisy;
    let pool = GraphDataset::concat("synthetic", sets)?;
    merge_train(&model, &pool, &setup.train)
}

/// Mean node features followed by mean degree, degree standard deviation,
/// edge density `2|E| / (n(n-1))`, and `ln n`.
pub fn gate_features(g: &Graph) -> Vec<f64> {
    let n = g.num_nodes();
    let mut out = g.features().col_mean().into_data();
    let deg: Vec<f64> = g.degrees().into_iter().map(|d| d as f64).collect();
    let mean = deg.iter().sum::<f64>() / n as f64;
    let var = deg.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let density = if n > 1 {
        2.0 * g.num_edges() as f64 / (n * (n - 1)) as f64
    } else {
        0.0
    };
    out.extend([mean, var.sqrt(), density, (n as f64).ln()]);
    out
}

pub fn gate_feature_matrix(graphs: &[&Graph]) -> Result<Tensor> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::invalid("gate features of no graphs"))?;
    let cols = first.feature_dim() + STRUCTURAL_FEATURES;
    let mut data = Vec::with_capacity(graphs.len() * cols);
    for g in graphs {
        let f = gate_features(g);
        if f.len() != cols {
            return Err(Error::Shape {
                op: "gate features",
                lhs: (1, f.len()),
                rhs: (1, cols),
            });
        }
        data.extend(f);
    }
    Tensor::from_vec(graphs.len(), cols, data)
}

/// Standard normal `ε`, one per graph and expert.
pub fn gate_noise(rng: &mut (impl Rng + ?Sized), rows: usize, experts: usize) -> Tensor {
    Tensor::from_fn(rows, experts, |_, _| rng.sample(StandardNormal))
}

/// `Q = x W_g + ε ⊙ softplus(x W_n)`; without `noise`, `Q = x W_g`.
pub fn gate_scores(gate: &GateParams, features: &Tensor, noise: Option<&Tensor>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let wg = tape.constant(gate.w_g.clone());
    let wn = tape.constant(gate.w_n.clone());
    let eps = noise.map(|e| tape.constant(e.clone()));
    let q = gate_scores_on_tape(&mut tape, x, wg, wn, eps)?;
    Ok(tape.value(q).clone())
}

pub fn gate_scores_on_tape(
    tape: &mut Tape,
    features: Var,
    w_g: Var,
    w_n: Var,
    noise: Option<Var>,
) -> Result<Var> {
    let clean = tape.matmul(features, w_g)?;
    match noise {
        None => Ok(clean),
        Some(eps) => {
            let raw = tape.matmul(features, w_n)?;
            let scale = tape.softplus(raw);
            let jitter = tape.mul(eps, scale)?;
            tape.add(clean, jitter)
        }
    }
}

/// 0/1 mask of the `k` largest scores per row; ties go to the lower index.
pub fn top_k_mask(scores: &Tensor, k: usize) -> Tensor {
    let (r, c) = scores.shape();
    let mut mask = Tensor::zeros(r, c);
    for i in 0..r {
        let row = scores.row(i);
        let mut order: Vec<usize> = (0..c).collect();
        // stable sort keeps lower indices first among equal scores
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &j in order.iter().take(k.min(c)) {
            mask[(i, j)] = 1.0;
        }
    }
    mask
}

/// Softmax over the top-k scores of each row; every other weight is 0.
pub fn sparse_gate(scores: &Tensor, k: usize) -> Tensor {
    let mask = top_k_mask(scores, k);
    let mut out = Tensor::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        let max = (0..scores.cols())
            .filter(|&j| mask[(i, j)] > 0.0)
            .map(|j| scores[(i, j)])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..scores.cols() {
            if mask[(i, j)] > 0.0 {
                let e = (scores[(i, j)] - max).exp();
                out[(i, j)] = e;
                z += e;
            }
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Differentiable sparse gate: the top-k selection is fixed from the
/// current scores, gradients flow through the selected entries.
pub fn sparse_gate_on_tape(tape: &mut Tape, scores: Var, k: usize) -> Result<Var> {
    let mask = top_k_mask(tape.value(scores), k);
    let m = tape.constant(mask);
    tape.masked_softmax(scores, m)
}

/// `CV(s)²` of the per-expert total weights `s = Σ_batch w`, with the
/// population standard deviation. Zero when all totals are zero.
pub fn importance_loss_on_tape(tape: &mut Tape, weights: Var) -> Result<Var> {
    let totals = tape.sum_rows(weights);
    let m = tape.shape(totals).1;
    let mean_value = tape.value(totals).sum() / m as f64;
    if mean_value == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let sum = tape.sum(totals);
    let mean = tape.scale(sum, 1.0 / m as f64);
    let ones = tape.constant(Tensor::ones(1, m));
    let mean_row = tape.scale_by(ones, mean)?;
    let diff = tape.sub(totals, mean_row)?;
    let sq = tape.mul(diff, diff)?;
    let var = tape.mean(sq);
    let inv_mean_sq = tape.powf(mean, -2.0)?;
    tape.mul(var, inv_mean_sq)
}

/// Plain-value version of [`importance_loss_on_tape`] over totals.
pub fn importance_loss(totals: &[f64]) -> f64 {
    let m = totals.len() as f64;
    let mean = totals.iter().sum::<f64>() / m;
    if mean == 0.0 {
        return 0.0;
    }
    let var = totals.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / m;
    var / (mean * mean)
}
