use rand::seq::SliceRandom;

use super::{
    gate_feature_matrix, gate_noise, gate_scores_on_tape, importance_loss_on_tape,
    sparse_gate_on_tape, MergedModel,
};
use crate::autodiff::{AdamW, AdamWConfig, Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::GraphBatch;
use crate::graph::{Graph, GraphDataset};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MergeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Epoch means of the merging loss and its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub gate: f64,
    pub mask: f64,
}

/// Tape handles for the trainable merge state.
pub(crate) struct MergeVars {
    pub masks: Vec<Vec<Var>>,
    pub w_g: Var,
    pub w_n: Var,
}

impl MergedModel {
    /// Masks of every expert in order, then `W_g`, then `W_n`.
    pub fn trainable_tensors(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self
            .experts
            .iter()
            .flat_map(|e| e.masks.iter().cloned())
            .collect();
        out.push(self.gate.w_g.clone());
        out.push(self.gate.w_n.clone());
        out
    }

    fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for e in &mut self.experts {
            out.extend(e.masks.iter_mut());
        }
        out.push(&mut self.gate.w_g);
        out.push(&mut self.gate.w_n);
        out
    }

    /// Splits a flat var list laid out like [`Self::trainable_tensors`].
    pub(crate) fn vars_from_flat(&self, flat: &[Var]) -> Result<MergeVars> {
        let need: usize = self.experts.iter().map(|e| e.masks.len()).sum::<usize>() + 2;
        if flat.len() != need {
            return Err(Error::invalid(format!(
                "{} trainable vars, expected {need}",
                flat.len()
            )));
        }
        let mut masks = Vec::with_capacity(self.experts.len());
        let mut at = 0;
        for e in &self.experts {
            masks.push(flat[at..at + e.masks.len()].to_vec());
            at += e.masks.len();
        }
        Ok(MergeVars {
            masks,
            w_g: flat[at],
            w_n: flat[at + 1],
        })
    }
}

/// `R_mask`: summed mean cross-entropy of every masked expert on the batch,
/// plus for each expert `|mean(ω) − γ_p| + |mean(exp(−(ω−1)²/(2γ_v²))) − γ_p|`.
pub fn mask_loss_on_tape(
    tape: &mut Tape,
    model: &MergedModel,
    expert_logits: &[Var],
    masks: &[Vec<Var>],
    labels: &[usize],
) -> Result<Var> {
    let h = model.hyper;
    let mut terms = Vec::new();
    for (logits, (expert, mask_vars)) in expert_logits.iter().zip(model.experts.iter().zip(masks)) {
        terms.push(tape.cross_entropy(*logits, labels)?);
        let count = expert.mask_len();
        if count == 0 {
            continue;
        }
        let mut sums = Vec::new();
        let mut bumps = Vec::new();
        for &w in mask_vars {
            sums.push(tape.sum(w));
            let centered = tape.add_scalar(w, -1.0);
            let sq = tape.mul(centered, centered)?;
            let scaled = tape.scale(sq, -1.0 / (2.0 * h.gamma_v * h.gamma_v));
            let bump = tape.exp(scaled);
            bumps.push(tape.sum(bump));
        }
        for parts in [sums, bumps] {
            let stacked = tape.concat_rows(&parts)?;
            let total = tape.sum(stacked);
            let mean = tape.scale(total, 1.0 / count as f64);
            let off = tape.add_scalar(mean, -h.gamma_p);
            terms.push(tape.abs(off));
        }
    }
    let stacked = tape.concat_rows(&terms)?;
    Ok(tape.sum(stacked))
}

/// Parts of the merging loss on one batch.
pub(crate) struct LossParts {
    pub total: Var,
    pub nll: Var,
    pub gate: Var,
    pub mask: Var,
}

/// Full merging loss `NLL(Γ) + λ_gate R_gate + λ_mask R_mask` for a batch,
/// with the trainable state given as a flat var list (see
/// [`MergedModel::trainable_tensors`]). Returns the total.
pub fn merged_loss_on_tape(
    tape: &mut Tape,
    model: &MergedModel,
    flat: &[Var],
    graphs: &[&Graph],
    labels: &[usize],
    noise: Option<&Tensor>,
) -> Result<Var> {
    let vars = model.vars_from_flat(flat)?;
    Ok(loss_parts(tape, model, &vars, graphs, labels, noise)?.total)
}

pub(crate) fn loss_parts(
    tape: &mut Tape,
    model: &MergedModel,
    vars: &MergeVars,
    graphs: &[&Graph],
    labels: &[usize],
    noise: Option<&Tensor>,
) -> Result<LossParts> {
    let feats = tape.constant(gate_feature_matrix(graphs)?);
    let eps = noise.map(|e| tape.constant(e.clone()));
    let scores = gate_scores_on_tape(tape, feats, vars.w_g, vars.w_n, eps)?;
    let weights = sparse_gate_on_tape(tape, scores, model.gate.k)?;

    let batch = GraphBatch::from_graphs(tape, graphs)?;
    let mut logits = Vec::with_capacity(model.experts.len());
    let mut label_logp = Vec::with_capacity(model.experts.len());
    for (expert, masks) in model.experts.iter().zip(&vars.masks) {
        let params = expert.params_on_tape(tape, masks)?;
        let out = expert
            .expert
            .forward_on_tape(tape, &params, &batch, Mode::Eval)?;
        logits.push(out.logits);
        let lp = tape.log_softmax(out.logits)?;
        label_logp.push(tape.pick(lp, labels)?);
    }
    if logits.is_empty() {
        return Err(Error::invalid("no experts"));
    }
    // log Σ_j w_j p_j(y) as a shifted log-sum-exp. The shift is each row's
    // largest log-probability among experts with nonzero weight; it is a
    // constant, so value and gradient are unchanged while confidently wrong
    // experts no longer underflow the mixture to zero.
    let w = tape.value(weights).clone();
    let shift = Tensor::from_fn(graphs.len(), 1, |i, _| {
        label_logp
            .iter()
            .enumerate()
            .filter(|&(j, _)| w[(i, j)] > 0.0)
            .map(|(_, &v)| tape.value(v)[(i, 0)])
            .fold(f64::NEG_INFINITY, f64::max)
    });
    let neg_shift = tape.constant(shift.scale(-1.0));
    let mut mixture: Option<Var> = None;
    for (j, &lp) in label_logp.iter().enumerate() {
        let mut centered = tape.add(lp, neg_shift)?;
        // an unrouted expert can sit far above the shift and overflow exp;
        // its weight is exactly zero, so pin its exponent at 0 instead
        let c = tape.value(centered);
        if (0..graphs.len()).any(|i| w[(i, j)] == 0.0 && c[(i, 0)] != 0.0) {
            let pin = Tensor::from_fn(graphs.len(), 1, |i, _| {
                if w[(i, j)] == 0.0 {
                    -c[(i, 0)]
                } else {
                    0.0
                }
            });
            let pin = tape.constant(pin);
            centered = tape.add(centered, pin)?;
        }
        let p = tape.exp(centered);
        let wj = tape.slice_cols(weights, j, j + 1)?;
        let part = tape.mul(p, wj)?;
        mixture = Some(match mixture {
            Some(m) => tape.add(m, part)?,
            None => part,
        });
    }
    let mixture = mixture.expect("nonempty");
    let log_mix = tape.log(mixture)?;
    let shifted = tape.sub(log_mix, neg_shift)?;
    let mean_log = tape.mean(shifted);
    let nll = tape.scale(mean_log, -1.0);

    let gate = importance_loss_on_tape(tape, weights)?;
    let mask = mask_loss_on_tape(tape, model, &logits, &vars.masks, labels)?;
    let h = model.hyper;
    let g = tape.scale(gate, h.lambda_gate);
    let m = tape.scale(mask, h.lambda_mask);
    let ng = tape.add(nll, g)?;
    let total = tape.add(ng, m)?;
    Ok(LossParts {
        total,
        nll,
        gate,
        mask,
    })
}

/// AdamW on masks and gate weights over the synthetic mixture. Experts stay
/// frozen and run in eval mode.
pub fn merge_train(
    model: &MergedModel,
    synthetic: &GraphDataset,
    config: &MergeConfig,
) -> Result<(MergedModel, Vec<MergeEpoch>)> {
    if synthetic.is_empty() {
        return Err(Error::invalid("merging needs a nonempty synthetic set"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if synthetic.feature_dim() != model.input_dim() {
        return Err(Error::Shape {
            op: "merge_train",
            lhs: (0, synthetic.feature_dim()),
            rhs: (0, model.input_dim()),
        });
    }
    let labels = synthetic.labels()?;
    if let Some(&label) = labels.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::Label {
            label,
            classes: model.num_classes(),
        });
    }

    let mut model = model.clone();
    let mut opt = AdamW::new(config.optimizer, model.trainable_tensors().iter());
    let mut order_rng = rng::stream(config.seed, 0);
    let mut noise_rng = rng::stream(config.seed, 1);
    let mut order: Vec<usize> = (0..synthetic.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut checked = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut sums = [0.0; 4];
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &synthetic.graphs()[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let noise = model
                .gate
                .noisy
                .then(|| gate_noise(&mut noise_rng, graphs.len(), model.gate.experts()));

            let mut tape = Tape::new();
            let flat: Vec<Var> = model
                .trainable_tensors()
                .into_iter()
                .map(|t| tape.param(t))
                .collect();
            let vars = model.vars_from_flat(&flat)?;
            let parts = loss_parts(&mut tape, &model, &vars, &graphs, &y, noise.as_ref())?;
            if !checked {
                if tape.trainable_leaves() != flat {
                    return Err(Error::invalid(
                        "only masks and gate weights may require gradients while merging",
                    ));
                }
                checked = true;
            }
            let total = tape.value(parts.total).item();
            if !total.is_finite() {
                return Err(Error::NonFinite("merge loss"));
            }
            tape.backward(parts.total)?;
            let grads: Vec<Tensor> = flat.iter().map(|&v| tape.grad(v)).collect();
            let mut values = model.trainable_mut();
            opt.step(&mut values, &grads)?;

            let n = y.len() as f64;
            for (s, v) in sums.iter_mut().zip([
                total,
                tape.value(parts.nll).item(),
                tape.value(parts.gate).item(),
                tape.value(parts.mask).item(),
            ]) {
                *s += v * n;
            }
        }
        let n = synthetic.len() as f64;
        history.push(MergeEpoch {
            epoch,
            loss: sums[0] / n,
            nll: sums[1] / n,
            gate: sums[2] / n,
            mask: sums[3] / n,
        });
    }
    Ok((model, history))
}
