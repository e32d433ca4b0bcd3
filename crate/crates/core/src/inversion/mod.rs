//! Model inversion: turn a frozen classifier into label-conditional
//! synthetic graphs.
//!
//! Each synthetic graph has learnable node features `X` (standard normal at
//! start). A shared edge encoder scores every unordered node pair from the
//! two feature rows, a binary-concrete relaxation turns the scores into a
//! soft adjacency, and the frozen expert is fit to the sampled labels while
//! its batch-norm statistics and prediction entropy act as regularizers.

mod synthetic;

pub use synthetic::{read_synthetic, write_synthetic, Provenance, SyntheticSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::autodiff::{AdamW, AdamWConfig, Axis, Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::{ForwardOutput, GnnModel, GraphBatch};
use crate::graph::{Graph, GraphDataset};
use crate::rng::{self, StreamRng};

/// How synthetic adjacencies are produced.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EdgeMode {
    /// Edge encoder plus Gumbel relaxation, trained jointly with `X`.
    Learned,
    /// Fixed Erdős–Rényi adjacencies with this edge probability; only `X` is
    /// learned.
    FixedRandom(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Graphs generated per expert.
    pub count: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    /// Relaxation temperature during training.
    pub tau: f64,
    /// If set, temperature decays geometrically from `tau` to this value.
    pub tau_final: Option<f64>,
    pub epochs: usize,
    pub encoder_hidden: usize,
    pub feature_lr: f64,
    pub encoder_lr: f64,
    pub edges: EdgeMode,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            count: 64,
            nodes_min: 10,
            nodes_max: 20,
            tau: 1.0,
            tau_final: None,
            epochs: 200,
            encoder_hidden: 64,
            feature_lr: 0.1,
            encoder_lr: 1e-2,
            edges: EdgeMode::Learned,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("synthetic count must be positive"));
        }
        if self.nodes_min < 2 || self.nodes_min > self.nodes_max {
            return Err(Error::invalid(format!(
                "bad node range [{}, {}]",
                self.nodes_min, self.nodes_max
            )));
        }
        check_tau(self.tau)?;
        if let Some(t) = self.tau_final {
            check_tau(t)?;
        }
        if let EdgeMode::FixedRandom(p) = self.edges {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("edge probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Temperature used in `epoch`.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        match self.tau_final {
            Some(end) if self.epochs > 1 => {
                let frac = epoch as f64 / (self.epochs - 1) as f64;
                self.tau * (end / self.tau).powf(frac)
            }
            _ => self.tau,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain {
            op: "gumbel relaxation",
            detail: format!("temperature {tau} must be positive"),
        });
    }
    Ok(())
}

/// Pair-scoring MLP `2d -> h -> h -> 1` with ReLU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEncoder {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl EdgeEncoder {
    pub fn init(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: rng::xavier_uniform(rng, 2 * dim, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: rng::xavier_uniform(rng, hidden, hidden),
            b2: Tensor::zeros(1, hidden),
            w3: rng::xavier_uniform(rng, hidden, 1),
            b3: Tensor::zeros(1, 1),
        }
    }

    /// `w1, b1, w2, b2, w3, b3` in order.
    pub fn tensors(&self) -> [&Tensor; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Upper-triangle pairs `(j, k)`, `j < k`, in row-major order.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|j| (j + 1..n).map(move |k| (j, k))).collect()
}

/// Symmetrized pair scores on the tape.
///
/// `x` stacks the node features of several graphs (`sizes` rows each).
/// Returns one `m×1` score column per graph, where row `r` is the
/// pre-sigmoid score of the `r`-th upper-triangle pair:
/// `½ (MLP([x_j; x_k]) + MLP([x_k; x_j]))`.
pub fn pair_scores_on_tape(
    tape: &mut Tape,
    encoder: &[Var; 6],
    x: Var,
    sizes: &[usize],
) -> Result<Vec<Var>> {
    let dim = tape.shape(x).1;
    let [w1, b1, w2, b2, w3, b3] = *encoder;
    if tape.shape(w1).0 != 2 * dim {
        return Err(Error::Shape {
            op: "edge encoder",
            lhs: tape.shape(x),
            rhs: tape.shape(w1),
        });
    }
    // [x_j; x_k] W1 = x_j W1_top + x_k W1_bottom, so project once per node.
    let top = tape.slice_rows(w1, 0, dim)?;
    let bottom = tape.slice_rows(w1, dim, 2 * dim)?;
    let p = tape.matmul(x, top)?;
    let q = tape.matmul(x, bottom)?;

    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut counts = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &n in sizes {
        let pairs = upper_pairs(n);
        counts.push(pairs.len());
        for (j, k) in pairs {
            first.push(offset + j);
            second.push(offset + k);
        }
        offset += n;
    }
    let total = first.len();
    if total == 0 {
        return Ok(sizes
            .iter()
            .map(|_| tape.constant(Tensor::zeros(0, 1)))
            .collect());
    }
    let pj = tape.gather_rows(p, &first)?;
    let qk = tape.gather_rows(q, &second)?;
    let forward = tape.add(pj, qk)?;
    let pk = tape.gather_rows(p, &second)?;
    let qj = tape.gather_rows(q, &first)?;
    let reverse = tape.add(pk, qj)?;
    let both = tape.concat_rows(&[forward, reverse])?;

    let h = tape.add_row(both, b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, w2)?;
    let h = tape.add_row(h, b2)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, w3)?;
    let s = tape.add_row(h, b3)?;

    let s_fwd = tape.slice_rows(s, 0, total)?;
    let s_rev = tape.slice_rows(s, total, 2 * total)?;
    let sum = tape.add(s_fwd, s_rev)?;
    let avg = tape.scale(sum, 0.5);

    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for m in counts {
        out.push(tape.slice_rows(avg, start, start + m)?);
        start += m;
    }
    Ok(out)
}

/// Gumbel-difference noise `g_on - g_off` for `m` pairs, drawn in pair order
/// (`g_on` before `g_off` for each pair).
pub fn pair_noise(rng: &mut impl Rng, m: usize) -> Vec<f64> {
    (0..m)
        .map(|_| {
            let on = rng::gumbel(rng);
            let off = rng::gumbel(rng);
            on - off
        })
        .collect()
}

/// Binary-concrete relaxation of pair scores on the tape:
/// `sigmoid((s + noise) / tau)`, where `s = log p - log(1 - p)`.
pub fn relax_on_tape(tape: &mut Tape, scores: Var, noise: Option<&[f64]>, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let s = match noise {
        Some(g) => {
            let g = tape.constant(Tensor::column_vector(g));
            tape.add(scores, g)?
        }
        None => scores,
    };
    let s = tape.scale(s, 1.0 / tau);
    Ok(tape.sigmoid(s))
}

/// Relaxed symmetric adjacency from edge probabilities.
///
/// Each unordered pair uses the two logits `(log p, log(1-p))`; with noise,
/// independent Gumbel draws are added to each; the output is the edge-on
/// component of their softmax at temperature `tau`. The diagonal is zero and
/// the diagonal of `probabilities` is ignored.
pub fn gumbel_adjacency(
    probabilities: &Tensor,
    tau: f64,
    rng: &mut impl Rng,
    noise: bool,
) -> Result<Tensor> {
    check_tau(tau)?;
    let (n, c) = probabilities.shape();
    if n != c {
        return Err(Error::Shape {
            op: "gumbel_adjacency",
            lhs: (n, c),
            rhs: (n, n),
        });
    }
    let pairs = upper_pairs(n);
    let g = if noise {
        pair_noise(rng, pairs.len())
    } else {
        vec![0.0; pairs.len()]
    };
    let mut out = Tensor::zeros(n, n);
    for (&(j, k), gd) in pairs.iter().zip(g) {
        let p = probabilities[(j, k)];
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain {
                op: "gumbel_adjacency",
                detail: format!("probability {p} at ({j}, {k}) outside (0, 1)"),
            });
        }
        let logit = p.ln() - (-p).ln_1p();
        let v = sigmoid((logit + gd) / tau);
        out[(j, k)] = v;
        out[(k, j)] = v;
    }
    Ok(out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `Σ_L ‖mean_L(batch) − μ̂_L‖₂ + ‖var_L(batch) − σ̂²_L‖₂` over every BN layer,
/// using the pre-BN activations recorded by the forward pass.
pub fn bn_regularizer(tape: &mut Tape, expert: &GnnModel, out: &ForwardOutput) -> Result<Var> {
    if expert.bn.is_empty() || out.bn_inputs.len() != expert.bn.len() {
        return Err(Error::invalid(
            "BN regularizer needs an expert with recorded batch-norm moments",
        ));
    }
    let mut total: Option<Var> = None;
    for (&x, stats) in out.bn_inputs.iter().zip(&expert.bn) {
        if !stats.mean.is_finite() || !stats.var.is_finite() {
            return Err(Error::NonFinite("running moments"));
        }
        let mean = tape.col_mean(x);
        let var = tape.col_var(x);
        let mu = tape.constant(stats.mean.clone());
        let sigma2 = tape.constant(stats.var.clone());
        let dm = tape.sub(mean, mu)?;
        let dv = tape.sub(var, sigma2)?;
        let nm = tape.l2_norm(dm);
        let nv = tape.l2_norm(dv);
        let layer = tape.add(nm, nv)?;
        total = Some(match total {
            Some(t) => tape.add(t, layer)?,
            None => layer,
        });
    }
    Ok(total.expect("at least one BN layer"))
}

/// Mean over rows of the softmax entropy `−Σ_c p_c log p_c`.
pub fn confidence_regularizer(tape: &mut Tape, logits: Var) -> Result<Var> {
    let rows = tape.shape(logits).0;
    if rows == 0 {
        return Err(Error::invalid("entropy of an empty batch"));
    }
    let p = tape.softmax(logits, Axis::Rows)?;
    let lp = tape.log_softmax(logits)?;
    let plp = tape.mul(p, lp)?;
    let s = tape.sum(plp);
    Ok(tape.scale(s, -1.0 / rows as f64))
}

/// Loss terms of one generation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossComponents {
    /// Mean cross-entropy of the expert against the sampled labels.
    pub posterior: f64,
    pub bn: f64,
    pub conf: f64,
    pub total: f64,
}

/// Learnable state of one generator.
#[derive(Clone, Debug)]
pub struct GeneratorState {
    pub features: Vec<Tensor>,
    pub encoder: EdgeEncoder,
    pub labels: Vec<usize>,
    pub tau: f64,
    /// Fixed adjacencies when the encoder is not used.
    pub fixed_adjacency: Option<Vec<Tensor>>,
}

impl GeneratorState {
    /// Standard-normal features, node counts uniform in the configured
    /// range, and a shuffled label list that visits the classes round-robin
    /// (every class appears once `count >= classes`).
    pub fn init(expert: &GnnModel, config: &GeneratorConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let d = expert.descriptor.input_dim;
        let c = expert.descriptor.num_classes;
        let sizes: Vec<usize> = (0..config.count)
            .map(|_| rng.gen_range(config.nodes_min..=config.nodes_max))
            .collect();
        let features = sizes.iter().map(|&n| rng::standard_normal(rng, n, d)).collect();
        let mut labels: Vec<usize> = (0..config.count).map(|i| i % c).collect();
        labels.shuffle(rng);
        let encoder = EdgeEncoder::init(d, config.encoder_hidden, rng);
        let fixed_adjacency = match config.edges {
            EdgeMode::Learned => None,
            EdgeMode::FixedRandom(p) => Some(
                sizes
                    .iter()
                    .map(|&n| {
                        let mut a = Tensor::zeros(n, n);
                        for (j, k) in upper_pairs(n) {
                            if rng.gen_bool(p) {
                                a[(j, k)] = 1.0;
                                a[(k, j)] = 1.0;
                            }
                        }
                        a
                    })
                    .collect(),
            ),
        };
        Ok(Self {
            features,
            encoder,
            labels,
            tau: config.tau,
            fixed_adjacency,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.features.iter().map(Tensor::rows).collect()
    }

    /// Noise-free edge probabilities `sigmoid(score)` of one graph,
    /// symmetric with zero diagonal.
    pub fn edge_probabilities(&self, graph_index: usize) -> Result<Tensor> {
        let x = self
            .features
            .get(graph_index)
            .ok_or_else(|| Error::invalid(format!("no synthetic graph {graph_index}")))?;
        let mut tape = Tape::new();
        let enc = self.encoder_constants(&mut tape);
        let xv = tape.constant(x.clone());
        let scores = pair_scores_on_tape(&mut tape, &enc, xv, &[x.rows()])?;
        let probs = tape.sigmoid(scores[0]);
        let sym = tape.pairs_to_sym(probs, x.rows())?;
        Ok(tape.value(sym).clone())
    }

    fn encoder_constants(&self, tape: &mut Tape) -> [Var; 6] {
        self.encoder.tensors().map(|t| tape.constant(t.clone()))
    }

    fn adjacencies_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        encoder: &[Var; 6],
        noise: Option<&[Vec<f64>]>,
        tau: f64,
    ) -> Result<Vec<Var>> {
        match &self.fixed_adjacency {
            Some(fixed) => Ok(fixed.iter().map(|a| tape.constant(a.clone())).collect()),
            None => relaxed_adjacencies_on_tape(tape, encoder, x, &self.sizes(), noise, tau),
        }
    }
}

/// Relaxed symmetric adjacencies for stacked features `x`. `noise` holds
/// one pair-noise vector per graph, or `None` for the deterministic
/// relaxation.
pub fn relaxed_adjacencies_on_tape(
    tape: &mut Tape,
    encoder: &[Var; 6],
    x: Var,
    sizes: &[usize],
    noise: Option<&[Vec<f64>]>,
    tau: f64,
) -> Result<Vec<Var>> {
    let scores = pair_scores_on_tape(tape, encoder, x, sizes)?;
    let mut out = Vec::with_capacity(sizes.len());
    for (i, (&s, &n)) in scores.iter().zip(sizes).enumerate() {
        let relaxed = relax_on_tape(tape, s, noise.map(|g| g[i].as_slice()), tau)?;
        out.push(tape.pairs_to_sym(relaxed, n)?);
    }
    Ok(out)
}

/// Generation loss `CE(ŷ, f(X, Ã)) + R_bn + R_conf` of the frozen expert on
/// a batch of (possibly relaxed) graphs. Returns the total and the three
/// terms in that order.
pub fn generation_loss_on_tape(
    tape: &mut Tape,
    expert: &GnnModel,
    x: Var,
    adjacency: Vec<Var>,
    sizes: &[usize],
    labels: &[usize],
) -> Result<(Var, [Var; 3])> {
    let batch = GraphBatch {
        adjacency,
        features: x,
        sizes: sizes.to_vec(),
    };
    let params = expert.constants_on_tape(tape);
    let out = expert.forward_on_tape(tape, &params, &batch, Mode::Eval)?;
    let posterior = tape.cross_entropy(out.logits, labels)?;
    let bn = bn_regularizer(tape, expert, &out)?;
    let conf = confidence_regularizer(tape, out.logits)?;
    let pb = tape.add(posterior, bn)?;
    let loss = tape.add(pb, conf)?;
    Ok((loss, [posterior, bn, conf]))
}

/// Generator state with its optimizers and noise stream.
pub struct Generator<'a> {
    pub expert: &'a GnnModel,
    pub state: GeneratorState,
    config: GeneratorConfig,
    rng: StreamRng,
    feature_opt: AdamW,
    encoder_opt: AdamW,
    epoch: usize,
}

impl<'a> Generator<'a> {
    pub fn new(expert: &'a GnnModel, config: &GeneratorConfig) -> Result<Self> {
        let mut rng = rng::stream(config.seed, 0);
        let state = GeneratorState::init(expert, config, &mut rng)?;
        let base = AdamWConfig::default();
        let feature_opt = AdamW::new(base.with_lr(config.feature_lr), state.features.iter());
        let encoder_opt = AdamW::new(base.with_lr(config.encoder_lr), state.encoder.tensors());
        Ok(Self {
            expert,
            state,
            config: config.clone(),
            rng,
            feature_opt,
            encoder_opt,
            epoch: 0,
        })
    }

    /// Builds the full generation loss on `tape`. Returns the loss var, the
    /// feature and encoder leaves, and the component values.
    fn build_loss(
        &mut self,
        tape: &mut Tape,
        noise: bool,
    ) -> Result<(Var, Vec<Var>, [Var; 6], LossComponents)> {
        let tau = self.config.tau_at(self.epoch);
        self.state.tau = tau;
        let sizes = self.state.sizes();
        let xs: Vec<Var> = self
            .state
            .features
            .iter()
            .map(|x| tape.param(x.clone()))
            .collect();
        let learn_edges = self.state.fixed_adjacency.is_none();
        let encoder = self
            .state
            .encoder
            .tensors()
            .map(|t| tape.leaf(t.clone(), learn_edges));
        let x = if xs.len() == 1 {
            xs[0]
        } else {
            tape.concat_rows(&xs)?
        };
        let noise_draws: Option<Vec<Vec<f64>>> = (noise && learn_edges).then(|| {
            sizes
                .iter()
                .map(|&n| pair_noise(&mut self.rng, n * (n - 1) / 2))
                .collect()
        });
        let adjacency =
            self.state
                .adjacencies_on_tape(tape, x, &encoder, noise_draws.as_deref(), tau)?;
        let (loss, [posterior, bn, conf]) = generation_loss_on_tape(
            tape,
            self.expert,
            x,
            adjacency,
            &sizes,
            &self.state.labels,
        )?;
        let components = LossComponents {
            posterior: tape.value(posterior).item(),
            bn: tape.value(bn).item(),
            conf: tape.value(conf).item(),
            total: tape.value(loss).item(),
        };
        Ok((loss, xs, encoder, components))
    }

    /// Generation loss and its gradients with respect to every feature
    /// matrix and encoder tensor, at the current state. Does not step.
    pub fn loss_and_grads(&mut self, noise: bool) -> Result<(LossComponents, Vec<Tensor>, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let (loss, xs, encoder, c) = self.build_loss(&mut tape, noise)?;
        tape.backward(loss)?;
        let gx = xs.iter().map(|&v| tape.grad(v)).collect();
        let ge = encoder.iter().map(|&v| tape.grad(v)).collect();
        Ok((c, gx, ge))
    }

    /// One AdamW step on features and encoder with Gumbel noise on.
    pub fn step(&mut self) -> Result<LossComponents> {
        let (c, gx, ge) = self.loss_and_grads(true)?;
        if !c.total.is_finite() {
            return Err(Error::NonFinite("generation loss"));
        }
        let mut xs: Vec<&mut Tensor> = self.state.features.iter_mut().collect();
        self.feature_opt.step(&mut xs, &gx)?;
        if self.state.fixed_adjacency.is_none() {
            let mut enc: Vec<&mut Tensor> = self.state.encoder.tensors_mut().into_iter().collect();
            self.encoder_opt.step(&mut enc, &ge)?;
        }
        self.epoch += 1;
        Ok(c)
    }

    /// Hard adjacencies: noise-free relaxation thresholded at 0.5, which is
    /// the same as a positive pair score.
    pub fn harden(&self) -> Result<Vec<Tensor>> {
        if let Some(fixed) = &self.state.fixed_adjacency {
            return Ok(fixed.clone());
        }
        let mut tape = Tape::new();
        let enc = self.state.encoder_constants(&mut tape);
        let xs: Vec<Var> = self
            .state
            .features
            .iter()
            .map(|x| tape.constant(x.clone()))
            .collect();
        let x = if xs.len() == 1 { xs[0] } else { tape.concat_rows(&xs)? };
        let adj = self
            .state
            .adjacencies_on_tape(&mut tape, x, &enc, None, self.state.tau)?;
        Ok(adj
            .iter()
            .map(|&a| tape.value(a).map(|v| if v > 0.5 { 1.0 } else { 0.0 }))
            .collect())
    }

    /// Emits the current state as a synthetic dataset.
    pub fn emit(&self, expert_id: &str) -> Result<SyntheticSet> {
        let adjacency = self.harden()?;
        let graphs = adjacency
            .into_iter()
            .zip(&self.state.features)
            .zip(&self.state.labels)
            .map(|((a, x), &y)| Graph::new(a, x.clone(), Some(y)))
            .collect::<Result<Vec<_>>>()?;
        let d = self.expert.descriptor;
        let dataset = GraphDataset::new(
            format!("synthetic-{expert_id}"),
            graphs,
            d.num_classes,
            d.input_dim,
        )?;
        Ok(SyntheticSet {
            dataset,
            provenance: Provenance {
                expert: expert_id.to_string(),
                seed: self.config.seed,
                config: self.config.clone(),
            },
        })
    }
}

/// Trains a generator for `config.epochs` steps and emits the hardened set.
/// The expert is only read.
pub fn run_generation(
    expert: &GnnModel,
    config: &GeneratorConfig,
    expert_id: &str,
) -> Result<(SyntheticSet, Vec<LossComponents>)> {
    let mut generator = Generator::new(expert, config)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        history.push(generator.step()?);
    }
    Ok((generator.emit(expert_id)?, history))
}

/// Runs one generator per expert, in parallel. Expert `j` uses the seed
/// derived from `config.seed` and `j`, so the sets do not depend on how many
/// experts come after it.
pub fn generate_for_experts(
    experts: &[GnnModel],
    ids: &[String],
    config: &GeneratorConfig,
) -> Result<Vec<SyntheticSet>> {
    if experts.len() != ids.len() {
        return Err(Error::invalid(format!(
            "{} experts but {} ids",
            experts.len(),
            ids.len()
        )));
    }
    experts
        .par_iter()
        .zip(ids)
        .enumerate()
        .map(|(j, (expert, id))| {
            let cfg = GeneratorConfig {
                seed: rng::derive_seed(config.seed, GENERATOR_STREAM, j as u32),
                ..config.clone()
            };
            run_generation(expert, &cfg, id).map(|(set, _)| set)
        })
        .collect()
}

/// Component ordinal for per-expert generator seeds.
const GENERATOR_STREAM: u32 = 1;

#[cfg(test)]
mod tests;
