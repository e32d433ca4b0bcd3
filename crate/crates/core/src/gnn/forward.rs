use super::{Backbone, GnnModel};
use crate::autodiff::{BnStats, Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

const GAT_SLOPE: f64 = 0.2;

/// A batch of graphs placed on a tape: one adjacency per graph and the node
/// features of all graphs stacked in order.
///
/// Adjacencies may be relaxed (entries in [0, 1]) and may carry gradients.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub adjacency: Vec<Var>,
    pub features: Var,
    pub sizes: Vec<usize>,
}

impl GraphBatch {
    /// Constant batch from stored graphs.
    pub fn from_graphs(tape: &mut Tape, graphs: &[&Graph]) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::invalid("empty graph batch"))?;
        let dim = first.feature_dim();
        let mut data = Vec::new();
        let mut adjacency = Vec::with_capacity(graphs.len());
        let mut sizes = Vec::with_capacity(graphs.len());
        for g in graphs {
            if g.feature_dim() != dim {
                return Err(Error::Shape {
                    op: "graph batch",
                    lhs: g.features().shape(),
                    rhs: (0, dim),
                });
            }
            data.extend_from_slice(g.features().data());
            adjacency.push(tape.constant(g.adjacency().clone()));
            sizes.push(g.num_nodes());
        }
        let rows = sizes.iter().sum();
        let features = tape.constant(Tensor::from_vec(rows, dim, data)?);
        Ok(Self {
            adjacency,
            features,
            sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    fn offsets(&self) -> Vec<usize> {
        self.sizes
            .iter()
            .scan(0, |acc, &n| {
                let start = *acc;
                *acc += n;
                Some(start)
            })
            .collect()
    }
}

pub struct ForwardOutput {
    /// One row of logits per graph.
    pub logits: Var,
    /// Input of every batch-norm layer (all nodes of the batch), in layer order.
    pub bn_inputs: Vec<Var>,
    /// Updated running moments per BN layer; `None` in eval mode.
    pub bn_updates: Vec<Option<BnStats>>,
}

impl GnnModel {
    /// Puts every parameter on the tape as a trainable leaf, in storage order.
    pub fn params_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.value.clone())).collect()
    }

    /// Puts every parameter on the tape as a constant.
    pub fn constants_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect()
    }

    /// Forward pass with parameters supplied as tape variables (so callers
    /// can substitute masked or frozen versions).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        params: &[Var],
        batch: &GraphBatch,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        if params.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "{} parameter vars for a model with {}",
                params.len(),
                self.params.len()
            )));
        }
        self.check_input_dim(tape.shape(batch.features).1)?;
        if batch.adjacency.len() != batch.sizes.len() {
            return Err(Error::invalid("adjacency count differs from batch size"));
        }
        for (&a, &n) in batch.adjacency.iter().zip(&batch.sizes) {
            if tape.shape(a) != (n, n) {
                return Err(Error::Shape {
                    op: "graph batch adjacency",
                    lhs: tape.shape(a),
                    rhs: (n, n),
                });
            }
        }
        let p = |name: &str| -> Result<Var> {
            self.param_index(name)
                .map(|i| params[i])
                .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))
        };
        let mut cx = Ctx {
            tape,
            batch,
            offsets: batch.offsets(),
            bn_inputs: Vec::new(),
            bn_updates: Vec::new(),
        };
        let h = batch.features;
        let h = match self.descriptor.kind {
            Backbone::Gcn => {
                let a_hat = cx.gcn_norms()?;
                let h = cx.gcn_layer(&a_hat, h, p("conv1.weight")?, p("conv1.bias")?)?;
                let h = cx.bn(h, p("bn1.gamma")?, p("bn1.beta")?, &self.bn[0], mode)?;
                let h = cx.tape.relu(h);
                let h = cx.gcn_layer(&a_hat, h, p("conv2.weight")?, p("conv2.bias")?)?;
                cx.tape.relu(h)
            }
            Backbone::Gin => {
                let mut h = h;
                for layer in 1..=2 {
                    let name = |s: &str| format!("gin{layer}.{s}");
                    let agg = cx.gin_aggregate(h, p(&name("eps"))?)?;
                    let z = cx.linear(agg, p(&name("lin1.weight"))?, p(&name("lin1.bias"))?)?;
                    let z = cx.bn(
                        z,
                        p(&name("bn.gamma"))?,
                        p(&name("bn.beta"))?,
                        &self.bn[layer - 1],
                        mode,
                    )?;
                    let z = cx.tape.relu(z);
                    let z = cx.linear(z, p(&name("lin2.weight"))?, p(&name("lin2.bias"))?)?;
                    h = cx.tape.relu(z);
                }
                h
            }
            Backbone::Gat => {
                let h = cx.gat_layer(h, [
                    p("gat1.weight")?,
                    p("gat1.att_src")?,
                    p("gat1.att_dst")?,
                    p("gat1.bias")?,
                ])?;
                let h = cx.bn(h, p("bn1.gamma")?, p("bn1.beta")?, &self.bn[0], mode)?;
                let h = cx.tape.relu(h);
                let h = cx.gat_layer(h, [
                    p("gat2.weight")?,
                    p("gat2.att_src")?,
                    p("gat2.att_dst")?,
                    p("gat2.bias")?,
                ])?;
                cx.tape.relu(h)
            }
        };
        let pooled = cx.tape.segment_mean(h, &batch.sizes)?;
        let logits = cx.linear(pooled, p("classifier.weight")?, p("classifier.bias")?)?;
        Ok(ForwardOutput {
            logits,
            bn_inputs: cx.bn_inputs,
            bn_updates: cx.bn_updates,
        })
    }

    /// Eval-mode logits for a list of graphs, one row each.
    pub fn logits(&self, graphs: &[&Graph]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let params = self.constants_on_tape(&mut tape);
        let batch = GraphBatch::from_graphs(&mut tape, graphs)?;
        let out = self.forward_on_tape(&mut tape, &params, &batch, Mode::Eval)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Logits of a single graph (1×c). Train mode also returns the updated
    /// running moments; the model itself is never mutated.
    pub fn forward(&self, g: &Graph, mode: Mode) -> Result<(Tensor, Vec<Option<BnStats>>)> {
        let mut tape = Tape::new();
        let params = self.constants_on_tape(&mut tape);
        let batch = GraphBatch::from_graphs(&mut tape, &[g])?;
        let out = self.forward_on_tape(&mut tape, &params, &batch, mode)?;
        Ok((tape.value(out.logits).clone(), out.bn_updates))
    }
}

struct Ctx<'a> {
    tape: &'a mut Tape,
    batch: &'a GraphBatch,
    offsets: Vec<usize>,
    bn_inputs: Vec<Var>,
    bn_updates: Vec<Option<BnStats>>,
}

impl Ctx<'_> {
    fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.tape.matmul(x, w)?;
        self.tape.add_row(xw, b)
    }

    fn bn(&mut self, x: Var, gamma: Var, beta: Var, stats: &BnStats, mode: Mode) -> Result<Var> {
        self.bn_inputs.push(x);
        let (y, update) = self.tape.batch_norm(x, gamma, beta, stats, mode)?;
        self.bn_updates.push(update);
        Ok(y)
    }

    /// Applies `f` to each graph's block of node rows and restacks the results.
    fn per_graph(
        &mut self,
        h: Var,
        mut f: impl FnMut(&mut Tape, usize, Var) -> Result<Var>,
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.batch.len());
        for (gi, (&start, &n)) in self.offsets.iter().zip(&self.batch.sizes).enumerate() {
            let block = self.tape.slice_rows(h, start, start + n)?;
            parts.push(f(self.tape, gi, block)?);
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.tape.concat_rows(&parts)
    }

    /// `D^-1/2 (A + I) D^-1/2` per graph, built on the tape so relaxed
    /// adjacencies receive gradients.
    fn gcn_norms(&mut self) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.batch.len());
        for (&a, &n) in self.batch.adjacency.iter().zip(&self.batch.sizes) {
            let eye = self.tape.constant(Tensor::identity(n));
            let a_tilde = self.tape.add(a, eye)?;
            let deg = self.tape.sum_cols(a_tilde);
            let inv_sqrt = self.tape.powf(deg, -0.5)?;
            let left = self.tape.scale_rows(a_tilde, inv_sqrt)?;
            // (D^-1/2 Ã)ᵀ = Ã D^-1/2 because Ã is symmetric
            let t = self.tape.transpose(left);
            out.push(self.tape.scale_rows(t, inv_sqrt)?);
        }
        Ok(out)
    }

    fn gcn_layer(&mut self, a_hat: &[Var], h: Var, w: Var, b: Var) -> Result<Var> {
        let hw = self.tape.matmul(h, w)?;
        let prop = self.per_graph(hw, |tape, gi, block| tape.matmul(a_hat[gi], block))?;
        self.tape.add_row(prop, b)
    }

    /// `(1 + eps) H + A H`.
    fn gin_aggregate(&mut self, h: Var, eps: Var) -> Result<Var> {
        let adjacency = self.batch.adjacency.clone();
        let neigh = self.per_graph(h, |tape, gi, block| tape.matmul(adjacency[gi], block))?;
        let scaled = self.tape.scale_by(h, eps)?;
        let self_term = self.tape.add(h, scaled)?;
        self.tape.add(self_term, neigh)
    }

    /// Single-head additive attention restricted to `A + I`:
    /// `alpha_ij ∝ (A+I)_ij exp(LeakyReLU(a_src·z_i + a_dst·z_j))`.
    fn gat_layer(&mut self, h: Var, [w, att_src, att_dst, b]: [Var; 4]) -> Result<Var> {
        let z = self.tape.matmul(h, w)?;
        let adjacency = self.batch.adjacency.clone();
        let out = self.per_graph(z, |tape, gi, zg| {
            let n = tape.shape(zg).0;
            let src = tape.matmul(zg, att_src)?;
            let dst = tape.matmul(zg, att_dst)?;
            let ones_row = tape.constant(Tensor::ones(1, n));
            let src_mat = tape.matmul(src, ones_row)?;
            let dst_t = tape.transpose(dst);
            let ones_col = tape.constant(Tensor::ones(n, 1));
            let dst_mat = tape.matmul(ones_col, dst_t)?;
            let scores = tape.add(src_mat, dst_mat)?;
            let scores = tape.leaky_relu(scores, GAT_SLOPE);
            let eye = tape.constant(Tensor::identity(n));
            let support = tape.add(adjacency[gi], eye)?;
            let alpha = tape.masked_softmax(scores, support)?;
            tape.matmul(alpha, zg)
        })?;
        self.tape.add_row(out, b)
    }
}
