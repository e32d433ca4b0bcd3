//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use graphmerge_core::autodiff::{finite_diff_check_many, Axis, BnStats, ElementwiseKind};
use graphmerge_core::gnn::{pretrain, TrainConfig};
use graphmerge_core::graph::{synth_domain_dataset, SynthConfig};
use graphmerge_core::inversion::{
    generation_loss_on_tape, pair_noise, relaxed_adjacencies_on_tape, upper_pairs, Generator,
    GeneratorConfig,
};
use graphmerge_core::merge::{gate_noise, merged_loss_on_tape, MaskPlacement, MergeHyper, MergedModel};
use graphmerge_core::rng;
use graphmerge_core::{
    ArchitectureDescriptor, Backbone, GnnModel, Graph, GraphDataset, Mode, Result, Tape, Tensor, Var,
};

pub const STEP: f64 = 1e-5;
pub const POINTS: u64 = 10;

/// Motif-task dataset at edge probability `p`.
pub fn dataset(seed: u64, n: usize, p: f64) -> GraphDataset {
    let mut cfg = SynthConfig::new(n, p);
    cfg.nodes_min = 6;
    cfg.nodes_max = 10;
    synth_domain_dataset(seed, &cfg).unwrap()
}

/// A briefly trained expert, so BN moments and weights are not at init.
pub fn trained_expert(kind: Backbone, hidden: usize, seed: u64) -> GnnModel {
    let ds = dataset(seed, 24, 0.2);
    let d = ArchitectureDescriptor::new(kind, ds.feature_dim(), 2).with_hidden(hidden);
    let m = GnnModel::init(d, &mut rng::stream(seed, 1));
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed,
        ..TrainConfig::default()
    };
    pretrain(&m, &ds, &cfg).unwrap().0
}

#[derive(Clone, Copy)]
enum Support {
    Any,
    Positive,
    AwayFromZero,
}

fn sample(seed: u64, shape: (usize, usize), support: Support) -> Tensor {
    let t = rng::standard_normal(&mut rng::stream(seed, 7), shape.0, shape.1);
    match support {
        Support::Any => t,
        Support::Positive => t.map(|x| 0.5 + x.abs()),
        Support::AwayFromZero => t.map(|x| x.signum() * (0.2 + x.abs())),
    }
}

/// Reduces any output to a scalar with fixed random weights, so every
/// output entry contributes a distinct gradient.
fn probe(tape: &mut Tape, out: Var) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let w = rng::standard_normal(&mut rng::stream(99, (r * 31 + c) as u64), r, c);
    let w = tape.constant(w);
    let weighted = tape.mul(out, w)?;
    Ok(tape.sum(weighted))
}

type Op = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Primitive {
    name: &'static str,
    inputs: Vec<((usize, usize), Support)>,
    op: Op,
}

fn prim(
    name: &'static str,
    inputs: &[((usize, usize), Support)],
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Primitive {
    Primitive {
        name,
        inputs: inputs.to_vec(),
        op: Box::new(op),
    }
}

fn primitives() -> Vec<Primitive> {
    use Support::*;
    let m34 = ((3, 4), Any);
    let bn_stats = || BnStats {
        mean: Tensor::row_vector(&[0.3, -0.2, 0.1]),
        var: Tensor::row_vector(&[0.8, 1.5, 0.4]),
        ..BnStats::new(3)
    };
    vec![
        prim("matmul", &[m34, ((4, 2), Any)], |t, v| t.matmul(v[0], v[1])),
        prim("add", &[m34, m34], |t, v| t.add(v[0], v[1])),
        prim("sub", &[m34, m34], |t, v| t.sub(v[0], v[1])),
        prim("mul", &[m34, m34], |t, v| t.mul(v[0], v[1])),
        prim("scale", &[m34], |t, v| Ok(t.scale(v[0], -1.7))),
        prim("add_scalar", &[m34], |t, v| Ok(t.add_scalar(v[0], 0.3))),
        prim("sigmoid", &[m34], |t, v| Ok(t.sigmoid(v[0]))),
        prim("relu", &[((3, 4), AwayFromZero)], |t, v| Ok(t.relu(v[0]))),
        prim("leaky_relu", &[((3, 4), AwayFromZero)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        prim("log", &[((3, 4), Positive)], |t, v| t.log(v[0])),
        prim("exp", &[m34], |t, v| Ok(t.exp(v[0]))),
        prim("softplus", &[m34], |t, v| Ok(t.softplus(v[0]))),
        prim("abs", &[((3, 4), AwayFromZero)], |t, v| Ok(t.abs(v[0]))),
        prim("powf", &[((3, 4), Positive)], |t, v| t.powf(v[0], 1.5)),
        prim("powf_negative", &[((3, 4), Positive)], |t, v| t.powf(v[0], -2.0)),
        prim("elementwise", &[m34, m34], |t, v| {
            let h = t.elementwise(ElementwiseKind::Hadamard, v[0], Some(v[1]))?;
            let s = t.elementwise(ElementwiseKind::Sigmoid, h, None)?;
            let e = t.elementwise(ElementwiseKind::Exp, v[1], None)?;
            let sum = t.elementwise(ElementwiseKind::Add, s, Some(e))?;
            t.elementwise(ElementwiseKind::ScalarMultiply(0.5), sum, None)
        }),
        prim("add_row", &[m34, ((1, 4), Any)], |t, v| t.add_row(v[0], v[1])),
        prim("scale_rows", &[m34, ((3, 1), Any)], |t, v| t.scale_rows(v[0], v[1])),
        prim("scale_by", &[m34, ((1, 1), Any)], |t, v| t.scale_by(v[0], v[1])),
        prim("transpose", &[m34], |t, v| Ok(t.transpose(v[0]))),
        prim("sum", &[m34], |t, v| Ok(t.sum(v[0]))),
        prim("mean", &[m34], |t, v| Ok(t.mean(v[0]))),
        prim("sum_rows", &[m34], |t, v| Ok(t.sum_rows(v[0]))),
        prim("sum_cols", &[m34], |t, v| Ok(t.sum_cols(v[0]))),
        prim("col_mean", &[m34], |t, v| Ok(t.col_mean(v[0]))),
        prim("col_var", &[m34], |t, v| Ok(t.col_var(v[0]))),
        prim("softmax_rows", &[m34], |t, v| t.softmax(v[0], Axis::Rows)),
        prim("softmax_cols", &[m34], |t, v| t.softmax(v[0], Axis::Cols)),
        prim("log_softmax", &[m34], |t, v| t.log_softmax(v[0])),
        prim("cross_entropy", &[m34], |t, v| t.cross_entropy(v[0], &[0, 3, 1])),
        prim("pick", &[m34], |t, v| t.pick(v[0], &[2, 0, 3])),
        prim("masked_softmax", &[m34], |t, v| {
            let w = Tensor::from_rows(&[&[1.0, 0.0, 1.0, 0.0], &[0.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 0.0, 1.0]]);
            let w = t.constant(w);
            t.masked_softmax(v[0], w)
        }),
        prim("l2_norm", &[m34], |t, v| Ok(t.l2_norm(v[0]))),
        prim("slice_rows", &[m34], |t, v| t.slice_rows(v[0], 1, 3)),
        prim("slice_cols", &[m34], |t, v| t.slice_cols(v[0], 1, 3)),
        prim("concat_rows", &[m34, ((2, 4), Any)], |t, v| t.concat_rows(&[v[0], v[1]])),
        prim("gather_rows", &[m34], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1])),
        prim("segment_mean", &[((5, 3), Any)], |t, v| t.segment_mean(v[0], &[2, 3])),
        prim("pairs_to_sym", &[((6, 1), Any)], |t, v| t.pairs_to_sym(v[0], 4)),
        prim("batch_norm_train", &[((5, 3), Any), ((1, 3), Any), ((1, 3), Any)], move |t, v| {
            Ok(t.batch_norm(v[0], v[1], v[2], &bn_stats(), Mode::Train)?.0)
        }),
        prim("batch_norm_eval", &[((5, 3), Any), ((1, 3), Any), ((1, 3), Any)], move |t, v| {
            Ok(t.batch_norm(v[0], v[1], v[2], &bn_stats(), Mode::Eval)?.0)
        }),
    ]
}

/// Worst relative error over `POINTS` random inputs for every primitive.
pub fn primitive_errors() -> Vec<(&'static str, f64)> {
    primitives()
        .into_iter()
        .map(|p| {
            let worst = (0..POINTS)
                .map(|point| {
                    let xs: Vec<Tensor> = p
                        .inputs
                        .iter()
                        .enumerate()
                        .map(|(i, &(shape, s))| sample(point * 100 + i as u64, shape, s))
                        .collect();
                    finite_diff_check_many(
                        |tape, vars| {
                            let out = (p.op)(tape, vars)?;
                            probe(tape, out)
                        },
                        &xs,
                        STEP,
                    )
                    .unwrap()
                })
                .fold(0.0, f64::max);
            (p.name, worst)
        })
        .collect()
}

const BACKBONES: [Backbone; 3] = [Backbone::Gcn, Backbone::Gin, Backbone::Gat];

/// Worst relative error of the generation loss with respect to node
/// features and edge-encoder weights over `POINTS` random generator states
/// (encoder weights jittered away from their initialization).
/// Points cycle through the backbones and alternate Gumbel noise on and off.
pub fn generation_loss_error() -> f64 {
    let experts: Vec<GnnModel> = BACKBONES.iter().map(|&k| trained_expert(k, 6, 3)).collect();
    (0..POINTS)
        .map(|point| {
            let expert = &experts[point as usize % experts.len()];
            let cfg = GeneratorConfig {
                count: 2,
                nodes_min: 3,
                nodes_max: 4,
                encoder_hidden: 5,
                seed: point,
                ..GeneratorConfig::default()
            };
            let gen = Generator::new(expert, &cfg).unwrap();
            let sizes = gen.state.sizes();
            let labels = gen.state.labels.clone();
            let noise: Option<Vec<Vec<f64>>> = (point % 2 == 1).then(|| {
                let mut r = rng::stream(point, 5);
                sizes.iter().map(|&n| pair_noise(&mut r, upper_pairs(n).len())).collect()
            });
            // move the zero-initialized biases off ReLU kinks
            let mut r = rng::stream(point, 8);
            let mut inputs = gen.state.features.clone();
            for t in gen.state.encoder.tensors() {
                let jitter = rng::standard_normal(&mut r, t.rows(), t.cols()).scale(0.3);
                inputs.push(t.zip_map(&jitter, |a, b| a + b));
            }
            finite_diff_check_many(
                |tape, vars| {
                    let (xs, enc) = vars.split_at(sizes.len());
                    let x = tape.concat_rows(xs)?;
                    let enc: [Var; 6] = enc.try_into().unwrap();
                    let adj = relaxed_adjacencies_on_tape(tape, &enc, x, &sizes, noise.as_deref(), 1.0)?;
                    Ok(generation_loss_on_tape(tape, expert, x, adj, &sizes, &labels)?.0)
                },
                &inputs,
                STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the merging loss with respect to masks, `W_g`
/// and `W_n` over `POINTS` random merge states. Points alternate the mask
/// placement; the expert pool mixes backbones.
pub fn merge_loss_error() -> f64 {
    let experts: Vec<GnnModel> = BACKBONES.iter().map(|&k| trained_expert(k, 4, 4)).collect();
    let ds = dataset(5, 4, 0.2);
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let labels = ds.labels().unwrap();
    (0..POINTS)
        .map(|point| {
            let placement = if point % 2 == 0 {
                MaskPlacement::Classifier
            } else {
                MaskPlacement::Encoder
            };
            let mut model = MergedModel::new(experts.clone(), placement, 2, MergeHyper::default()).unwrap();
            let mut r = rng::stream(point, 6);
            for e in &mut model.experts {
                for m in &mut e.masks {
                    let jitter = rng::standard_normal(&mut r, m.rows(), m.cols()).scale(0.1);
                    *m = m.zip_map(&jitter, |a, b| a + b);
                }
            }
            let (d, m) = (model.gate.input_dim(), model.gate.experts());
            model.gate.w_g = rng::standard_normal(&mut r, d, m).scale(0.3);
            model.gate.w_n = rng::standard_normal(&mut r, d, m).scale(0.3);
            let noise = gate_noise(&mut r, graphs.len(), m);
            finite_diff_check_many(
                |tape, vars| merged_loss_on_tape(tape, &model, vars, &graphs, &labels, Some(&noise)),
                &model.trainable_tensors(),
                STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}
