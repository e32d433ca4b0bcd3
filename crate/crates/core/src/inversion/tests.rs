use super::*;
use crate::autodiff::finite_diff_check_many;
use crate::gnn::{pretrain, ArchitectureDescriptor, Backbone, TrainConfig};
use crate::graph::{synth_domain_dataset, SynthConfig};

fn small_expert(kind: Backbone) -> GnnModel {
    let ds = synth_domain_dataset(1, &SynthConfig::new(24, 0.2)).unwrap();
    let d = ArchitectureDescriptor::new(kind, ds.feature_dim(), 2).with_hidden(8);
    let m = GnnModel::init(d, &mut rng::stream(2, 0));
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    pretrain(&m, &ds, &cfg).unwrap().0
}

fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        count: 6,
        nodes_min: 4,
        nodes_max: 6,
        epochs: 5,
        encoder_hidden: 8,
        ..GeneratorConfig::default()
    }
}

#[test]
fn edge_probabilities_are_symmetric_in_unit_interval() {
    let expert = small_expert(Backbone::Gcn);
    let gen = Generator::new(&expert, &small_config()).unwrap();
    let p = gen.state.edge_probabilities(0).unwrap();
    for j in 0..p.rows() {
        assert_eq!(p[(j, j)], 0.0);
        for k in 0..p.cols() {
            assert!((p[(j, k)] - p[(k, j)]).abs() <= 1e-12);
            if j != k {
                assert!(p[(j, k)] > 0.0 && p[(j, k)] < 1.0);
            }
        }
    }
}

#[test]
fn identical_rows_give_identical_probabilities() {
    let expert = small_expert(Backbone::Gcn);
    let mut gen = Generator::new(&expert, &small_config()).unwrap();
    let x = &mut gen.state.features[0];
    let first = x.row(0).to_vec();
    for i in 1..x.rows() {
        x.row_mut(i).copy_from_slice(&first);
    }
    let p = gen.state.edge_probabilities(0).unwrap();
    let v = p[(0, 1)];
    for j in 0..p.rows() {
        for k in 0..p.cols() {
            if j != k {
                assert_eq!(p[(j, k)], v);
            }
        }
    }
}

#[test]
fn noise_free_relaxation_limits() {
    let mut r = rng::stream(0, 0);
    let half = Tensor::full(3, 3, 0.5);
    for tau in [0.01, 1.0, 7.0] {
        let a = gumbel_adjacency(&half, tau, &mut r, false).unwrap();
        assert_eq!(a[(0, 1)], 0.5);
        assert_eq!(a[(1, 1)], 0.0);
    }
    let high = Tensor::full(2, 2, 0.9);
    assert!(gumbel_adjacency(&high, 0.01, &mut r, false).unwrap()[(0, 1)] > 1.0 - 1e-3);
    assert!(gumbel_adjacency(&high, 0.0, &mut r, false).is_err());
    assert!(gumbel_adjacency(&Tensor::full(2, 2, 1.0), 1.0, &mut r, false).is_err());
}

/// `E[sigmoid(logit(p) + L)]` for `L ~ Logistic(0, 1)`, by the midpoint rule
/// over the quantile `u`: `L = ln(u / (1 - u))`.
fn binary_concrete_mean(p: f64) -> f64 {
    let n = 200_000;
    let a = (p / (1.0 - p)).ln();
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let l = (u / (1.0 - u)).ln();
            1.0 / (1.0 + (-(a + l)).exp())
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn monte_carlo_mean_matches_quadrature() {
    let mut r = rng::stream(4, 0);
    for p in [0.3, 0.5, 0.7] {
        let probs = Tensor::full(2, 2, p);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| gumbel_adjacency(&probs, 1.0, &mut r, true).unwrap()[(0, 1)])
            .sum::<f64>()
            / draws as f64;
        let expected = binary_concrete_mean(p);
        assert!((mean - expected).abs() < 0.01, "p={p}: {mean} vs {expected}");
    }
}

#[test]
fn bn_regularizer_hand_values() {
    let d = ArchitectureDescriptor::new(Backbone::Gcn, 3, 2);
    let expert = GnnModel::init(d, &mut rng::stream(0, 0));
    // batch moments (1, 1) against running (0, 1): ‖1‖₂ over 32 features
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_fn(4, 32, |i, _| if i % 2 == 0 { 0.0 } else { 2.0 }));
    let out = ForwardOutput {
        logits: x,
        bn_inputs: vec![x],
        bn_updates: vec![None],
    };
    let r = bn_regularizer(&mut tape, &expert, &out).unwrap();
    assert!((tape.value(r).item() - 32f64.sqrt()).abs() < 1e-12);

    let y = tape.constant(Tensor::from_fn(4, 32, |i, _| if i % 2 == 0 { -1.0 } else { 1.0 }));
    let out = ForwardOutput {
        logits: y,
        bn_inputs: vec![y],
        bn_updates: vec![None],
    };
    let r = bn_regularizer(&mut tape, &expert, &out).unwrap();
    assert_eq!(tape.value(r).item(), 0.0);
}

#[test]
fn entropy_regularizer_values() {
    let mut tape = Tape::new();
    let uniform = tape.constant(Tensor::zeros(3, 2));
    let e = confidence_regularizer(&mut tape, uniform).unwrap();
    assert!((tape.value(e).item() - 2f64.ln()).abs() < 1e-15);

    let peaked = tape.constant(Tensor::from_rows(&[&[800.0, 0.0]]));
    let e = confidence_regularizer(&mut tape, peaked).unwrap();
    assert!(tape.value(e).item().abs() < 1e-300);

    let entropy_at = |scale: f64| {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_rows(&[&[scale * 1.0, 0.2, -0.3]]));
        let e = confidence_regularizer(&mut tape, l).unwrap();
        tape.value(e).item()
    };
    assert!(entropy_at(3.0) < entropy_at(1.0));
}

#[test]
fn generation_loss_gradients_match_finite_differences() {
    for kind in [Backbone::Gcn, Backbone::Gin] {
        let expert = small_expert(kind);
        let cfg = GeneratorConfig {
            count: 2,
            nodes_min: 3,
            nodes_max: 4,
            encoder_hidden: 5,
            ..GeneratorConfig::default()
        };
        let gen = Generator::new(&expert, &cfg).unwrap();
        let sizes = gen.state.sizes();
        let labels = gen.state.labels.clone();
        let mut inputs = gen.state.features.clone();
        inputs.extend(gen.state.encoder.tensors().into_iter().cloned());
        let err = finite_diff_check_many(
            |tape, vars| {
                let (xs, enc) = vars.split_at(sizes.len());
                let x = tape.concat_rows(xs)?;
                let enc: [Var; 6] = enc.try_into().unwrap();
                let adj = relaxed_adjacencies_on_tape(tape, &enc, x, &sizes, None, 1.0)?;
                Ok(generation_loss_on_tape(tape, &expert, x, adj, &sizes, &labels)?.0)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "{kind}: {err}");
    }
}

#[test]
fn generation_keeps_expert_frozen_and_emits_valid_graphs() {
    for kind in [Backbone::Gcn, Backbone::Gin, Backbone::Gat] {
        let expert = small_expert(kind);
        let before = expert.clone();
        let cfg = small_config();
        let (set, history) = run_generation(&expert, &cfg, "GCN-A").unwrap();
        assert_eq!(expert, before);
        assert_eq!(history.len(), cfg.epochs);
        assert!(history.iter().all(|h| h.total.is_finite()));
        assert_eq!(set.dataset.len(), cfg.count);
        let labels = set.dataset.labels().unwrap();
        assert!(labels.contains(&0) && labels.contains(&1));
        for g in set.dataset.graphs() {
            let a = g.adjacency();
            assert!((cfg.nodes_min..=cfg.nodes_max).contains(&g.num_nodes()));
            for j in 0..a.rows() {
                assert_eq!(a[(j, j)], 0.0);
                for k in 0..a.cols() {
                    assert_eq!(a[(j, k)], a[(k, j)]);
                    assert!(a[(j, k)] == 0.0 || a[(j, k)] == 1.0);
                }
            }
        }
        let (again, _) = run_generation(&expert, &cfg, "GCN-A").unwrap();
        assert_eq!(again, set);
    }
}

#[test]
fn frozen_expert_gets_no_gradient_leaves() {
    let expert = small_expert(Backbone::Gcn);
    let mut gen = Generator::new(&expert, &small_config()).unwrap();
    let mut tape = Tape::new();
    let (loss, _, _, _) = gen.build_loss(&mut tape, true).unwrap();
    tape.backward(loss).unwrap();
    // expert parameters enter as constants, so no leaf of theirs tracks grads
    let expected = gen.state.features.len() + 6;
    assert_eq!(tape.trainable_leaves().len(), expected);
    assert!(tape.trainable_leaves().iter().all(|&v| tape.has_grad(v)));
}

#[test]
fn synthetic_set_round_trips_with_provenance() {
    let expert = small_expert(Backbone::Gcn);
    let (set, _) = run_generation(&expert, &small_config(), "GCN-A").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("syn.txt");
    write_synthetic(&path, &set).unwrap();
    let back = read_synthetic(&path).unwrap();
    assert_eq!(back, set);
    std::fs::remove_file(dir.path().join("syn.prov")).unwrap();
    assert!(matches!(read_synthetic(&path), Err(Error::MissingFile(_))));
}

#[test]
fn fixed_edges_learn_features_only() {
    let expert = small_expert(Backbone::Gin);
    let cfg = GeneratorConfig {
        edges: EdgeMode::FixedRandom(0.2),
        ..small_config()
    };
    let mut gen = Generator::new(&expert, &cfg).unwrap();
    let enc = gen.state.encoder.clone();
    let adj = gen.harden().unwrap();
    let x0 = gen.state.features[0].clone();
    gen.step().unwrap();
    assert_eq!(gen.state.encoder, enc);
    assert_eq!(gen.harden().unwrap(), adj);
    assert_ne!(gen.state.features[0], x0);
}
