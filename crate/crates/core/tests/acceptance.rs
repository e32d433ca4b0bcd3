//! Acceptance criteria, one verdict line each. Runs without the libtest
//! harness; exits nonzero when any criterion fails.
//!
//! The real-data check reads a TU dataset directory from
//! `GRAPHMERGE_MUTAG_DIR` and is skipped when that variable is unset.

mod support;

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use graphmerge_core::baselines::{ens_prob, hdh_divergence, uniform_soup};
use graphmerge_core::experiment::{
    build_domains, evaluate_run, merge_experts, pool_synthetic, synthesize, train_roster,
    ExperimentConfig, ExpertSpec,
};
use graphmerge_core::gnn::predict_probs;
use graphmerge_core::inversion::{gumbel_adjacency, run_generation, GeneratorConfig};
use graphmerge_core::merge::{
    gate_feature_matrix, gate_noise, gate_scores, importance_loss, merge_train, sparse_gate,
    MaskPlacement, MergeConfig, MergeHyper, MergedModel,
};
use graphmerge_core::rng;
use graphmerge_core::{Backbone, GnnModel, Graph, GraphDataset, Tensor};
use support::{dataset, trained_expert};

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    summary: String,
    details: Vec<String>,
}

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

impl Outcome {
    fn new(pass: bool, summary: String, details: Vec<String>) -> Self {
        let verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        Self {
            verdict,
            summary,
            details,
        }
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let prims = support::primitive_errors();
    let generation = support::generation_loss_error();
    let merge = support::merge_loss_error();
    let secs = start.elapsed().as_secs_f64();
    let mut details: Vec<String> = prims
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= 1e-4)
        .map(|(n, e)| format!("{n}: {e:.3e}"))
        .collect();
    let (worst_name, worst) = prims
        .iter()
        .fold(("", 0.0), |acc, &(n, e)| if e > acc.1 { (n, e) } else { acc });
    details.push(format!(
        "{} primitives, worst {worst_name} {worst:.2e}; generation loss {generation:.2e}; merge loss {merge:.2e}",
        prims.len()
    ));
    let pass = worst < 1e-4 && generation < 1e-4 && merge < 1e-4 && secs < 60.0;
    Outcome::new(
        pass,
        format!(
            "max relative error {:.2e} at {} points each, {secs:.1} s (limit 1e-4, 60 s)",
            worst.max(generation).max(merge),
            support::POINTS
        ),
        details,
    )
}

fn relaxation_limit() -> Outcome {
    let mut details = Vec::new();
    let mut r = rng::stream(0, 0);
    let mut worst_gap: f64 = 0.0;
    for i in 1..100 {
        let p = i as f64 / 100.0;
        if (0.45..=0.55).contains(&p) {
            continue;
        }
        let probs = Tensor::full(2, 2, p);
        let v = gumbel_adjacency(&probs, 0.01, &mut r, false).unwrap()[(0, 1)];
        worst_gap = worst_gap.max(v.min(1.0 - v));
    }
    let limit_ok = worst_gap < 1e-3;
    details.push(format!(
        "noise off, tau=0.01: worst distance to {{0,1}} over p outside [0.45, 0.55] is {worst_gap:.2e}"
    ));

    let mut mean_ok = true;
    let mut means = Vec::new();
    for p in [0.3, 0.5, 0.7] {
        let probs = Tensor::full(2, 2, p);
        let mut r = rng::stream(1, (p * 10.0) as u64);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| gumbel_adjacency(&probs, 1.0, &mut r, true).unwrap()[(0, 1)])
            .sum::<f64>()
            / draws as f64;
        let ok = (mean - p).abs() <= 0.02;
        mean_ok &= ok;
        means.push(format!("p={p}: {mean:.4}"));
        details.push(format!(
            "noise on, tau=1, {draws} draws: p={p} mean {mean:.4} (|gap| {:.4}, {})",
            (mean - p).abs(),
            if ok { "within 0.02" } else { "outside 0.02" }
        ));
    }
    Outcome::new(
        limit_ok && mean_ok,
        format!(
            "hard limit {}; Monte-Carlo means {}",
            if limit_ok { "holds" } else { "violated" },
            means.join(", ")
        ),
        details,
    )
}

fn random_merged(experts: &[GnnModel], k: usize, seed: u64) -> MergedModel {
    let mut m = MergedModel::new(experts.to_vec(), MaskPlacement::Classifier, k, MergeHyper::default()).unwrap();
    let mut r = rng::stream(seed, 2);
    let (d, n) = (m.gate.input_dim(), m.gate.experts());
    m.gate.w_g = rng::standard_normal(&mut r, d, n);
    m.gate.w_n = rng::standard_normal(&mut r, d, n);
    m
}

fn gate_contract() -> Outcome {
    let experts: Vec<GnnModel> = (0..4)
        .map(|j| trained_expert([Backbone::Gcn, Backbone::Gin][j % 2], 6, 30 + j as u64))
        .collect();
    let mut failures = Vec::new();
    let mut checked = 0;
    for trial in 0..20u64 {
        let k = 1 + (trial as usize % experts.len());
        let model = random_merged(&experts, k, trial);
        let ds = dataset(100 + trial, 8, 0.1 + 0.02 * trial as f64);
        let graphs: Vec<&Graph> = ds.graphs().iter().collect();
        let feats = gate_feature_matrix(&graphs).unwrap();
        let noise = gate_noise(&mut rng::stream(trial, 4), graphs.len(), experts.len());
        for w in [
            model.gate_weights(&graphs).unwrap(),
            sparse_gate(&gate_scores(&model.gate, &feats, Some(&noise)).unwrap(), k),
        ] {
            for i in 0..w.rows() {
                checked += 1;
                let nonzero = w.row(i).iter().filter(|&&v| v != 0.0).count();
                let sum: f64 = w.row(i).iter().sum();
                if nonzero > k || (sum - 1.0).abs() > 1e-9 {
                    failures.push(format!("trial {trial} row {i}: {nonzero} nonzeros, sum {sum}"));
                }
            }
        }
        let a = model.predict_probs(&graphs).unwrap();
        let b = model.predict_probs(&graphs).unwrap();
        let single = model.merged_forward(graphs[0], None).unwrap();
        if a != b || single != model.merged_forward(graphs[0], None).unwrap() {
            failures.push(format!("trial {trial}: eval output not deterministic"));
        }
    }
    let uniform = importance_loss(&[2.5, 2.5, 2.5, 2.5]);
    let skewed = importance_loss(&[1.0, 0.0]);
    if uniform != 0.0 || skewed != 1.0 {
        failures.push(format!("importance loss: uniform {uniform}, [1,0] {skewed}"));
    }
    let pass = failures.is_empty();
    let mut details = failures;
    details.push(format!("importance loss: uniform totals {uniform}, totals [1,0] {skewed}"));
    Outcome::new(
        pass,
        format!("{checked} gate rows over 20 random gates (k = 1..4, eval and noisy)"),
        details,
    )
}

fn identity_equivalences() -> Outcome {
    let experts: Vec<GnnModel> = (0..3)
        .map(|j| trained_expert([Backbone::Gcn, Backbone::Gin, Backbone::Gat][j], 6, 40 + j as u64))
        .collect();
    let ds = dataset(41, 16, 0.3);
    let other = dataset(42, 16, 0.1);
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let mut details = Vec::new();
    let mut pass = true;

    let uniform = MergedModel::new(experts.clone(), MaskPlacement::Encoder, 3, MergeHyper::default()).unwrap();
    let ens_gap = uniform
        .predict_probs(&graphs)
        .unwrap()
        .max_abs_diff(&ens_prob(&experts, &graphs).unwrap());
    pass &= ens_gap <= 1e-12;
    details.push(format!("identity masks, uniform gate vs probability ensemble: {ens_gap:.2e}"));

    let copies = vec![experts[1].clone(); 5];
    let soup = uniform_soup(&copies).unwrap();
    let soup_gap = predict_probs(&soup, &graphs)
        .unwrap()
        .max_abs_diff(&predict_probs(&experts[1], &graphs).unwrap());
    let param_gap = soup
        .params
        .iter()
        .zip(&experts[1].params)
        .map(|(a, b)| a.value.max_abs_diff(&b.value))
        .fold(0.0, f64::max);
    pass &= soup_gap <= 1e-12 && param_gap <= 1e-12;
    details.push(format!(
        "uniform soup of 5 copies vs original: outputs {soup_gap:.2e}, parameters {param_gap:.2e}"
    ));

    let mut k1_gap: f64 = 0.0;
    for trial in 0..5 {
        let model = random_merged(&experts, 1, 50 + trial);
        let w = model.gate_weights(&graphs).unwrap();
        let merged = model.predict_probs(&graphs).unwrap();
        for (i, g) in graphs.iter().enumerate() {
            let j = (0..w.cols()).find(|&j| w[(i, j)] > 0.0).unwrap();
            let own = predict_probs(&experts[j], &[g]).unwrap();
            let gap = merged
                .row(i)
                .iter()
                .zip(own.row(0))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            k1_gap = k1_gap.max(gap);
        }
    }
    pass &= k1_gap <= 1e-12;
    details.push(format!("k=1 merged output vs selected expert: {k1_gap:.2e}"));

    let same_model = hdh_divergence(&experts[0], &experts[0], &ds, &other).unwrap();
    let same_domain = hdh_divergence(&experts[0], &experts[2], &ds, &ds).unwrap();
    pass &= same_model == 0.0 && same_domain == 0.0;
    details.push(format!("divergence (f, f, D1, D2) = {same_model}, (f, g, D, D) = {same_domain}"));

    Outcome::new(
        pass,
        format!("ensemble {ens_gap:.1e}, soup {soup_gap:.1e}, k=1 {k1_gap:.1e}, divergence {same_model}/{same_domain}"),
        details,
    )
}

fn bitwise_equal(a: &GnnModel, b: &GnnModel) -> bool {
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    a.params.len() == b.params.len()
        && a.bn.len() == b.bn.len()
        && a.params.iter().zip(&b.params).all(|(x, y)| bits(&x.value) == bits(&y.value))
        && a.bn
            .iter()
            .zip(&b.bn)
            .all(|(x, y)| bits(&x.mean) == bits(&y.mean) && bits(&x.var) == bits(&y.var))
}

fn frozen_contracts() -> Outcome {
    let experts: Vec<GnnModel> = [Backbone::Gcn, Backbone::Gin, Backbone::Gat]
        .iter()
        .enumerate()
        .map(|(j, &k)| trained_expert(k, 6, 60 + j as u64))
        .collect();
    let snapshot = experts.clone();
    let cfg = GeneratorConfig {
        count: 8,
        nodes_min: 5,
        nodes_max: 8,
        epochs: 20,
        encoder_hidden: 8,
        ..GeneratorConfig::default()
    };
    let sets: Vec<GraphDataset> = experts
        .iter()
        .map(|e| run_generation(e, &cfg, "X").unwrap().0.dataset)
        .collect();
    let after_generation = experts.iter().zip(&snapshot).all(|(a, b)| bitwise_equal(a, b));

    let refs: Vec<&GraphDataset> = sets.iter().collect();
    let pool = GraphDataset::concat("pool", &refs).unwrap();
    let mut after_merge = true;
    for placement in [MaskPlacement::Classifier, MaskPlacement::Encoder] {
        let model = MergedModel::new(experts.clone(), placement, 2, MergeHyper::default()).unwrap();
        let train = MergeConfig {
            epochs: 3,
            batch_size: 8,
            ..MergeConfig::default()
        };
        let (trained, _) = merge_train(&model, &pool, &train).unwrap();
        after_merge &= trained
            .experts
            .iter()
            .zip(&snapshot)
            .all(|(m, b)| bitwise_equal(&m.expert, b));
    }
    after_merge &= experts.iter().zip(&snapshot).all(|(a, b)| bitwise_equal(a, b));
    Outcome::new(
        after_generation && after_merge,
        format!(
            "3 experts bitwise unchanged after generation: {after_generation}, after merging (both placements): {after_merge}"
        ),
        Vec::new(),
    )
}

/// Target-domain accuracies of one full source-free run.
struct RunScores {
    experts: Vec<(String, f64)>,
    avg_ptm: f64,
    ens_prob: f64,
    ogmm: f64,
}

fn run_pipeline(cfg: &ExperimentConfig) -> (RunScores, RunArtifacts) {
    let domains = build_domains(cfg).unwrap();
    let experts = train_roster(cfg, &domains).unwrap();
    let sets = synthesize(cfg, &experts).unwrap();
    let pool = pool_synthetic(&sets).unwrap();
    let (merged, _) = merge_experts(cfg, &experts, &pool).unwrap();
    let report = evaluate_run(cfg, &domains, &experts, &pool, &merged).unwrap();
    // percentage points, the unit the thresholds are stated in
    let acc = |name: &str| 100.0 * report.method(name).unwrap().accuracy;
    let scores = RunScores {
        experts: report.experts().map(|m| (m.method.clone(), 100.0 * m.accuracy)).collect(),
        avg_ptm: acc("Avg-PTM"),
        ens_prob: acc("Ens-Prob"),
        ogmm: acc("OGMM"),
    };
    (
        scores,
        RunArtifacts {
            models: experts.iter().map(|e| e.model().clone()).collect(),
            pool,
            target: domains.target().clone(),
            merged,
        },
    )
}

struct RunArtifacts {
    models: Vec<GnnModel>,
    pool: GraphDataset,
    target: GraphDataset,
    merged: MergedModel,
}

fn synthetic_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.eval.inverse_x = false;
    cfg.eval.soups = false;
    cfg
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end(first_run: &mut Option<RunArtifacts>) -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut best = Vec::new();
    let mut ens = Vec::new();
    let mut ogmm = Vec::new();
    for seed in 0..3 {
        let (s, artifacts) = run_pipeline(&synthetic_config(seed));
        let (best_id, best_acc) = s
            .experts
            .iter()
            .cloned()
            .fold((String::new(), f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        let mut line = format!("seed {seed}:");
        for (id, a) in &s.experts {
            let _ = write!(line, " {id} {a:.2}");
        }
        let _ = write!(
            line,
            " | best {best_id} {best_acc:.2}, Ens-Prob {:.2}, OGMM {:.2}",
            s.ens_prob, s.ogmm
        );
        details.push(line);
        best.push(best_acc);
        ens.push(s.ens_prob);
        ogmm.push(s.ogmm);
        if first_run.is_none() {
            *first_run = Some(artifacts);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let (best, ens, ogmm) = (mean(best), mean(ens), mean(ogmm));
    let beats_best = ogmm >= best + 2.0;
    let near_ens = ogmm >= ens - 2.0;
    details.push(format!(
        "mean OGMM {ogmm:.2} vs best expert + 2 = {:.2} ({}); vs Ens-Prob - 2 = {:.2} ({}); {secs:.0} s on one thread",
        best + 2.0,
        if beats_best { "met" } else { "not met" },
        ens - 2.0,
        if near_ens { "met" } else { "not met" },
    ));
    Outcome::new(
        beats_best && near_ens && secs < 600.0,
        format!("mean target acc: OGMM {ogmm:.2}, best expert {best:.2}, Ens-Prob {ens:.2} (3 seeds, {secs:.0} s)"),
        details,
    )
}

fn real_data() -> Outcome {
    let Some(dir) = std::env::var_os("GRAPHMERGE_MUTAG_DIR") else {
        return Outcome {
            verdict: Verdict::Skip,
            summary: "GRAPHMERGE_MUTAG_DIR not set; no MUTAG files available".into(),
            details: Vec::new(),
        };
    };
    let mut details = Vec::new();
    let mut ogmm = Vec::new();
    let mut avg = Vec::new();
    for seed in 0..5 {
        let mut cfg = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        cfg.data.tu_path = Some(dir.clone().into());
        cfg.experts = ["A", "B"]
            .iter()
            .flat_map(|d| {
                ["GCN", "GAT", "GIN"].iter().map(move |a| ExpertSpec {
                    arch: a.to_string(),
                    domain: d.to_string(),
                    seed: None,
                })
            })
            .collect();
        cfg.eval.inverse_x = false;
        cfg.eval.soups = false;
        let (s, _) = run_pipeline(&cfg);
        details.push(format!("seed {seed}: Avg-PTM {:.2}, OGMM {:.2}", s.avg_ptm, s.ogmm));
        ogmm.push(s.ogmm);
        avg.push(s.avg_ptm);
    }
    let (ogmm, avg) = (mean(ogmm), mean(avg));
    Outcome::new(
        ogmm > avg,
        format!("mean target acc over 5 seeds: OGMM {ogmm:.2}, Avg-PTM {avg:.2}"),
        details,
    )
}

fn mask_position(run: &RunArtifacts) -> Outcome {
    let mut details = vec![format!(
        "{:<10} {:>14} {:>12} {:>8} {:>10}",
        "placement", "masked params", "total params", "share %", "target acc"
    )];
    let labels = run.target.labels().unwrap();
    let graphs: Vec<&Graph> = run.target.graphs().iter().collect();
    let mut cl_share = f64::NAN;
    let mut completed = 0;
    for placement in [MaskPlacement::Classifier, MaskPlacement::Encoder] {
        let init = MergedModel::new(run.models.clone(), placement, run.merged.gate.k, run.merged.hyper).unwrap();
        let train = MergeConfig {
            seed: 3,
            ..MergeConfig::default()
        };
        let model = match merge_train(&init, &run.pool, &train) {
            Ok((m, _)) => m,
            Err(e) => {
                details.push(format!("{}: {e}", placement.label()));
                continue;
            }
        };
        completed += 1;
        let probs = model.predict_probs(&graphs).unwrap();
        let correct = (0..probs.rows()).filter(|&i| probs.argmax_row(i) == labels[i]).count();
        let (masked, total) = model.masked_parameter_share();
        let share = 100.0 * masked as f64 / total as f64;
        if placement == MaskPlacement::Classifier {
            cl_share = share;
        }
        details.push(format!(
            "{:<10} {masked:>14} {total:>12} {share:>8.2} {:>10.2}",
            placement.label(),
            100.0 * correct as f64 / labels.len() as f64
        ));
    }
    Outcome::new(
        completed == 2 && cl_share < 30.0,
        format!("both placements trained: {}; MaskCL masks {cl_share:.2}% of parameters (limit 25 + 5)", completed == 2),
        details,
    )
}

fn main() -> ExitCode {
    // the end-to-end runtime bound is stated for one core
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().unwrap();

    let mut first_run = None;
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("relaxation limit", Box::new(relaxation_limit)),
        ("gate contract", Box::new(gate_contract)),
        ("identity equivalences", Box::new(identity_equivalences)),
        ("frozen contracts", Box::new(frozen_contracts)),
        ("end-to-end synthetic generalization", Box::new(|| end_to_end(&mut first_run))),
        ("real-data directional check", Box::new(real_data)),
    ];
    let mut outcomes = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let outcome = run();
        report(i + 1, name, &outcome);
        outcomes.push(outcome.verdict);
    }
    let mask = match &first_run {
        Some(run) => mask_position(run),
        None => Outcome::new(false, "no synthetic run to reuse".into(), Vec::new()),
    };
    report(8, "mask-position study", &mask);
    outcomes.push(mask.verdict);

    let failed = outcomes.iter().filter(|&&v| v == Verdict::Fail).count();
    let skipped = outcomes.iter().filter(|&&v| v == Verdict::Skip).count();
    println!(
        "acceptance: {} passed, {failed} failed, {skipped} skipped",
        outcomes.len() - failed - skipped
    );
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn report(index: usize, name: &str, outcome: &Outcome) {
    for d in &outcome.details {
        println!("    {d}");
    }
    let tag = match outcome.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Skip => "SKIP",
    };
    println!("{tag} criterion {index} {name}: {}", outcome.summary);
}
