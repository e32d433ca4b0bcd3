//! End-to-end experiment: domain data, expert pretraining, inversion,
//! merging, and evaluation against the baselines.
//!
//! Each stage exists twice: as an in-memory function and as a command that
//! reads its inputs from and writes its outputs to the run directory. Every
//! random draw comes from a stream derived from the global seed and a fixed
//! component ordinal, so stages and roster entries do not perturb each other.

mod config;
mod report;

pub use config::{
    DataConfig, EvalConfig, ExperimentConfig, ExpertSpec, GenerationConfig, MergeSection,
    PretrainConfig,
};
pub use report::{DivergenceRow, MethodKind, MethodRow, RunReport};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::baselines::{
    cross_error_matrix, ens_highconf, ens_prob, greedy_soup, inverse_x_baseline,
    pooled_hdh_divergence, uniform_soup,
};
use crate::error::{Error, Result};
use crate::gnn::{
    classification_metrics, evaluate, load_checkpoint, pretrain, save_checkpoint,
    ArchitectureDescriptor, Checkpoint, GnnModel, Metrics, TrainingMeta,
};
use crate::graph::{
    load_tu_dataset, read_dataset, split_by_edge_density, synth_domain_dataset, write_dataset,
    Graph, GraphDataset, MotifRule, SynthConfig,
};
use crate::inversion::{generate_for_experts, read_synthetic, write_synthetic, SyntheticSet};
use crate::merge::{load_merged, merge_synthetic, save_merged, MergeEpoch, MergedModel};
use crate::rng;
use crate::Tensor;

/// Component ordinals for seed derivation.
const DATA_STREAM: u32 = 0;
const PRETRAIN_STREAM: u32 = 1;
const GENERATE_STREAM: u32 = 2;
const MERGE_STREAM: u32 = 3;
const INVERSE_X_STREAM: u32 = 4;

/// Labelled domains in data order; the last is the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Domains {
    pub sets: Vec<GraphDataset>,
    /// Density cut points when the domains come from splitting one dataset.
    pub thresholds: Vec<f64>,
}

impl Domains {
    pub fn tags(&self) -> Vec<String> {
        self.sets.iter().map(|d| d.name.clone()).collect()
    }

    pub fn get(&self, tag: &str) -> Option<&GraphDataset> {
        self.sets.iter().find(|d| d.name == tag)
    }

    pub fn target(&self) -> &GraphDataset {
        self.sets.last().expect("at least two domains")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedExpert {
    pub id: String,
    pub spec: ExpertSpec,
    pub checkpoint: Checkpoint,
}

impl TrainedExpert {
    pub fn model(&self) -> &GnnModel {
        &self.checkpoint.model
    }
}

/// Synthetic ER domains, or the configured TU dataset split by edge density.
pub fn build_domains(cfg: &ExperimentConfig) -> Result<Domains> {
    let tags = cfg.domain_tags();
    if let Some(path) = &cfg.data.tu_path {
        let ds = load_tu_dataset(path)?;
        let split = split_by_edge_density(&ds, &cfg.data.split)?;
        let sets = split
            .domains
            .into_iter()
            .map(|d| {
                let mut set = d.dataset;
                set.name = d.tag;
                set
            })
            .collect();
        return Ok(Domains {
            sets,
            thresholds: split.thresholds,
        });
    }
    let d = &cfg.data;
    let sets = d
        .edge_probs
        .iter()
        .zip(&tags)
        .enumerate()
        .map(|(j, (&p, tag))| {
            let sc = SynthConfig {
                num_graphs: d.graphs_per_domain,
                nodes_min: d.nodes_min,
                nodes_max: d.nodes_max,
                edge_prob: p,
                feature_dim: d.feature_dim,
                motif: MotifRule::TrianglePendant,
            };
            let mut set = synth_domain_dataset(rng::derive_seed(cfg.seed, DATA_STREAM, j as u32), &sc)?;
            set.name = tag.clone();
            Ok(set)
        })
        .collect::<Result<_>>()?;
    Ok(Domains {
        sets,
        thresholds: Vec::new(),
    })
}

pub fn expert_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    cfg.experts[index]
        .seed
        .unwrap_or_else(|| rng::derive_seed(cfg.seed, PRETRAIN_STREAM, index as u32))
}

/// Trains every roster entry on its own domain only, in parallel.
pub fn train_roster(cfg: &ExperimentConfig, domains: &Domains) -> Result<Vec<TrainedExpert>> {
    cfg.experts
        .par_iter()
        .enumerate()
        .map(|(j, spec)| {
            let ds = domains
                .get(&spec.domain)
                .ok_or_else(|| Error::Config(format!("no domain {}", spec.domain)))?;
            let seed = expert_seed(cfg, j);
            let desc = ArchitectureDescriptor::new(spec.backbone()?, ds.feature_dim(), ds.num_classes())
                .with_hidden(cfg.pretrain.hidden);
            let init = GnnModel::init(desc, &mut rng::stream(seed, 1));
            let (model, _) = pretrain(&init, ds, &cfg.train_config(seed))?;
            Ok(TrainedExpert {
                id: spec.id(),
                spec: spec.clone(),
                checkpoint: Checkpoint {
                    model,
                    meta: TrainingMeta {
                        seed,
                        epochs: cfg.pretrain.epochs,
                        domain: spec.domain.clone(),
                    },
                },
            })
        })
        .collect()
}

fn split_experts(experts: &[TrainedExpert]) -> (Vec<GnnModel>, Vec<String>) {
    (
        experts.iter().map(|e| e.model().clone()).collect(),
        experts.iter().map(|e| e.id.clone()).collect(),
    )
}

/// One synthetic set per expert.
pub fn synthesize(cfg: &ExperimentConfig, experts: &[TrainedExpert]) -> Result<Vec<SyntheticSet>> {
    let (models, ids) = split_experts(experts);
    let gen = cfg.generator_config(rng::derive_seed(cfg.seed, GENERATE_STREAM, 0));
    generate_for_experts(&models, &ids, &gen)
}

/// Trains masks and gate on the pooled synthetic graphs.
pub fn merge_experts(
    cfg: &ExperimentConfig,
    experts: &[TrainedExpert],
    pool: &GraphDataset,
) -> Result<(MergedModel, Vec<MergeEpoch>)> {
    let mut setup = cfg.merge_setup();
    setup.train.seed = rng::derive_seed(cfg.seed, MERGE_STREAM, 0);
    let (models, _) = split_experts(experts);
    merge_synthetic(models, &[pool], &setup)
}

pub fn pool_synthetic(sets: &[SyntheticSet]) -> Result<GraphDataset> {
    let parts: Vec<&GraphDataset> = sets.iter().map(|s| &s.dataset).collect();
    GraphDataset::concat("pool", &parts)
}

fn metrics_from_probs(probs: &Tensor, ds: &GraphDataset) -> Result<Metrics> {
    let preds: Vec<usize> = (0..probs.rows()).map(|i| probs.argmax_row(i)).collect();
    classification_metrics(&preds, &ds.labels()?, ds.num_classes())
}

/// Scores every expert, baseline, and the merged model on the target domain,
/// plus the cross-domain diagnostics.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    domains: &Domains,
    experts: &[TrainedExpert],
    pool: &GraphDataset,
    merged: &MergedModel,
) -> Result<RunReport> {
    let target = domains.target();
    let graphs: Vec<&Graph> = target.graphs().iter().collect();
    let (models, ids) = split_experts(experts);
    let mut rows = Vec::new();
    let mut push = |method: String, kind: MethodKind, m: Metrics| {
        rows.push(MethodRow {
            method,
            kind,
            accuracy: m.accuracy,
            precision: m.macro_precision,
        })
    };

    let expert_metrics: Vec<Metrics> = models
        .par_iter()
        .map(|m| evaluate(m, target))
        .collect::<Result<_>>()?;
    for (id, m) in ids.iter().zip(&expert_metrics) {
        push(id.clone(), MethodKind::Expert, *m);
    }
    let n = expert_metrics.len() as f64;
    push(
        "Avg-PTM".into(),
        MethodKind::Baseline,
        Metrics {
            accuracy: expert_metrics.iter().map(|m| m.accuracy).sum::<f64>() / n,
            macro_precision: expert_metrics.iter().map(|m| m.macro_precision).sum::<f64>() / n,
        },
    );
    push(
        "Ens-Prob".into(),
        MethodKind::Baseline,
        metrics_from_probs(&ens_prob(&models, &graphs)?, target)?,
    );
    push(
        "Ens-HighConf".into(),
        MethodKind::Baseline,
        metrics_from_probs(&ens_highconf(&models, &graphs)?, target)?,
    );

    if cfg.eval.soups {
        let mut groups: BTreeMap<&str, Vec<GnnModel>> = BTreeMap::new();
        for m in &models {
            groups.entry(m.descriptor.kind.name()).or_default().push(m.clone());
        }
        for (arch, group) in &groups {
            push(
                format!("Uniform-Soup-{arch}"),
                MethodKind::Baseline,
                evaluate(&uniform_soup(group)?, target)?,
            );
            // validated on synthetic graphs: source data stays unavailable
            let greedy = greedy_soup(group, pool)?;
            push(
                format!("Greedy-Soup-{arch}"),
                MethodKind::Baseline,
                evaluate(&greedy.model, target)?,
            );
        }
    }

    if cfg.eval.inverse_x {
        let gen = cfg.generator_config(rng::derive_seed(cfg.seed, INVERSE_X_STREAM, 0));
        let mut setup = cfg.merge_setup();
        setup.train.seed = rng::derive_seed(cfg.seed, INVERSE_X_STREAM, 1);
        let ix = inverse_x_baseline(&models, &ids, &gen, &setup)?;
        push(
            "Inverse-X".into(),
            MethodKind::Baseline,
            metrics_from_probs(&ix.model.predict_probs(&graphs)?, target)?,
        );
    }

    push(
        "OGMM".into(),
        MethodKind::Merged,
        metrics_from_probs(&merged.predict_probs(&graphs)?, target)?,
    );

    let named: Vec<(String, GnnModel)> = ids.iter().cloned().zip(models.iter().cloned()).collect();
    let tagged: Vec<(String, &GraphDataset)> = domains.sets.iter().map(|d| (d.name.clone(), d)).collect();
    let cross_error = cross_error_matrix(&named, &tagged)?;

    let mut divergence = Vec::new();
    for a in 0..domains.sets.len() {
        for b in a + 1..domains.sets.len() {
            divergence.push(DivergenceRow {
                a: domains.sets[a].name.clone(),
                b: domains.sets[b].name.clone(),
                lower_bound: pooled_hdh_divergence(&models, &domains.sets[a], &domains.sets[b])?,
            });
        }
    }

    Ok(RunReport {
        target: target.name.clone(),
        methods: rows,
        cross_error,
        divergence,
        config: cfg.clone(),
    })
}

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn domain(&self, tag: &str) -> PathBuf {
        self.root.join("data").join(format!("{tag}.txt"))
    }

    pub fn domain_index(&self) -> PathBuf {
        self.root.join("data").join("domains.txt")
    }

    /// Relative to the run root, as stored in the merged-model file.
    pub fn expert_rel(id: &str) -> PathBuf {
        PathBuf::from("experts").join(format!("{id}.ckpt"))
    }

    pub fn expert(&self, id: &str) -> PathBuf {
        self.root.join(Self::expert_rel(id))
    }

    pub fn synthetic(&self, id: &str) -> PathBuf {
        self.root.join("synthetic").join(format!("{id}.txt"))
    }

    pub fn pool(&self) -> PathBuf {
        self.root.join("synthetic").join("pool.txt")
    }

    pub fn merged(&self) -> PathBuf {
        self.root.join("merged.txt")
    }

    pub fn merge_history(&self) -> PathBuf {
        self.root.join("merge_history.csv")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }

    pub fn report_text(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn cross_error_csv(&self) -> PathBuf {
        self.root.join("cross_error.csv")
    }

    pub fn divergence_csv(&self) -> PathBuf {
        self.root.join("divergence.csv")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.txt")
    }

    pub fn config_echo(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Rewrites this stage's line in the timings file, keeping the others.
fn record_time(paths: &RunPaths, stage: &str, secs: f64) -> Result<()> {
    let path = paths.timings();
    let mut lines: BTreeMap<String, String> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(&path) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once(' ') {
                lines.insert(k.to_string(), v.to_string());
            }
        }
    }
    lines.insert(stage.to_string(), format!("{secs:.3}"));
    ensure_parent(&path)?;
    let body: String = lines.iter().map(|(k, v)| format!("{k} {v}\n")).collect();
    fs::write(path, body)?;
    Ok(())
}

fn timed<T>(paths: &RunPaths, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f()?;
    record_time(paths, stage, start.elapsed().as_secs_f64())?;
    Ok(out)
}

/// Writes one dataset file per domain plus an index of tags, sizes, and
/// density cut points.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Domains> {
    let paths = RunPaths::new(&cfg.out_dir);
    timed(&paths, "gen-data", || {
        let domains = build_domains(cfg)?;
        for d in &domains.sets {
            let p = paths.domain(&d.name);
            ensure_parent(&p)?;
            write_dataset(&p, d)?;
        }
        let mut index = String::new();
        for d in &domains.sets {
            index.push_str(&format!(
                "domain {} graphs={} mean_edge_ratio={:?}\n",
                d.name,
                d.len(),
                d.mean_edge_ratio()
            ));
        }
        for t in &domains.thresholds {
            index.push_str(&format!("threshold {t:?}\n"));
        }
        fs::write(paths.domain_index(), index)?;
        fs::write(paths.config_echo(), cfg.to_toml()?)?;
        Ok(domains)
    })
}

pub fn load_domains(cfg: &ExperimentConfig) -> Result<Domains> {
    let paths = RunPaths::new(&cfg.out_dir);
    let sets = cfg
        .domain_tags()
        .iter()
        .map(|t| {
            let mut ds = read_dataset(paths.domain(t))?;
            ds.name = t.clone();
            Ok(ds)
        })
        .collect::<Result<_>>()?;
    let thresholds = match fs::read_to_string(paths.domain_index()) {
        Ok(text) => text
            .lines()
            .filter_map(|l| l.strip_prefix("threshold "))
            .map(|v| v.parse().map_err(|_| Error::Corrupt(format!("bad threshold {v}"))))
            .collect::<Result<_>>()?,
        Err(_) => Vec::new(),
    };
    Ok(Domains { sets, thresholds })
}

pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<TrainedExpert>> {
    let paths = RunPaths::new(&cfg.out_dir);
    let domains = load_domains(cfg)?;
    timed(&paths, "pretrain", || {
        let experts = train_roster(cfg, &domains)?;
        for e in &experts {
            let p = paths.expert(&e.id);
            ensure_parent(&p)?;
            save_checkpoint(&p, &e.checkpoint)?;
        }
        Ok(experts)
    })
}

pub fn load_experts(cfg: &ExperimentConfig) -> Result<Vec<TrainedExpert>> {
    let paths = RunPaths::new(&cfg.out_dir);
    cfg.experts
        .iter()
        .map(|spec| {
            let id = spec.id();
            let checkpoint = load_checkpoint(paths.expert(&id))?;
            Ok(TrainedExpert {
                id,
                spec: spec.clone(),
                checkpoint,
            })
        })
        .collect()
}

pub fn cmd_invert(cfg: &ExperimentConfig) -> Result<Vec<SyntheticSet>> {
    let paths = RunPaths::new(&cfg.out_dir);
    let experts = load_experts(cfg)?;
    timed(&paths, "invert", || {
        let sets = synthesize(cfg, &experts)?;
        for s in &sets {
            let p = paths.synthetic(&s.provenance.expert);
            ensure_parent(&p)?;
            write_synthetic(&p, s)?;
        }
        write_dataset(paths.pool(), &pool_synthetic(&sets)?)?;
        Ok(sets)
    })
}

pub fn load_synthetic(cfg: &ExperimentConfig) -> Result<Vec<SyntheticSet>> {
    let paths = RunPaths::new(&cfg.out_dir);
    cfg.experts
        .iter()
        .map(|s| read_synthetic(paths.synthetic(&s.id())))
        .collect()
}

fn read_pool(paths: &RunPaths) -> Result<GraphDataset> {
    let mut pool = read_dataset(paths.pool())?;
    pool.name = "pool".into();
    Ok(pool)
}

pub fn cmd_merge(cfg: &ExperimentConfig) -> Result<MergedModel> {
    let paths = RunPaths::new(&cfg.out_dir);
    let experts = load_experts(cfg)?;
    let pool = read_pool(&paths)?;
    timed(&paths, "merge", || {
        let (merged, history) = merge_experts(cfg, &experts, &pool)?;
        let rel: Vec<PathBuf> = experts.iter().map(|e| RunPaths::expert_rel(&e.id)).collect();
        save_merged(paths.merged(), &merged, &rel)?;
        fs::write(paths.merge_history(), report::history_csv(&history)?)?;
        Ok(merged)
    })
}

pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<RunReport> {
    let paths = RunPaths::new(&cfg.out_dir);
    let domains = load_domains(cfg)?;
    let experts = load_experts(cfg)?;
    let pool = read_pool(&paths)?;
    let (merged, _) = load_merged(paths.merged())?;
    for (m, e) in merged.experts.iter().zip(&experts) {
        if &m.expert != e.model() {
            return Err(Error::Incompatible(format!(
                "merged model's copy of {} differs from its checkpoint",
                e.id
            )));
        }
    }
    timed(&paths, "eval", || {
        let report = evaluate_run(cfg, &domains, &experts, &pool, &merged)?;
        fs::write(paths.report_csv(), report.methods_csv()?)?;
        fs::write(paths.cross_error_csv(), report.cross_error_csv()?)?;
        fs::write(paths.divergence_csv(), report.divergence_csv()?)?;
        fs::write(paths.report_text(), report.to_text()?)?;
        Ok(report)
    })
}

/// All stages in order, each reading what the previous one wrote.
pub fn cmd_pipeline(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<RunReport> {
    progress("gen-data");
    cmd_gen_data(cfg)?;
    progress("pretrain");
    cmd_pretrain(cfg)?;
    progress("invert");
    cmd_invert(cfg)?;
    progress("merge");
    cmd_merge(cfg)?;
    progress("eval");
    cmd_eval(cfg)
}
