//! Fixtures for the kernel benchmarks in `benches/`.

use graphmerge_core::gnn::{pretrain, TrainConfig};
use graphmerge_core::graph::{synth_domain_dataset, SynthConfig};
use graphmerge_core::inversion::{run_generation, GeneratorConfig};
use graphmerge_core::merge::{MaskPlacement, MergeHyper, MergedModel};
use graphmerge_core::rng;
use graphmerge_core::{ArchitectureDescriptor, Backbone, GnnModel, GraphDataset, Tensor};

/// Square standard-normal matrix.
pub fn square(n: usize, seed: u64) -> Tensor {
    rng::standard_normal(&mut rng::stream(seed, 0), n, n)
}

/// Motif-task graphs at the source-domain sizes.
pub fn graphs(count: usize, edge_prob: f64, seed: u64) -> GraphDataset {
    synth_domain_dataset(seed, &SynthConfig::new(count, edge_prob)).unwrap()
}

/// An expert at the default hidden width, trained for a few epochs so its
/// BN moments are populated.
pub fn expert(kind: Backbone, seed: u64) -> GnnModel {
    let ds = graphs(64, 0.2, seed);
    let d = ArchitectureDescriptor::new(kind, ds.feature_dim(), 2).with_hidden(32);
    let m = GnnModel::init(d, &mut rng::stream(seed, 1));
    let cfg = TrainConfig {
        epochs: 3,
        seed,
        ..TrainConfig::default()
    };
    pretrain(&m, &ds, &cfg).unwrap().0
}

/// Generator settings at the default graph sizes with a configurable count.
pub fn generator_config(count: usize, epochs: usize) -> GeneratorConfig {
    GeneratorConfig {
        count,
        epochs,
        ..GeneratorConfig::default()
    }
}

/// Four experts (GCN and GIN, two of each) merged with identity masks.
pub fn merged(placement: MaskPlacement) -> MergedModel {
    let experts: Vec<GnnModel> = (0..4)
        .map(|j| expert([Backbone::Gcn, Backbone::Gin][j % 2], j as u64))
        .collect();
    MergedModel::new(experts, placement, 2, MergeHyper::default()).unwrap()
}

/// A small synthetic pool from one expert, for merge-step timings.
pub fn synthetic_pool(expert: &GnnModel, count: usize) -> GraphDataset {
    run_generation(expert, &generator_config(count, 5), "bench")
        .unwrap()
        .0
        .dataset
}
