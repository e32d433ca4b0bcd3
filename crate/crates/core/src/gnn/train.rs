use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{GnnModel, GraphBatch};
use crate::autodiff::{AdamW, AdamWConfig, Mode, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::rng;

/// Rows per tape when evaluating; chunks run in parallel.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's graphs.
    pub loss: f64,
    /// Train-mode accuracy accumulated over the epoch's batches.
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
}

/// Mini-batch AdamW on cross-entropy, reshuffling every epoch from a stream
/// derived from `config.seed`.
pub fn pretrain(
    model: &GnnModel,
    ds: &GraphDataset,
    config: &TrainConfig,
) -> Result<(GnnModel, Vec<EpochStats>)> {
    if ds.is_empty() {
        return Err(Error::invalid(format!("cannot train on empty dataset {}", ds.name)));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    model.check_input_dim(ds.feature_dim())?;
    let labels = ds.labels()?;
    if let Some(&label) = labels.iter().find(|&&l| l >= model.descriptor.num_classes) {
        return Err(Error::Label {
            label,
            classes: model.descriptor.num_classes,
        });
    }

    let mut model = model.clone();
    let mut opt = AdamW::new(config.optimizer, model.params.iter().map(|p| &p.value));
    let mut shuffle_rng = rng::stream(config.seed, 0);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&Graph> = chunk.iter().map(|&i| &ds.graphs()[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let mut tape = Tape::new();
            let params = model.params_on_tape(&mut tape);
            let batch = GraphBatch::from_graphs(&mut tape, &graphs)?;
            let out = model.forward_on_tape(&mut tape, &params, &batch, Mode::Train)?;
            let loss = tape.cross_entropy(out.logits, &y)?;
            let loss_value = tape.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NonFinite("pretrain loss"));
            }
            tape.backward(loss)?;

            let logits = tape.value(out.logits);
            correct += (0..y.len()).filter(|&i| logits.argmax_row(i) == y[i]).count();
            loss_sum += loss_value * y.len() as f64;

            let grads: Vec<Tensor> = params.iter().map(|&v| tape.grad(v)).collect();
            let mut values: Vec<&mut Tensor> = model.params.iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut values, &grads)?;
            for (stats, update) in model.bn.iter_mut().zip(out.bn_updates) {
                if let Some(u) = update {
                    *stats = u;
                }
            }
        }
        history.push(EpochStats {
            epoch,
            loss: loss_sum / ds.len() as f64,
            accuracy: correct as f64 / ds.len() as f64,
        });
    }
    Ok((model, history))
}

/// Eval-mode class probabilities, one row per graph.
pub fn predict_probs(model: &GnnModel, graphs: &[&Graph]) -> Result<Tensor> {
    if graphs.is_empty() {
        return Err(Error::invalid("no graphs to predict"));
    }
    let parts: Vec<Tensor> = graphs
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| model.logits(chunk).map(|l| l.softmax_rows()))
        .collect::<Result<_>>()?;
    let c = parts[0].cols();
    let data: Vec<f64> = parts.into_iter().flat_map(Tensor::into_data).collect();
    Tensor::from_vec(graphs.len(), c, data)
}

pub fn evaluate(model: &GnnModel, ds: &GraphDataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::invalid(format!("cannot evaluate on empty dataset {}", ds.name)));
    }
    let graphs: Vec<&Graph> = ds.graphs().iter().collect();
    let probs = predict_probs(model, &graphs)?;
    let preds: Vec<usize> = (0..probs.rows()).map(|i| probs.argmax_row(i)).collect();
    classification_metrics(&preds, &ds.labels()?, model.descriptor.num_classes)
}

/// Accuracy and macro precision; a class never predicted contributes zero
/// precision.
pub fn classification_metrics(preds: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(Error::invalid("metrics of an empty prediction set"));
    }
    if preds.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if classes == 0 {
        return Err(Error::invalid("zero classes"));
    }
    let mut tp = vec![0usize; classes];
    let mut predicted = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= classes || y >= classes {
            return Err(Error::Label {
                label: p.max(y),
                classes,
            });
        }
        predicted[p] += 1;
        if p == y {
            tp[p] += 1;
        }
    }
    let correct: usize = tp.iter().sum();
    let precision_sum: f64 = tp
        .iter()
        .zip(&predicted)
        .map(|(&t, &n)| if n == 0 { 0.0 } else { t as f64 / n as f64 })
        .sum();
    Ok(Metrics {
        accuracy: correct as f64 / preds.len() as f64,
        macro_precision: precision_sum / classes as f64,
    })
}
