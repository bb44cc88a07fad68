//! Minibatch training and evaluation of the full pipeline.

use std::fmt;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::model::{Macas, Sample};
use crate::optim::{Adam, AdamConfig};
use crate::pipeline::checkpoint::Checkpoint;
use crate::pipeline::config::TrainConfig;
use crate::pipeline::dataset::Dataset;
use crate::pipeline::featurize::{FitReport, Featurizer};
use crate::pipeline::metrics::{compute_metrics, MetricsReport};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} train_loss={:.6}", self.epoch, self.train_loss)?;
        if let Some(v) = self.val_weighted_f1 {
            write!(f, " val_weighted_f1={v:.4}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Accuracy on the training set in evaluation mode after the last epoch.
    pub train_accuracy: f64,
    pub fit: FitReport,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 31)
}

/// Argmax class of every sample, evaluation mode.
pub fn predict_classes(model: &Macas, samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| Ok(model.predict(s)?.argmax_rows()[0]))
        .collect()
}

fn featurize_all(f: &Featurizer, data: &Dataset) -> Result<Vec<Sample>> {
    data.records.par_iter().map(|r| f.featurize(&r.text)).collect()
}

fn targets_for(data: &Dataset, labels: &[String]) -> Result<Vec<usize>> {
    data.records
        .iter()
        .map(|r| {
            labels
                .iter()
                .position(|l| *l == r.label)
                .ok_or_else(|| Error::Input(format!("label {:?} is absent from the label map", r.label)))
        })
        .collect()
}

/// Loss and parameter gradients of one sample, the loss scaled by `weight`.
fn sample_grads(
    model: &Macas,
    sample: &Sample,
    target: usize,
    weight: f64,
    seed: u64,
) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut g = Graph::training(seed);
    let x = sample.record(&mut g, false)?;
    let f = model.forward(&mut g, &x)?;
    let ce = g.softmax_cross_entropy(f.logits, &[target])?;
    let loss = g.scale(ce, weight)?;
    let value = g.value(ce).data()[0];
    let grads = g.backward(loss)?;
    Ok((value, model.store.ids().map(|id| grads.param(id).cloned()).collect()))
}

fn add_grads(acc: &mut [Option<Tensor>], other: Vec<Option<Tensor>>) {
    for (a, b) in acc.iter_mut().zip(other) {
        match (a.as_mut(), b) {
            (Some(a), Some(b)) => {
                for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            (None, Some(b)) => *a = Some(b),
            _ => {}
        }
    }
}

/// Fits the featurizer on `train`, then trains the model with Adam on
/// minibatches of `batch_size`. The gradient of a batch is the mean over
/// its samples, summed in sample order so results do not depend on thread
/// scheduling. `val`, when given, is scored after every epoch.
pub fn train(cfg: &TrainConfig, train: &Dataset, val: Option<&Dataset>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let labels = train.labels.clone();
    let mut model_cfg = cfg.model.clone();
    model_cfg.num_classes = labels.len();
    let targets = targets_for(train, &labels)?;
    let val_targets = val.map(|v| targets_for(v, &labels)).transpose()?;

    let (featurizer, fit) = Featurizer::fit(train, cfg)?;
    let samples = featurize_all(&featurizer, train)?;
    let val_samples = val.map(|v| featurize_all(&featurizer, v)).transpose()?;

    let mut model = Macas::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    info!(
        "training {} samples, {} parameters, {}",
        samples.len(),
        model.store.num_scalars(),
        cfg.echo()
    );

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let weight = 1.0 / batch.len() as f64;
            let results: Vec<Result<(f64, Vec<Option<Tensor>>)>> = batch
                .par_iter()
                .map(|&i| sample_grads(&model, &samples[i], targets[i], weight, mix(cfg.seed, epoch as u64, i as u64 + 1)))
                .collect();
            let mut acc: Vec<Option<Tensor>> = vec![None; model.store.len()];
            for r in results {
                let (loss, grads) = r.map_err(|e| match e {
                    Error::NonFinite { op } => {
                        Error::Diverged(format!("non-finite value in {op} at epoch {epoch}, batch {b}"))
                    }
                    other => other,
                })?;
                total += loss;
                add_grads(&mut acc, grads);
            }
            adam.step(&mut model.store, &acc);
        }
        let train_loss = total / samples.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged(format!("training loss is {train_loss} at epoch {epoch}")));
        }
        let val_weighted_f1 = match (&val_samples, &val_targets) {
            (Some(s), Some(t)) if !s.is_empty() => {
                let pred = predict_classes(&model, s)?;
                Some(compute_metrics(t, &pred, &labels)?.weighted_f1)
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch,
            train_loss,
            val_weighted_f1,
        };
        info!("{entry}");
        log.push(entry);
    }

    let pred = predict_classes(&model, &samples)?;
    let correct = pred.iter().zip(&targets).filter(|(p, t)| p == t).count();
    let train_accuracy = correct as f64 / samples.len() as f64;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            labels,
            featurizer,
            model,
        },
        log,
        train_accuracy,
        fit,
    })
}

/// Scores a checkpoint on a labelled split.
pub fn evaluate(ckpt: &Checkpoint, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let targets = targets_for(data, &ckpt.labels)?;
    let samples = featurize_all(&ckpt.featurizer, data)?;
    let pred = predict_classes(&ckpt.model, &samples)?;
    compute_metrics(&targets, &pred, &ckpt.labels)
}
