//! Auto-decoder training of the grasp-distance network.
//!
//! Every record is identified by a hash of its contents. The validation
//! split, the per-epoch visiting order and the augmentation draws are all
//! functions of (seed, epoch, record hash), so training does not depend on
//! the order in which records are supplied.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grasp::{DatasetRecord, GraspManifold, GraspOracle};
use crate::model::{Architecture, FieldModel};
use crate::optim::{Adam, AdamParams};
use crate::se3::{random_rotation, ControlPointSet, Pose, Vec3};
use crate::seeds::hash_words;

const SPLIT_TAG: u64 = 0x5350_4c49_54;
const ORDER_TAG: u64 = 0x4f52_4445_52;
const AUGMENT_TAG: u64 = 0x4155_474d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub width: usize,
    pub latent_dim: usize,
    pub learning_rate: f64,
    pub code_learning_rate: f64,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rates are multiplied by this factor after every epoch.
    pub lr_decay: f64,
    pub augmentation_probability: f64,
    /// Oracle sample count used to relabel augmented queries.
    pub augmentation_density: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 5,
            width: 256,
            latent_dim: 64,
            learning_rate: 1e-3,
            code_learning_rate: 1e-3,
            adam: AdamParams::default(),
            batch_size: 256,
            epochs: 40,
            lr_decay: 0.92,
            augmentation_probability: 0.7,
            augmentation_density: 2048,
            validation_fraction: 0.1,
            seed: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.code_learning_rate > 0.0) {
            return Err(invalid("learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.augmentation_probability) {
            return Err(invalid("augmentation probability must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation fraction must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.augmentation_density == 0 {
            return Err(invalid("batch size, epochs and augmentation density must be at least 1"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(invalid("lr_decay must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn architecture(&self, outputs: usize) -> Architecture {
        Architecture {
            hidden: self.hidden,
            width: self.width,
            latent_dim: self.latent_dim,
            outputs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-record L1 loss over the epoch's (possibly augmented) batches.
    pub train_l1: f64,
    /// Mean per-record L1 loss on the held-out records.
    pub val_l1: f64,
    /// Mean absolute error of the mean distance on the held-out records.
    pub val_mean_error: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: FieldModel,
    pub curve: Vec<EpochMetrics>,
    pub train_records: usize,
    pub validation_records: usize,
}

impl TrainOutput {
    pub fn final_metrics(&self) -> EpochMetrics {
        *self.curve.last().expect("at least one epoch")
    }
}

pub fn curve_csv(curve: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_l1,val_l1,val_mean_error\n");
    for m in curve {
        out.push_str(&format!("{},{},{},{}\n", m.epoch, m.train_l1, m.val_l1, m.val_mean_error));
    }
    out
}

pub fn record_key(record: &DatasetRecord) -> u64 {
    let q = record.query.to_array();
    hash_words(
        std::iter::once(record.object_id as u64)
            .chain(q.iter().map(|v| v.to_bits()))
            .chain(record.target_distances.iter().map(|v| v.to_bits())),
    )
}

fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Indices of (training, validation) records.
pub fn split_records(records: &[DatasetRecord], config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    (0..records.len()).partition(|&i| {
        unit_interval(hash_words([config.seed, SPLIT_TAG, record_key(&records[i])])) >= config.validation_fraction
    })
}

/// Held-out quality of `model` on `records`: (mean L1, mean absolute error
/// of the mean distance).
pub fn evaluate(model: &FieldModel, records: &[DatasetRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Ok((0.0, 0.0));
    }
    let n = model.architecture().outputs;
    let mut l1 = 0.0;
    let mut mean_err = 0.0;
    for chunk in records.chunks(1024) {
        let x = input_matrix(model, chunk.iter().map(|r| (r.object_id, r.query)))?;
        let out = model.forward_batch(x)?;
        for (row, r) in out.rows().into_iter().zip(chunk) {
            if r.target_distances.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: r.target_distances.len(),
                });
            }
            let mut pred_sum = 0.0;
            for (p, t) in row.iter().zip(&r.target_distances) {
                l1 += (p - t).abs();
                pred_sum += p;
            }
            mean_err += ((pred_sum - r.target_distances.iter().sum::<f64>()) / n as f64).abs();
        }
    }
    let count = records.len() as f64;
    Ok((l1 / count, mean_err / count))
}

fn input_matrix(model: &FieldModel, rows: impl ExactSizeIterator<Item = (usize, Pose)>) -> Result<Array2<f64>> {
    let b = rows.len();
    let mut data = Vec::with_capacity(b * model.architecture().input_dim());
    for (id, q) in rows {
        data.extend(model.input_row(id, &q.to_array())?);
    }
    Ok(Array2::from_shape_vec((b, model.architecture().input_dim()), data).expect("input shape"))
}

/// A training sample after the augmentation draw for this epoch. With the
/// augmentation probability, the query is rotated about its manifold's
/// centroid by a uniform random rotation and relabeled by the oracle.
fn training_sample(
    record: &DatasetRecord,
    key: u64,
    epoch: usize,
    oracles: &[GraspOracle],
    centroids: &[Vec3],
    config: &TrainConfig,
) -> (usize, Pose, Vec<f64>) {
    if config.augmentation_probability > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_words([config.seed, AUGMENT_TAG, epoch as u64, key]));
        if rng.random::<f64>() < config.augmentation_probability {
            let rotation = random_rotation(&mut rng);
            let query = record.query.rotated_about(&centroids[record.object_id], &rotation);
            let target = oracles[record.object_id].nearest(&query).1;
            return (record.object_id, query, target);
        }
    }
    (record.object_id, record.query, record.target_distances.clone())
}

/// Trains a fresh model on `records`. `manifolds[k]` relabels augmented
/// queries of object `k` and may be empty when augmentation is disabled.
pub fn train(
    records: &[DatasetRecord],
    manifolds: &[GraspManifold],
    cps: &ControlPointSet,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let outputs = records[0].target_distances.len();
    if let Some(r) = records.iter().find(|r| r.target_distances.len() != outputs) {
        return Err(Error::LengthMismatch {
            expected: outputs,
            actual: r.target_distances.len(),
        });
    }
    let num_objects = records.iter().map(|r| r.object_id).max().expect("nonempty") + 1;
    let (oracles, centroids) = if config.augmentation_probability > 0.0 {
        if manifolds.len() < num_objects {
            return Err(invalid(format!(
                "augmentation needs a manifold for each of {num_objects} objects, got {}",
                manifolds.len()
            )));
        }
        let oracles = manifolds
            .iter()
            .map(|m| GraspOracle::new(m, cps, config.augmentation_density))
            .collect::<Result<Vec<_>>>()?;
        (oracles, manifolds.iter().map(GraspManifold::centroid).collect())
    } else {
        (Vec::new(), Vec::new())
    };
    let (train_idx, val_idx) = split_records(records, config);
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let val_records: Vec<DatasetRecord> = val_idx.iter().map(|&i| records[i].clone()).collect();
    let keys: Vec<u64> = records.iter().map(record_key).collect();

    let arch = config.architecture(outputs);
    let mut model = FieldModel::new(arch, num_objects, config.seed)?;
    let mut param_adam = Adam::new(model.params().len(), config.adam);
    let mut code_adam = Adam::new(model.codes().len(), config.adam);
    let mut param_grad = vec![0.0; model.params().len()];
    let mut code_grad = vec![0.0; model.codes().len()];
    let d = arch.latent_dim;
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let decay = config.lr_decay.powi(epoch as i32);
        let mut order: Vec<(u64, u64, usize)> = train_idx
            .iter()
            .map(|&i| (hash_words([config.seed, ORDER_TAG, epoch as u64, keys[i]]), keys[i], i))
            .collect();
        order.sort_unstable_by_key(|&(h, k, _)| (h, k));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<(usize, Pose, Vec<f64>)> = batch
                .par_iter()
                .map(|&(_, key, i)| training_sample(&records[i], key, epoch, &oracles, &centroids, config))
                .collect();
            let x = input_matrix(&model, samples.iter().map(|(id, q, _)| (*id, *q)))?;
            let targets = Array2::from_shape_vec(
                (samples.len(), outputs),
                samples.iter().flat_map(|(_, _, t)| t.iter().copied()).collect(),
            )
            .expect("target shape");
            param_grad.iter_mut().for_each(|g| *g = 0.0);
            code_grad.iter_mut().for_each(|g| *g = 0.0);
            let (loss, d_in) = model.l1_batch(x, targets.view(), &mut param_grad)?;
            epoch_loss += loss;
            for (row, (id, _, _)) in d_in.rows().into_iter().zip(&samples) {
                for (g, v) in code_grad[id * d..(id + 1) * d].iter_mut().zip(row.iter()) {
                    *g += v;
                }
            }
            let scale = 1.0 / samples.len() as f64;
            param_grad.iter_mut().for_each(|g| *g *= scale);
            code_grad.iter_mut().for_each(|g| *g *= scale);
            param_adam.step(model.params_mut(), &param_grad, config.learning_rate * decay);
            code_adam.step(model.codes_mut(), &code_grad, config.code_learning_rate * decay);
        }
        let (val_l1, val_mean_error) = evaluate(&model, &val_records)?;
        let metrics = EpochMetrics {
            epoch,
            train_l1: epoch_loss / train_idx.len() as f64,
            val_l1,
            val_mean_error,
        };
        log::info!(
            "epoch {epoch}: train_l1 {:.5} val_l1 {:.5} val_mean_error {:.5}",
            metrics.train_l1,
            metrics.val_l1,
            metrics.val_mean_error
        );
        curve.push(metrics);
    }
    Ok(TrainOutput {
        model,
        curve,
        train_records: train_idx.len(),
        validation_records: val_idx.len(),
    })
}
