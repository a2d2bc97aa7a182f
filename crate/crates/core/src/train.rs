//! Adam under a cyclic cosine learning-rate schedule, snapshotting the
//! parameters at the end of every cycle.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::thread;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::AugmentRanges;
use crate::data::Dataset;
use crate::error::{arg_err, Error, Result};
use crate::model::ModelParams;
use crate::ops::{
    cross_entropy_loss, one_hot, regularization_grad, softmax_ce_grad, Mode,
};
use crate::params::LayerParams;
use crate::tensor::{c, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassWeighting {
    None,
    InverseFrequency,
}

impl FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ClassWeighting::None),
            "inverse-frequency" | "inverse" => Ok(ClassWeighting::InverseFrequency),
            _ => Err(arg_err!("unknown class weighting {s:?}")),
        }
    }
}

impl fmt::Display for ClassWeighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassWeighting::None => "none",
            ClassWeighting::InverseFrequency => "inverse-frequency",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub cycles: usize,
    pub seed: u64,
    pub class_weights: ClassWeighting,
    pub augment: bool,
    pub augment_ranges: AugmentRanges,
    pub l1: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_epochs: 25,
            batch_size: 8,
            initial_lr: 1e-4,
            cycles: 5,
            seed: 0,
            class_weights: ClassWeighting::InverseFrequency,
            augment: false,
            augment_ranges: AugmentRanges::default(),
            l1: 1e-5,
            l2: 1e-3,
        }
    }
}

impl TrainConfig {
    /// Epochs per cycle, `⌈T/M⌉`.
    pub fn cycle_length(&self) -> usize {
        self.total_epochs.div_ceil(self.cycles.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles < 1 || self.total_epochs < self.cycles {
            return Err(arg_err!(
                "need total_epochs >= cycles >= 1, got T={} M={}",
                self.total_epochs,
                self.cycles
            ));
        }
        // With ⌈T/M⌉-long cycles the schedule may end before M cycles start
        // (e.g. T=11, M=5), which would leave fewer than M snapshots.
        let started = self.total_epochs.div_ceil(self.cycle_length());
        if started != self.cycles {
            return Err(arg_err!(
                "T={} and M={} give only {started} cycles of {} epochs",
                self.total_epochs,
                self.cycles,
                self.cycle_length()
            ));
        }
        if self.batch_size < 1 {
            return Err(arg_err!("batch_size must be at least 1"));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(arg_err!("initial learning rate must be positive"));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return Err(arg_err!("regularization weights must be non-negative"));
        }
        if self.augment {
            self.augment_ranges.validate()?;
        }
        Ok(())
    }

    /// Whether a snapshot is taken at the end of epoch `t`.
    pub fn is_cycle_end(&self, t: usize) -> bool {
        t % self.cycle_length() == 0 || t == self.total_epochs
    }
}

/// Learning rate for epoch `t` (1-based).
pub fn cosine_lr(t: usize, cfg: &TrainConfig) -> Result<f64> {
    if t < 1 || t > cfg.total_epochs {
        return Err(arg_err!(
            "epoch {t} outside 1..={}",
            cfg.total_epochs
        ));
    }
    let len = cfg.cycle_length() as f64;
    let pos = ((t - 1) % cfg.cycle_length()) as f64;
    Ok(cfg.initial_lr / 2.0 * ((PI * pos / len).cos() + 1.0))
}

/// Inverse-frequency weights `N / (C · count)`.
pub fn class_weights(histogram: &[usize]) -> Result<Vec<f64>> {
    if histogram.is_empty() {
        return Err(arg_err!("empty class histogram"));
    }
    if let Some(k) = histogram.iter().position(|&n| n == 0) {
        return Err(arg_err!("class {k} has no training samples"));
    }
    let total: usize = histogram.iter().sum();
    let cls = histogram.len() as f64;
    Ok(histogram
        .iter()
        .map(|&n| total as f64 / (cls * n as f64))
        .collect())
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    name: &str,
    params: &mut [T],
    grads: &[T],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(arg_err!(
            "{name}: parameter, gradient and moment lengths differ"
        ));
    }
    if !(lr > 0.0) {
        return Err(arg_err!("learning rate must be positive"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient in {name} at element {i}"
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1: T = c(ADAM_BETA1);
    let b2: T = c(ADAM_BETA2);
    let eps: T = c(ADAM_EPSILON);
    let corr1: T = c(1.0 - ADAM_BETA1.powi(t));
    let corr2: T = c(1.0 - ADAM_BETA2.powi(t));
    let lr: T = c(lr);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,val_loss,val_acc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.6},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_acc
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    /// 1-based cycle index.
    pub cycle: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub params: LayerParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBundle<T> {
    pub snapshots: Vec<Snapshot<T>>,
    pub config: TrainConfig,
    pub history: Vec<EpochLog>,
}

impl<T: Scalar> SnapshotBundle<T> {
    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// A model carrying the parameters of snapshot `i`.
    pub fn model(&self, base: &ModelParams<T>, i: usize) -> Result<ModelParams<T>> {
        let snap = self
            .snapshots
            .get(i)
            .ok_or_else(|| arg_err!("snapshot {i} of {}", self.snapshots.len()))?;
        let mut m = base.clone();
        m.load_params(&snap.params)?;
        Ok(m)
    }
}

/// Inference-mode probabilities for every sample, `N×C`. Work is split across
/// threads; each sample's output does not depend on the split.
pub fn predict_probs<T: Scalar>(model: &ModelParams<T>, data: &Dataset, batch_size: usize) -> Result<Tensor<T>> {
    let n = data.len();
    let cls = model.spec().num_classes;
    if n == 0 {
        return Tensor::from_vec(&[0, cls], Vec::new());
    }
    let workers = thread::available_parallelism().map_or(1, |p| p.get()).min(n);
    let per = n.div_ceil(workers);
    let bs = batch_size.max(1);
    let chunks: Vec<Result<Vec<T>>> = thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .step_by(per)
            .map(|start| {
                let end = (start + per).min(n);
                s.spawn(move || -> Result<Vec<T>> {
                    let mut out = Vec::with_capacity((end - start) * cls);
                    let idx: Vec<usize> = (start..end).collect();
                    for b in idx.chunks(bs) {
                        out.extend_from_slice(model.predict(&data.batch(b))?.data());
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut data_out = Vec::with_capacity(n * cls);
    for ch in chunks {
        data_out.extend(ch?);
    }
    Tensor::from_vec(&[n, cls], data_out)
}

/// Unweighted mean cross-entropy and accuracy of `probs` against `labels`.
pub fn loss_and_accuracy<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<(f64, f64)> {
    let (n, cls) = probs.dims2()?;
    let weights = vec![T::one(); cls];
    let loss = cross_entropy_loss(probs, &one_hot(labels, cls)?, &weights, T::zero(), T::zero(), &[])?;
    let correct = probs
        .data()
        .chunks(cls)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok((loss.to_f64().unwrap(), correct as f64 / n as f64))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains `model` for `cfg.total_epochs` epochs and returns one snapshot per
/// cycle. `on_epoch` sees every epoch's log line as it is produced.
pub fn train_with_snapshots<T: Scalar>(
    model: &mut ModelParams<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<SnapshotBundle<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(arg_err!("training and validation splits must be non-empty"));
    }
    let spec = model.spec().clone();
    for (name, d) in [("training", train), ("validation", val)] {
        if d.num_classes() != spec.num_classes {
            return Err(arg_err!(
                "{name} split has {} classes, model has {}",
                d.num_classes(),
                spec.num_classes
            ));
        }
        if d.image_size() != Some((spec.resolution, spec.resolution)) {
            return Err(arg_err!(
                "{name} images are {:?}, model expects {}x{}",
                d.image_size(),
                spec.resolution,
                spec.resolution
            ));
        }
    }
    let weights: Vec<T> = match cfg.class_weights {
        ClassWeighting::None => vec![T::one(); spec.num_classes],
        ClassWeighting::InverseFrequency => class_weights(&train.histogram())?
            .into_iter()
            .map(c::<T>)
            .collect(),
    };
    let l1: T = c(cfg.l1);
    let l2: T = c(cfg.l2);

    let ids: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, p)| p.role.trainable())
        .map(|(id, p)| (id, p.name.clone(), p.regularized))
        .collect();
    let mut adam: Vec<AdamState<T>> = ids
        .iter()
        .map(|(id, _, _)| AdamState::new(model.params().get(*id).len()))
        .collect();

    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut augment_rng = stream(cfg.seed, STREAM_AUGMENT);
    let mut dropout_rng = stream(cfg.seed, STREAM_DROPOUT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut snapshots = Vec::with_capacity(cfg.cycles);
    let mut history = Vec::with_capacity(cfg.total_epochs);

    for epoch in 1..=cfg.total_epochs {
        let lr = cosine_lr(epoch, cfg)?;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Tensor<T> = if cfg.augment {
                train.augmented_batch(idx, &cfg.augment_ranges, &mut augment_rng)?
            } else {
                train.batch(idx)
            };
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let onehot = one_hot(&labels, spec.num_classes)?;
            let pass = model.forward(&batch, Mode::Training, &mut dropout_rng)?;
            let loss = cross_entropy_loss(
                &pass.probs,
                &onehot,
                &weights,
                l1,
                l2,
                &model.params().regularized(),
            )?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became non-finite in epoch {epoch}"
                )));
            }
            loss_sum += loss.to_f64().unwrap() * idx.len() as f64;
            let mut grads = model.backward(&pass, &softmax_ce_grad(&pass.probs, &onehot, &weights)?)?;
            model.update_running_stats(&pass);
            for ((id, name, regularized), state) in ids.iter().zip(&mut adam) {
                if *regularized {
                    let reg = regularization_grad(l1, l2, model.params().get(*id).data());
                    for (g, r) in grads.get_mut(*id).iter_mut().zip(reg) {
                        *g = *g + r;
                    }
                }
                adam_step(
                    name,
                    model.params_mut().get_mut(*id).data_mut(),
                    grads.get(*id),
                    state,
                    lr,
                )?;
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_acc) = loss_and_accuracy(&predict_probs(model, val, cfg.batch_size.max(16))?, &val.labels)?;
        let log = EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_acc,
        };
        debug!("{}", log.csv_row());
        on_epoch(&log);
        history.push(log);
        if cfg.is_cycle_end(epoch) {
            info!(
                "snapshot {} at epoch {epoch}: train_loss {train_loss:.4} val_acc {val_acc:.4}",
                snapshots.len() + 1
            );
            snapshots.push(Snapshot {
                cycle: snapshots.len() + 1,
                epoch,
                train_loss,
                val_acc,
                params: model.params().clone(),
            });
        }
    }
    Ok(SnapshotBundle {
        snapshots,
        config: cfg.clone(),
        history,
    })
}
