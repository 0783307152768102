//! SGD with momentum, the epoch loop, and dataset evaluation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::{cross_entropy_per_sample, softmax_cross_entropy, softmax_cross_entropy_backward, Mode};
use crate::metrics::{score, MetricsBundle};
use crate::model::{save_checkpoint, SequentialModel};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub eval_epochs: BTreeSet<usize>,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub dropout_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            eval_epochs: [10, 20, 30].into_iter().collect(),
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 7,
            dropout_rate: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if let Some(e) = self.eval_epochs.iter().find(|&&e| e == 0 || e > self.epochs) {
            return Err(Error::Config(format!(
                "train.eval_epochs entry {e} outside [1, {}]",
                self.epochs
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "train.dropout_rate {} must lie in [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Momentum buffers, one per parameter tensor, plus per-parameter step
/// counts.
#[derive(Debug, Clone)]
pub struct OptimState<T: Real = f32> {
    pub velocity: Vec<Tensor<T>>,
    pub steps: Vec<u64>,
}

impl<T: Real> OptimState<T> {
    pub fn new(model: &SequentialModel<T>) -> Self {
        let velocity: Vec<Tensor<T>> = model.named_params().iter().map(|(_, p)| Tensor::zeros_like(p)).collect();
        OptimState {
            steps: vec![0; velocity.len()],
            velocity,
        }
    }
}

/// `v ← μv − lr·g`, `p ← p + v` for every `(param, grad)` pair.
pub fn sgd_step<T: Real>(
    pairs: Vec<(&mut Tensor<T>, &Tensor<T>)>,
    state: &mut OptimState<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if pairs.len() != state.velocity.len() {
        return Err(Error::Dimension(format!(
            "{} parameters but optimizer state holds {}",
            pairs.len(),
            state.velocity.len()
        )));
    }
    for (i, ((p, g), v)) in pairs.iter().zip(&state.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension(format!(
                "parameter {i}: shape {} with grad {} and velocity {}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for (i, (p, g)) in pairs.into_iter().enumerate() {
        let v = &mut state.velocity[i];
        for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
        state.steps[i] += 1;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Mean softmax cross-entropy.
    pub loss: f64,
    pub metrics: MetricsBundle,
    pub predictions: Vec<usize>,
}

/// Eval-mode loss and metrics over `ds`. Per-sample losses are summed in
/// sample order, so the result does not depend on `batch_size`.
pub fn evaluate<T: Real>(model: &SequentialModel<T>, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    if ds.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the model outputs {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    let index: Vec<usize> = (0..ds.len()).collect();
    let per_batch = index
        .par_chunks(batch_size)
        .map(|idx| {
            let x = ds.stack(idx)?.cast::<T>();
            let labels: Vec<usize> = idx.iter().map(|&i| ds.samples()[i].label).collect();
            let logits = model.infer(&x)?;
            Ok((cross_entropy_per_sample(&logits, &labels)?, logits.argmax_rows()?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(ds.len());
    for (losses, preds) in per_batch {
        total += losses.iter().sum::<f64>();
        predictions.extend(preds);
    }
    let metrics = score(&ds.labels(), &predictions, model.num_classes())?;
    Ok(Evaluation {
        loss: total / ds.len() as f64,
        metrics,
        predictions,
    })
}

fn check_fit<T: Real>(model: &SequentialModel<T>, ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Validation(format!("{what} set is empty")));
    }
    let cfg = model.config();
    let want = (cfg.input_channels, (cfg.input_height, cfg.input_width));
    if (ds.channels(), ds.resolution()) != want {
        return Err(Error::Config(format!(
            "{what} set is {}x{}x{} but the model expects {}x{}x{}",
            ds.channels(),
            ds.resolution().0,
            ds.resolution().1,
            want.0,
            want.1 .0,
            want.1 .1
        )));
    }
    if ds.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "{what} set has {} classes but the model outputs {}",
            ds.num_classes(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Stepwise training driver; [`train`] wraps it for whole runs.
#[derive(Debug)]
pub struct Trainer<'a, T: Real = f32> {
    model: SequentialModel<T>,
    state: OptimState<T>,
    cfg: TrainConfig,
    train: &'a Dataset,
    val: &'a Dataset,
    epoch: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(model: SequentialModel<T>, train: &'a Dataset, val: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_fit(&model, train, "train")?;
        check_fit(&model, val, "val")?;
        Ok(Trainer {
            state: OptimState::new(&model),
            model,
            cfg,
            train,
            val,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &SequentialModel<T> {
        &self.model
    }

    pub fn into_model(self) -> SequentialModel<T> {
        self.model
    }

    pub fn optim_state(&self) -> &OptimState<T> {
        &self.state
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on a batch; returns the batch's mean loss.
    pub fn step(&mut self, images: &Tensor<T>, labels: &[usize]) -> Result<f64> {
        self.model.set_mode(Mode::Train);
        self.model.zero_grads();
        let logits = self.model.forward(images)?;
        let (loss, probs) = softmax_cross_entropy(&logits, labels)?;
        if !loss.is_finite() {
            self.model.clear_caches();
            return Err(Error::Divergence {
                epoch: self.epoch + 1,
                batch: 0,
                message: format!("loss is {loss}"),
            });
        }
        self.model.backward(&softmax_cross_entropy_backward(&probs, labels)?)?;
        sgd_step(self.model.params_and_grads_mut(), &mut self.state, self.cfg.lr, self.cfg.momentum)?;
        Ok(loss)
    }

    /// Trains one epoch, then scores the full train and val sets in eval
    /// mode.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch + 1;
        let plan = batches(self.train, self.cfg.batch_size, true, self.cfg.seed, epoch)?;
        for (b, batch) in plan.into_iter().enumerate() {
            let x = batch.images.cast::<T>();
            self.step(&x, &batch.labels).map_err(|e| match e {
                Error::Divergence { message, .. } => Error::Divergence {
                    epoch,
                    batch: b + 1,
                    message,
                },
                other => other,
            })?;
        }
        self.model.set_mode(Mode::Eval);
        let tr = evaluate(&self.model, self.train, self.cfg.batch_size)?;
        let va = evaluate(&self.model, self.val, self.cfg.batch_size)?;
        self.epoch = epoch;
        Ok(EpochLog {
            epoch,
            train_loss: tr.loss,
            train_acc: tr.metrics.accuracy,
            val_loss: va.loss,
            val_acc: va.metrics.accuracy,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real = f32> {
    /// Final model, left in eval mode.
    pub model: SequentialModel<T>,
    pub logs: Vec<EpochLog>,
    /// Eval-mode snapshots at each of `eval_epochs`, ascending.
    pub snapshots: Vec<(usize, SequentialModel<T>)>,
    /// Checkpoint files written, when a directory was given.
    pub checkpoint_paths: Vec<PathBuf>,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("checkpoint_epoch_{epoch:03}.lcdl")
}

/// Runs `cfg.epochs` epochs. Snapshots are kept at every eval epoch and,
/// with `checkpoint_dir`, written there as `checkpoint_epoch_NNN.lcdl`.
pub fn train<T: Real>(
    model: SequentialModel<T>,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(model, train_ds, val_ds, cfg.clone())?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut checkpoint_paths = Vec::new();
    for _ in 0..cfg.epochs {
        let log = trainer.run_epoch()?;
        if cfg.eval_epochs.contains(&log.epoch) {
            let mut snap = trainer.model().clone();
            snap.clear_caches();
            snap.zero_grads();
            snap.set_mode(Mode::Eval);
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(checkpoint_file_name(log.epoch));
                save_checkpoint(&snap, &path)?;
                checkpoint_paths.push(path);
            }
            snapshots.push((log.epoch, snap));
        }
        logs.push(log);
    }
    let mut model = trainer.into_model();
    model.set_mode(Mode::Eval);
    Ok(TrainOutcome {
        model,
        logs,
        snapshots,
        checkpoint_paths,
    })
}
