use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::adam::{AdamHyper, AdamState};
use super::model::{backward, EfnetConfig, EfnetModel};
use super::tensor::Tensor;
use crate::channel::{Dataset, VImage};
use crate::error::{invalid, Error, Result};

/// One row per completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the mini-batch losses seen during the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_mse", "val_mse", "wall_seconds"])?;
        for r in &self.records {
            out.write_record([
                r.epoch.to_string(),
                format!("{:e}", r.train_mse),
                format!("{:e}", r.val_mse),
                format!("{:.3}", r.wall_seconds),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Losses only; wall-clock times are excluded.
    pub fn same_trajectory(&self, other: &TrainingLog) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch && a.train_mse.to_bits() == b.train_mse.to_bits() && a.val_mse.to_bits() == b.val_mse.to_bits()
            })
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: EfnetModel,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub initial_val_mse: f64,
    pub best_val_mse: f64,
    pub best_epoch: usize,
    pub best_params: Vec<f64>,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: EfnetModel,
    pub log: TrainingLog,
    pub initial_val_mse: f64,
    pub best_val_mse: f64,
    /// 0 when no epoch improved on the initial model.
    pub best_epoch: usize,
}

fn tensors(images: &[VImage]) -> Vec<Tensor> {
    images.iter().map(Tensor::from_image).collect()
}

fn check_dataset(cfg: &EfnetConfig, d: &Dataset) -> Result<()> {
    if d.nt != cfg.nt || d.ns != cfg.ns || d.n_vs != cfg.n_vs {
        return Err(invalid(format!(
            "dataset (nt={}, ns={}, n_vs={}) does not match model (nt={}, ns={}, n_vs={})",
            d.nt, d.ns, d.n_vs, cfg.nt, cfg.ns, cfg.n_vs
        )));
    }
    if d.train().is_empty() || d.validation().is_empty() {
        return Err(invalid("training and validation splits must be non-empty"));
    }
    Ok(())
}

/// Mean per-sample squared error of the unquantized autoencoder.
pub fn mean_loss(model: &EfnetModel, xs: &[Tensor]) -> Result<f64> {
    if xs.is_empty() {
        return Err(invalid("empty evaluation set"));
    }
    let losses: Vec<f64> = xs
        .par_iter()
        .map(|x| {
            let y = model.reconstruct_tensor(x)?;
            super::model::sample_loss(&y, x)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / xs.len() as f64)
}

/// Drives training one epoch at a time.
pub struct Trainer {
    state: TrainState,
    train: Vec<Tensor>,
    val: Vec<Tensor>,
}

impl Trainer {
    pub fn new(cfg: EfnetConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&cfg, dataset)?;
        let model = EfnetModel::init(cfg, dataset.scale)?;
        let val = tensors(dataset.validation());
        let initial = mean_loss(&model, &val)?;
        let state = TrainState {
            adam: AdamState::new(model.n_params()),
            epoch: 0,
            initial_val_mse: initial,
            best_val_mse: initial,
            best_epoch: 0,
            best_params: model.params().to_vec(),
            log: TrainingLog::default(),
            model,
        };
        Ok(Self { state, train: tensors(dataset.train()), val })
    }

    pub fn resume(state: TrainState, dataset: &Dataset) -> Result<Self> {
        check_dataset(&state.model.config, dataset)?;
        if state.model.scale != dataset.scale {
            return Err(Error::Consistency(format!(
                "saved state was trained with scale {} but dataset has scale {}",
                state.model.scale, dataset.scale
            )));
        }
        Ok(Self { state, train: tensors(dataset.train()), val: tensors(dataset.validation()) })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.state.model.config.epochs
    }

    fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.model.config.seed);
        rng.set_stream(1 << 32 | epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs the next epoch and returns its log record.
    pub fn step_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let epoch = self.state.epoch + 1;
        let cfg = self.state.model.config.clone();
        let hyper = AdamHyper { lr: cfg.lr, beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps };
        let order = self.epoch_order(epoch);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| self.train[i].clone()));
            let (loss, grad) = backward(&self.state.model, &batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, reason: format!("non-finite training loss {loss}") });
            }
            self.state.adam.step(&hyper, self.state.model.params_mut(), &grad);
            loss_sum += loss;
            n_batches += 1;
        }
        if self.state.model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, reason: "non-finite parameters after update".into() });
        }
        let val_mse = mean_loss(&self.state.model, &self.val)?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged { epoch, reason: format!("non-finite validation loss {val_mse}") });
        }
        if val_mse < self.state.best_val_mse {
            self.state.best_val_mse = val_mse;
            self.state.best_epoch = epoch;
            self.state.best_params.copy_from_slice(self.state.model.params());
        }
        let record = EpochRecord {
            epoch,
            train_mse: loss_sum / n_batches as f64,
            val_mse,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} ({:.1}s)",
            record.train_mse,
            record.val_mse,
            record.wall_seconds
        );
        self.state.log.records.push(record.clone());
        self.state.epoch = epoch;
        Ok(record)
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let s = self.state;
        let model = EfnetModel::from_params(s.model.config.clone(), s.model.scale, s.best_params)?;
        Ok(TrainOutcome {
            model,
            log: s.log,
            initial_val_mse: s.initial_val_mse,
            best_val_mse: s.best_val_mse,
            best_epoch: s.best_epoch,
        })
    }
}

/// Trains for `cfg.epochs` epochs without the quantizer in the loop (unless
/// `straight_through` is set) and keeps the best-validation parameters.
pub fn train(cfg: EfnetConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    let mut t = Trainer::new(cfg, dataset)?;
    while !t.is_done() {
        t.step_epoch()?;
    }
    t.finish()
}
