//! Mini-batch training with Adam, evaluation, and best-dev selection.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{argmax, forward, loss_and_grad, Model, ModelConfig, ModelParams, PassSeed};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{substream, Stream};
use crate::text::EncodedBatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            batch_size: 50,
            epochs: 25,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

/// Stepwise trainer; [`train`] drives it for a fixed number of epochs.
pub struct Trainer<'a> {
    model: Model,
    data: &'a EncodedBatch,
    opts: TrainOptions,
    state: AdamState,
    step: u64,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model: Model, data: &'a EncodedBatch, opts: TrainOptions) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::arg("training data is empty"));
        }
        if opts.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let state = AdamState::new(model.params.entries().into_iter().map(|(_, t)| t));
        Ok(Trainer {
            model,
            data,
            opts,
            state,
            step: 0,
            epoch: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over shuffled mini-batches; returns the mean batch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let seed = self.model.config.seed;
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut substream(seed, Stream::Shuffle, &[self.epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.opts.batch_size) {
            let batch = self.data.select(chunk);
            let pass = PassSeed { seed, step: self.step };
            let (out, grads) = loss_and_grad(&self.model.params, &self.model.config, &batch, pass, true)?;
            let mut tensors = self.model.params.tensors_mut();
            adam_step(&mut tensors, &grads.grads, &mut self.state, &self.opts.adam)?;
            self.step += 1;
            total += out.loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev accuracy (earliest on
    /// ties), or from the last epoch when there is no dev set.
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

pub fn train(model: Model, data: &EncodedBatch, dev: Option<&EncodedBatch>, opts: TrainOptions) -> Result<TrainOutcome> {
    train_with(model, data, dev, opts, |_| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with(
    model: Model,
    data: &EncodedBatch,
    dev: Option<&EncodedBatch>,
    opts: TrainOptions,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(model, data, opts)?;
    let mut metrics = Vec::with_capacity(opts.epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    for _ in 0..opts.epochs {
        let train_loss = trainer.run_epoch()?;
        let dev_accuracy = dev
            .map(|d| evaluate(&trainer.model.params, &trainer.model.config, d))
            .transpose()?;
        let m = EpochMetrics {
            epoch: trainer.epoch(),
            train_loss,
            dev_accuracy,
        };
        on_epoch(&m);
        if let Some(acc) = dev_accuracy {
            if best.as_ref().map_or(true, |(b, _, _)| acc > *b) {
                best = Some((acc, m.epoch, trainer.model.params.clone()));
            }
        }
        metrics.push(m);
    }
    let last_epoch = trainer.epoch();
    let mut model = trainer.into_model();
    let best_epoch = match best {
        Some((_, e, params)) => {
            model.params = params;
            e
        }
        None => last_epoch,
    };
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
    })
}

/// Class probabilities in evaluation mode.
pub fn predict(params: &ModelParams, cfg: &ModelConfig, data: &EncodedBatch) -> Result<Vec<Vec<f64>>> {
    Ok(forward(params, cfg, data, PassSeed::eval(), false)?.probs)
}

/// Fraction of examples whose argmax prediction equals the label.
pub fn evaluate(params: &ModelParams, cfg: &ModelConfig, data: &EncodedBatch) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let probs = predict(params, cfg, data)?;
    let correct = probs
        .iter()
        .zip(&data.labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
