use std::borrow::Cow;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::graph::ModelGraph;
use crate::datapipe::{Scaler, WindowedDataset};
use crate::engine::{Mode, Objective, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation block.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Training loss of the untouched model.
    pub initial_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were restored by early stopping.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl History {
    pub fn final_train_loss(&self) -> f64 {
        self.epochs.last().map_or(self.initial_train_loss, |e| e.train_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
        }
        out
    }
}

/// Drops runoff columns when the model was built without them and checks
/// the window shape against the model.
pub(crate) fn adapt<'a>(model: &ModelGraph, ds: &'a WindowedDataset) -> Result<Cow<'a, WindowedDataset>> {
    let cfg = model.config();
    let ds = if ds.has_runoff && !cfg.uses_runoff() { Cow::Owned(ds.without_runoff()) } else { Cow::Borrowed(ds) };
    if !ds.has_runoff && cfg.uses_runoff() {
        return Err(Error::dim("model expects runoff inputs the dataset does not have"));
    }
    if ds.lag != cfg.lag || ds.grid_count != cfg.grid_count {
        return Err(Error::dim(format!(
            "model takes lag {} over {} grids, data has lag {} over {} grids",
            cfg.lag, cfg.grid_count, ds.lag, ds.grid_count
        )));
    }
    Ok(ds)
}

/// Normalized-unit predictions, in sample order.
pub fn predict_normalized(model: &ModelGraph, ds: &WindowedDataset) -> Result<Vec<f64>> {
    let ds = adapt(model, ds)?;
    (0..ds.len()).into_par_iter().map(|n| model.predict(&ds.input1(n), &ds.input2(n))).collect()
}

fn mse(model: &ModelGraph, ds: &WindowedDataset) -> Result<f64> {
    let pred = predict_normalized(model, ds)?;
    Ok(pred.iter().zip(&ds.target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / ds.len() as f64)
}

/// Predictions mapped back to physical discharge units.
pub fn predict_series(model: &ModelGraph, ds: &WindowedDataset, scaler: &Scaler) -> Result<Vec<f64>> {
    Ok(scaler.inverse_transform_discharge(&predict_normalized(model, ds)?))
}

/// Metrics in physical units against the dataset's own targets.
pub fn evaluate(model: &ModelGraph, ds: &WindowedDataset, scaler: &Scaler) -> Result<MetricReport> {
    let sim = predict_series(model, ds, scaler)?;
    let obs = scaler.inverse_transform_discharge(&ds.target);
    metrics::report(&obs, &sim)
}

/// Minibatch Adam on `train`. Batches are contiguous chronological runs;
/// their order is reshuffled each epoch from the configured seed, which
/// also drives dropout.
pub fn train(
    model: &mut ModelGraph,
    train: &WindowedDataset,
    val: Option<&WindowedDataset>,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.adam.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    if train.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    let train = adapt(model, train)?;
    let val = match val {
        Some(v) if !v.is_empty() => Some(adapt(model, v)?),
        _ => None,
    };
    model.reseed(cfg.seed);

    let mut history = History { initial_train_loss: mse(model, &train)?, ..History::default() };
    let starts: Vec<usize> = (0..train.len()).step_by(cfg.batch_size).collect();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut order = starts.clone();
        order.shuffle(&mut model.rng);
        for &start in &order {
            let end = (start + cfg.batch_size).min(train.len());
            let scale = 2.0 / (end - start) as f64;
            model.params.zero_grads();
            for n in start..end {
                let mut rng = model.rng.clone();
                let pred = model.forward(&train.input1(n), &train.input2(n), Mode::Train, Some(&mut rng))?;
                model.rng = rng;
                model.backward(scale * (pred - train.target[n]))?;
            }
            model.params.adam_step(&cfg.adam)?;
        }
        let train_loss = mse(model, &train)?;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let val_loss = val.as_deref().map(|v| mse(model, v)).transpose()?;
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss });

        if let (Some(patience), Some(v)) = (cfg.patience, val_loss) {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, model.params.values().to_vec()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    history.stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, epoch, values)) = best {
        for (id, v) in model.params.ids().collect::<Vec<_>>().into_iter().zip(values) {
            *model.params.value_mut(id) = v;
        }
        history.best_epoch = Some(epoch);
    }
    Ok(history)
}

/// Squared error of one sample in evaluation mode, for gradient checks.
pub struct SampleObjective {
    pub model: ModelGraph,
    pub input1: Tensor,
    pub input2: Tensor,
    pub target: f64,
}

impl Objective for SampleObjective {
    fn params(&self) -> &ParamStore {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.model.params
    }

    fn loss(&self) -> Result<f64> {
        let p = self.model.predict(&self.input1, &self.input2)?;
        Ok((p - self.target) * (p - self.target))
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.model.params.zero_grads();
        let p = self.model.forward(&self.input1, &self.input2, Mode::Eval, None)?;
        self.model.backward(2.0 * (p - self.target))?;
        Ok((p - self.target) * (p - self.target))
    }
}
