//! Loss, Ranger optimizer and the deterministic training loop.

mod loss;
mod optim;

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::evaluation::{encode_windows, metrics, windows_for, WindowSpec};
use crate::features::{ContextStats, EncodedSample};
use crate::model::{ModelConfig, TrouSpiNet};
use crate::nn::{Ctx, Mode};

pub use loss::{bce, class_weights, l2_penalty, weighted_bce, PROB_CLAMP};
pub use optim::{
    lookahead_sync, Lookahead, RAdam, Ranger, StepKind, BETA1, BETA2, EPSILON, LOOKAHEAD_ALPHA,
    LOOKAHEAD_K,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// `(w_neg, w_pos)`; derived from the training labels when absent.
    pub class_weights: Option<(f64, f64)>,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
}

impl TrainConfig {
    /// Learning rate used with the four-stream configuration.
    pub fn pie() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 8,
            lr: 5e-5,
            seed: 0,
            class_weights: None,
            lookahead_k: LOOKAHEAD_K,
            lookahead_alpha: LOOKAHEAD_ALPHA,
        }
    }

    pub fn jaad() -> Self {
        TrainConfig {
            lr: 5e-6,
            ..Self::pie()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.epochs == 0 || self.batch_size == 0 || self.lookahead_k == 0 {
            errs.push("epochs, batch_size and lookahead_k must be positive".to_string());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            errs.push(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.lookahead_alpha > 0.0 && self.lookahead_alpha <= 1.0) {
            errs.push(format!(
                "lookahead_alpha must lie in (0, 1], got {}",
                self.lookahead_alpha
            ));
        }
        if let Some((n, p)) = self.class_weights {
            if !(n > 0.0 && p > 0.0 && n.is_finite() && p.is_finite()) {
                errs.push(format!("class weights must be positive, got ({n}, {p})"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Training(errs.join("; ")))
        }
    }
}

/// First line of the epoch log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    /// Weights behind the validation metrics and the saved model.
    pub evaluated_weights: String,
    pub lookahead_k: usize,
    pub lookahead_alpha: f64,
    pub class_weights: (f64, f64),
    pub train_samples: usize,
    pub val_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_auc: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub header: LogHeader,
    pub epochs: Vec<EpochRecord>,
    pub steps: u64,
}

impl TrainReport {
    /// Header line then one JSON record per epoch.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(&serde_json::json!({ "header": self.header }))?;
        s.push('\n');
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn trainable_slices(model: &mut TrouSpiNet) -> Vec<&mut [f64]> {
    model
        .store_mut()
        .entries_mut()
        .iter_mut()
        .filter(|e| e.trainable)
        .map(|e| e.data.as_mut_slice())
        .collect()
}

/// Copy of `model` carrying the weights a terminal Lookahead sync would produce.
fn synced_copy(model: &TrouSpiNet, lookahead: &Lookahead) -> TrouSpiNet {
    let mut copy = model.clone();
    let alpha = lookahead.alpha;
    for (fast, slow) in trainable_slices(&mut copy)
        .into_iter()
        .zip(lookahead.slow())
    {
        let mut s = slow.clone();
        lookahead_sync(&mut s, fast, alpha);
    }
    copy
}

/// Loss (weighted BCE plus the final-layer L2 term) and gradients for one batch; batch
/// norm running statistics are updated in place.
fn batch_step(
    model: &mut TrouSpiNet,
    batch: &[&EncodedSample],
    weights: (f64, f64),
    dropout_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let inputs = model.batch(batch)?;
    let labels: Vec<u8> = batch.iter().map(|s| s.label).collect();
    let bind = model.store().bind(true);
    let mut ctx = Ctx::new(&bind, Mode::Train, dropout_seed);
    let p = model.forward(&mut ctx, &inputs)?;
    let penalty = l2_penalty(ctx.param(model.final_weight()), model.config().l2_final);
    let loss = weighted_bce(&p, &labels, weights)?.add(&penalty)?;
    let value = loss.item()?;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    loss.backward()?;
    let updates = ctx.take_stat_updates();
    let grads = model
        .store()
        .entries()
        .iter()
        .zip(bind.grads())
        .filter(|(e, _)| e.trainable)
        .map(|(e, g)| g.unwrap_or_else(|| vec![0.0; e.data.len()]))
        .collect();
    model.apply_stat_updates(updates);
    Ok((value, grads))
}

/// Trains in place with seeded shuffling, Ranger updates and per-epoch validation.
/// On return the model holds the terminally synchronised Lookahead weights.
pub fn train(
    model: &mut TrouSpiNet,
    train: &[EncodedSample],
    val: &[EncodedSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with(model, train, val, cfg, |_| ControlFlow::Continue(()))
}

/// [`train`] with a hook after each epoch; returning `Break` stops after that epoch
/// (the terminal sync still runs).
pub fn train_with(
    model: &mut TrouSpiNet,
    train: &[EncodedSample],
    val: &[EncodedSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let labels: Vec<u8> = train.iter().map(|s| s.label).collect();
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => class_weights(&labels)?,
    };
    let header = LogHeader {
        evaluated_weights: "lookahead-slow-after-terminal-sync".into(),
        lookahead_k: cfg.lookahead_k,
        lookahead_alpha: cfg.lookahead_alpha,
        class_weights: weights,
        train_samples: train.len(),
        val_samples: val.len(),
    };
    let mut optimizer = {
        let params = trainable_slices(model);
        let views: Vec<&[f64]> = params.iter().map(|p| &**p).collect();
        Ranger::new(cfg.lr, cfg.lookahead_k, cfg.lookahead_alpha, &views)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&EncodedSample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_step(model, &batch, weights, rng.random())?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step as usize,
                });
            }
            let grad_views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut params = trainable_slices(model);
            optimizer
                .step(&mut params, &grad_views)
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged {
                        epoch,
                        step: step as usize,
                    },
                    other => other,
                })?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (val_acc, val_auc, val_f1) = if val.is_empty() {
            (None, None, None)
        } else {
            let probe = synced_copy(model, &optimizer.lookahead);
            let scores: Vec<(f64, u8)> = probe
                .predict(val)?
                .into_iter()
                .zip(val.iter().map(|s| s.label))
                .collect();
            let m = metrics(&scores)?;
            (Some(m.acc), m.auc, Some(m.f1))
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_acc,
            val_auc,
            val_f1,
        };
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} val acc {} auc {} f1 {}",
            show(val_acc),
            show(val_auc),
            show(val_f1)
        );
        let flow = on_epoch(&record);
        epochs.push(record);
        if flow.is_break() {
            break;
        }
    }
    let mut params = trainable_slices(model);
    optimizer.lookahead.sync(&mut params);
    Ok(TrainReport {
        header,
        epochs,
        steps: step,
    })
}

/// Encoded windows for each split plus the train-split speed statistics.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
    pub stats: Option<ContextStats>,
}

/// Samples windows per split and standardises speed with statistics fitted on the
/// training windows only.
pub fn prepare_dataset(split: &Split, spec: &WindowSpec) -> Result<PreparedData> {
    let train = windows_for(&split.train, spec)?;
    let stats = ContextStats::fit(train.iter().map(|w| &w.context));
    let encode = |tracks| -> Result<Vec<EncodedSample>> {
        encode_windows(&windows_for(tracks, spec)?, stats.as_ref())
    };
    Ok(PreparedData {
        train: encode_windows(&train, stats.as_ref())?,
        val: encode(&split.val)?,
        test: encode(&split.test)?,
        stats,
    })
}

/// Builds `config`, attaches the data's speed statistics and trains on its train split,
/// validating on its val split.
pub fn fit(
    config: ModelConfig,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<(TrouSpiNet, TrainReport)> {
    let mut model = TrouSpiNet::build(config)?;
    model.set_context_stats(data.stats);
    let report = train(&mut model, &data.train, &data.val, cfg)?;
    Ok((model, report))
}
