use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::loss::{first_argmax, objective, InstanceScope};
use super::schedule::cosine_lr;
use crate::aps::{bag_seed, SelectionConfig};
use crate::data::{Bag, SplitSpec};
use crate::encoders::{EncoderConfig, Model, ModelConfig, RunRng};
use crate::error::{Error, Result};
use crate::metrics::auc::{accuracy, roc_auc};
use crate::params::ParamStore;
use crate::tape::{bce_with_logits, Tape};

/// Optimization settings. Every field has a default, so partial JSON
/// configs are accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub seed: u64,
    pub selection: SelectionConfig,
    pub instance_scope: InstanceScope,
    /// Standardize features with training-split statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            min_lr: 5e-6,
            betas: (0.5, 0.9),
            adam_eps: 1e-8,
            weight_decay: 1e-5,
            l2_lambda: 1e-4,
            epochs: 50,
            patience: 5,
            batch_size: 1,
            split_ratio: 0.8,
            seed: 42,
            selection: SelectionConfig::default(),
            instance_scope: InstanceScope::All,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            betas: self.betas,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad("min_lr must lie in [0, lr]");
        }
        if !beta_ok(self.betas.0) || !beta_ok(self.betas.1) {
            return bad("betas must lie in [0, 1)");
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.l2_lambda >= 0.0) {
            return bad("weight_decay and l2_lambda must be non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size != 1 {
            return bad("only batch_size 1 is supported");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad("split_ratio must lie in (0, 1)");
        }
        self.selection.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Mutable optimization state carried across epochs.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_val_auc: f64,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FitOutcome {
    pub fn best(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// Inference result for one bag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BagScore {
    pub id: String,
    pub label: Option<bool>,
    pub logit: f64,
    pub probability: f64,
    /// Data term of the objective; `None` for unlabeled bags.
    pub loss: Option<f64>,
}

/// Scores bags in parallel; output order follows `bags`.
pub fn score_bags(
    model: &Model,
    bags: &[Bag],
    selection: &SelectionConfig,
    scope: InstanceScope,
    seed: u64,
) -> Result<Vec<BagScore>> {
    bags.par_iter()
        .map(|bag| {
            let pred = model.predict(&bag.matrix(), selection, bag_seed(seed, &bag.id))?;
            let inst = pred.instance_logits.values().data();
            let arg = match scope {
                InstanceScope::All => first_argmax(inst, 0..inst.len()),
                InstanceScope::Selected => first_argmax(inst, pred.selection.sequence_order()),
            };
            let loss = bag.label.map(|y| {
                let y = if y { 1.0 } else { 0.0 };
                0.5 * bce_with_logits(pred.bag_logit, y) + 0.5 * bce_with_logits(inst[arg], y)
            });
            Ok(BagScore {
                id: bag.id.clone(),
                label: bag.label,
                logit: pred.bag_logit,
                probability: pred.probability,
                loss,
            })
        })
        .collect()
}

/// AUC, accuracy and mean data loss over labeled scores.
pub fn summarize(scores: &[BagScore]) -> Result<(f64, f64, f64)> {
    let probs: Vec<f64> = scores.iter().map(|s| s.probability).collect();
    let labels = scores
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Config(format!("bag {} is unlabeled", s.id)))
        })
        .collect::<Result<Vec<bool>>>()?;
    let auc = roc_auc(&probs, &labels)?;
    let acc = accuracy(&probs, &labels, 0.5);
    let loss = scores.iter().filter_map(|s| s.loss).sum::<f64>() / scores.len() as f64;
    Ok((auc, acc, loss))
}

/// Per-feature mean and population standard deviation over all instances.
pub fn feature_statistics(bags: &[Bag]) -> (Vec<f64>, Vec<f64>) {
    let d = bags.first().map_or(0, Bag::dim);
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    let mut count = 0usize;
    for bag in bags {
        for row in bag.features().chunks_exact(d.max(1)) {
            for (j, &v) in row.iter().enumerate() {
                let v = f64::from(v);
                sum[j] += v;
                sq[j] += v * v;
            }
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

fn require_both_classes(bags: &[Bag], side: &str) -> Result<()> {
    let mut seen = [false; 2];
    for bag in bags {
        seen[usize::from(bag.target()? > 0.5)] = true;
    }
    if seen[0] && seen[1] {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{side} split must contain both classes"
        )))
    }
}

fn check_dims(bags: &[Bag], d: usize) -> Result<()> {
    match bags.iter().find(|b| b.dim() != d) {
        Some(b) => Err(Error::Config(format!(
            "bag {} has dimension {}, expected {d}",
            b.id,
            b.dim()
        ))),
        None => Ok(()),
    }
}

/// Splits `bags` with the configured ratio and seed, then trains.
pub fn fit_dataset(
    encoder: &EncoderConfig,
    bags: &[Bag],
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    let split = SplitSpec::from_bags(bags, cfg.split_ratio, cfg.seed)?;
    let (train, val) = split.partition(bags)?;
    fit(encoder, &train, &val, cfg, on_epoch)
}

/// Trains with batch size 1, per-epoch cosine learning rate and early
/// stopping on validation AUC (ties go to lower validation loss). The
/// returned model carries the best epoch's parameters.
pub fn fit(
    encoder: &EncoderConfig,
    train: &[Bag],
    val: &[Bag],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    require_both_classes(train, "training")?;
    require_both_classes(val, "validation")?;
    let d = train[0].dim();
    check_dims(train, d)?;
    check_dims(val, d)?;

    let mut model = Model::new(ModelConfig::new(*encoder, d), cfg.seed)?;
    if cfg.standardize {
        let (mean, std) = feature_statistics(train);
        model.set_standardization(&mean, &std)?;
    }
    let adam_cfg = cfg.adam();
    let mut state = TrainState {
        adam: AdamState::new(model.params()),
        model,
        epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
        best_val_loss: f64::INFINITY,
        epochs_since_improvement: 0,
        lr: cfg.lr,
    };
    let mut dropout_rng = RunRng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(u64::MAX);
    let train_data = train
        .iter()
        .map(|b| Ok((b.matrix(), b.target()?, bag_seed(cfg.seed, &b.id))))
        .collect::<Result<Vec<_>>>()?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_params: Option<ParamStore> = None;
    let mut best_epoch = 0;
    let mut stopped_early = false;
    let mut tape = Tape::new();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        state.epoch = epoch;
        state.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.min_lr)?;
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut shuffle_rng = RunRng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for &i in &order {
            let (features, target, seed) = &train_data[i];
            tape.clear();
            let model = &state.model;
            let fwd = model.forward(
                &mut tape,
                features,
                &cfg.selection,
                *seed,
                Some(&mut dropout_rng),
            )?;
            let (root, parts) = objective(
                &mut tape,
                model.params(),
                &fwd,
                *target,
                cfg.l2_lambda,
                cfg.instance_scope,
            )?;
            if !parts.total().is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss on bag {} in epoch {epoch}",
                    train[i].id
                )));
            }
            loss_sum += parts.total();
            let grads = tape.backward(root)?;
            let params = state.model.params_mut();
            params.zero_grad();
            grads.accumulate_into(&tape, params);
            state.adam.step(params, state.lr, &adam_cfg)?;
        }

        let scores = score_bags(
            &state.model,
            val,
            &cfg.selection,
            cfg.instance_scope,
            cfg.seed,
        )?;
        let (val_auc, val_acc, val_loss) = summarize(&scores)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            val_auc,
            val_acc,
            val_loss,
            lr: state.lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        let improved = val_auc > state.best_val_auc
            || (val_auc == state.best_val_auc && val_loss < state.best_val_loss);
        if improved {
            state.best_val_auc = val_auc;
            state.best_val_loss = val_loss;
            state.epochs_since_improvement = 0;
            best_params = Some(state.model.params().clone());
            best_epoch = epoch;
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= cfg.patience {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }

    let mut model = state.model;
    if let Some(best) = best_params {
        *model.params_mut() = best;
    }
    Ok(FitOutcome {
        model,
        history,
        best_epoch,
        stopped_early,
    })
}

pub const HISTORY_HEADER: [&str; 6] =
    ["epoch", "train_loss", "val_auc", "val_acc", "lr", "seconds"];

pub fn write_history(path: impl AsRef<Path>, history: &[EpochRecord]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(HISTORY_HEADER).map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_auc.to_string(),
            r.val_acc.to_string(),
            r.lr.to_string(),
            format!("{:.3}", r.seconds),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
