//! Training loop with early stopping, multi-graph pretraining, and
//! final-layer fine-tuning.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::error::Error;
use crate::eval::{evaluate, Directions, Metrics};
use crate::kg::DatasetSplits;
use crate::objective::{batch_objective, derived_rng, stream, ObjectiveConfig, TrainQuery};
use crate::optim::{AdamW, Moments};
use crate::params::{Dims, ModelParams};
use crate::rdg::build_rdg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FreezePolicy {
    None,
    /// Only the last entity layer and the scorer are trained.
    FinalLayer,
}

impl FreezePolicy {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(FreezePolicy::None),
            "final-layer" | "final_layer" => Some(FreezePolicy::FinalLayer),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            FreezePolicy::None => "none",
            FreezePolicy::FinalLayer => "final-layer",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dims: Dims,
    pub learning_rate: f64,
    /// Decoupled AdamW decay.
    pub weight_decay: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub freeze: FreezePolicy,
    pub dropout: f64,
    /// Coupled `‖Θ‖²` coefficient added to the loss.
    pub l2_penalty: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dims: Dims::default(),
            learning_rate: 0.005,
            weight_decay: 1e-5,
            lr_decay: 1.0,
            negatives: 64,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            freeze: FreezePolicy::None,
            dropout: 0.0,
            l2_penalty: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr decay must lie in (0, 1]");
        }
        if self.negatives == 0 {
            return bad("at least one negative per query is required");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.l2_penalty < 0.0 {
            return bad("regularization coefficients must be non-negative");
        }
        if self.dims.dim == 0 || self.dims.heads == 0 {
            return bad("hidden size and head count must be positive");
        }
        Ok(())
    }

    pub fn objective(&self, epoch: usize) -> ObjectiveConfig {
        ObjectiveConfig {
            negatives: self.negatives,
            l2_penalty: self.l2_penalty,
            dropout: self.dropout,
            seed: self.seed,
            epoch: epoch as u64,
            final_layer_only: self.freeze == FreezePolicy::FinalLayer,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Metrics,
    pub lr: f64,
    pub skipped_queries: usize,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_mrr,val_h1,val_h10,lr,skipped_queries";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6e},{}",
            self.epoch, self.train_loss, self.val.mrr, self.val.hits1, self.val.hits10, self.lr, self.skipped_queries
        )
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for e in log {
        let _ = writeln!(s, "{}", e.csv_row());
    }
    s
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the highest validation MRR.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Every fact of the training graph, base and inverse, as a masked query.
pub fn training_queries(splits: &DatasetSplits) -> Vec<TrainQuery> {
    splits
        .train
        .facts()
        .iter()
        .map(|&f| TrainQuery::from_fact(&splits.train, f))
        .collect()
}

pub fn initial_params(dims: Dims, seed: u64) -> ModelParams<f32> {
    ModelParams::init(dims, &mut derived_rng(seed, stream::INIT, 0, 0))
}

pub fn train(splits: &DatasetSplits, config: &TrainConfig) -> Result<TrainOutcome, Error> {
    train_from(splits, config, None, &mut |_| {})
}

/// Trains from `init` (or a fresh initialization) and calls `observe` after
/// every epoch.
///
/// Each epoch shuffles the training queries, then runs forward, negative
/// sampling, backward, and an optimizer step per batch, and finally scores
/// the validation queries. Training stops after `patience` epochs without a
/// strictly better validation MRR. Without validation queries there is no
/// early stopping and the last epoch is kept.
pub fn train_from(
    splits: &DatasetSplits,
    config: &TrainConfig,
    init: Option<&Checkpoint>,
    observe: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, Error> {
    config.validate()?;
    let queries = training_queries(splits);
    if queries.is_empty() {
        return Err(Error::Config("training graph has no facts".into()));
    }
    let mut params = match init {
        Some(c) => {
            c.check_dims(&config.dims)?;
            c.params.clone()
        }
        None => initial_params(config.dims, config.seed),
    };
    let mut moments = Moments::new(&params);
    let rdg = build_rdg(&splits.train);
    let mut best: Option<Checkpoint> = init.cloned();
    let mut best_mrr = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..queries.len()).collect();
    let has_valid = !splits.valid.is_empty();

    for epoch in 0..config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(config.seed, stream::SHUFFLE, epoch as u64, 0));
        let lr = AdamW::scheduled_lr(config.learning_rate, config.lr_decay, epoch);
        let opt = AdamW {
            lr,
            weight_decay: config.weight_decay,
            final_layer_only: config.freeze == FreezePolicy::FinalLayer,
        };
        let obj = config.objective(epoch);
        let mut loss_sum = 0.0;
        let mut scored = 0usize;
        let mut skipped = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainQuery> = chunk.iter().map(|&i| queries[i].clone()).collect();
            let first = (b * config.batch_size) as u64;
            let out = batch_objective(&splits.train, &rdg, &params, &batch, first, &obj, true)?;
            skipped += out.skipped;
            if out.scored == 0 {
                continue;
            }
            loss_sum += out.loss as f64 * out.scored as f64;
            scored += out.scored;
            opt.step(
                &mut params,
                out.grads.as_ref().expect("gradients requested"),
                &mut moments,
            );
        }
        let val = if has_valid {
            evaluate(
                &params,
                &splits.train,
                &splits.valid,
                &splits.known_true,
                Directions::Both,
            )?
            .overall
        } else {
            Metrics::default()
        };
        let entry = EpochLog {
            epoch,
            train_loss: if scored > 0 { loss_sum / scored as f64 } else { 0.0 },
            val,
            lr,
            skipped_queries: skipped,
        };
        observe(&entry);
        log.push(entry);

        if !has_valid || val.mrr > best_mrr {
            best_mrr = val.mrr;
            stale = 0;
            best = Some(Checkpoint {
                params: params.clone(),
                epoch: epoch as u64,
                best_val_mrr: val.mrr,
                moments: Some(moments.clone()),
            });
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => Checkpoint::new(params),
    };
    Ok(TrainOutcome { best, log })
}

/// Trains on each graph in turn, starting every stage from the previous
/// stage's best parameters. Optimizer moments restart with each stage.
pub fn pretrain_sequence(
    stages: &[(&DatasetSplits, TrainConfig)],
    observe: &mut dyn FnMut(usize, &EpochLog),
) -> Result<(Checkpoint, Vec<Vec<EpochLog>>), Error> {
    let Some((_, first)) = stages.first() else {
        return Err(Error::Config("no pretraining stages".into()));
    };
    let dims = first.dims;
    let mut current: Option<Checkpoint> = None;
    let mut logs = Vec::new();
    for (k, (splits, config)) in stages.iter().enumerate() {
        if config.dims != dims {
            return Err(Error::Config(format!(
                "stage {k} dimensions {} differ from stage 0 dimensions {dims}",
                config.dims
            )));
        }
        let out = train_from(splits, config, current.as_ref(), &mut |e| observe(k, e))?;
        let mut ckpt = out.best;
        ckpt.moments = None;
        current = Some(ckpt);
        logs.push(out.log);
    }
    Ok((current.expect("at least one stage"), logs))
}

/// Continues training `checkpoint` with only the final entity layer and the
/// scorer unfrozen.
pub fn finetune(
    checkpoint: &Checkpoint,
    splits: &DatasetSplits,
    config: &TrainConfig,
    observe: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, Error> {
    let config = TrainConfig {
        freeze: FreezePolicy::FinalLayer,
        dims: checkpoint.dims(),
        ..config.clone()
    };
    let start = Checkpoint {
        moments: None,
        ..checkpoint.clone()
    };
    if config.max_epochs == 0 {
        return Ok(TrainOutcome {
            best: checkpoint.clone(),
            log: Vec::new(),
        });
    }
    train_from(splits, &config, Some(&start), observe)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for c in [
            TrainConfig {
                lr_decay: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                negatives: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                patience: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(frozen.validate().is_ok());
    }
}
