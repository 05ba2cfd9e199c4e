use rand::seq::SliceRandom;

use super::fedavg::diverged;
use super::{accuracy, EarlyStop, RoundMetrics};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{Gradient, Network, OptimizerConfig, OptimizerState, ParamVector};
use crate::seed::rng_for;

/// Centralized mini-batch training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    pub patience: Option<usize>,
    pub seed: u64,
    /// Explicit batches of training indices, one per step, replacing the
    /// per-epoch reshuffle.
    pub schedule: Option<Vec<Vec<usize>>>,
    pub record_trajectory: bool,
}

impl MinibatchConfig {
    pub fn new(optimizer: OptimizerConfig, batch_size: usize, max_steps: usize, seed: u64) -> Self {
        Self {
            optimizer,
            batch_size,
            max_steps,
            eval_every: 1,
            patience: None,
            seed,
            schedule: None,
            record_trajectory: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct MinibatchOutcome {
    /// Evaluation points; the communication columns are zero.
    pub trace: Vec<RoundMetrics>,
    pub steps: usize,
    pub trajectory: Vec<ParamVector>,
}

/// Trains `net` on `train` with summed mini-batch gradients, reshuffling
/// at the start of every epoch. The last batch of an epoch may be short.
pub fn train_minibatch(
    net: &mut Network,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    cfg: &MinibatchConfig,
) -> Result<MinibatchOutcome> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.max_steps == 0 || cfg.eval_every == 0 {
        return Err(Error::config(
            "batch size, step budget and eval interval must be positive",
        ));
    }
    if cfg.patience == Some(0) {
        return Err(Error::config("patience must be positive"));
    }
    if let Some(s) = &cfg.schedule {
        if s.iter().flatten().any(|&i| i >= train.len()) || s.iter().any(|b| b.is_empty()) {
            return Err(Error::config(
                "schedule references missing samples or holds an empty batch",
            ));
        }
    }
    let max_steps = cfg
        .schedule
        .as_ref()
        .map_or(cfg.max_steps, |s| s.len().min(cfg.max_steps));

    let mut opt = OptimizerState::new(cfg.optimizer.clone(), net.param_count())?;
    let mut out = MinibatchOutcome::default();
    let mut stop = EarlyStop::new(cfg.patience);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;

    for step in 1..=max_steps {
        let batch: Vec<usize> = match &cfg.schedule {
            Some(s) => s[step - 1].clone(),
            None => {
                if cursor >= order.len() {
                    order = (0..train.len()).collect();
                    order.shuffle(&mut rng_for(cfg.seed, "epoch", &[epoch]));
                    epoch += 1;
                    cursor = 0;
                }
                let end = (cursor + cfg.batch_size).min(order.len());
                let b = order[cursor..end].to_vec();
                cursor = end;
                b
            }
        };

        let mut total = Gradient::zeros(net.param_count());
        let mut loss = 0.0;
        for (pos, &i) in batch.iter().enumerate() {
            let mut rng = rng_for(cfg.seed, "dropout-ps", &[step as u64, pos as u64]);
            let (l, g) = net
                .backward_with(&train[i].x, train[i].y, Some(&mut rng))
                .map_err(|e| diverged(step, e, &out.trace))?;
            total.accumulate(&g);
            loss += l;
        }
        let mut params = net.params();
        opt.step(params.as_mut_slice(), total.as_slice())
            .map_err(|e| diverged(step, e, &out.trace))?;
        net.set_params(&params)?;
        out.steps = step;
        if cfg.record_trajectory {
            out.trajectory.push(params);
        }

        let train_loss = loss / batch.len() as f64;
        if !train_loss.is_finite() {
            return Err(diverged(
                step,
                Error::NumericFault("training loss is not finite".into()),
                &out.trace,
            ));
        }
        if step % cfg.eval_every == 0 || step == max_steps {
            let val_acc = accuracy(val, |x| net.predict(x))?;
            let test_acc = accuracy(test, |x| net.predict(x))?;
            out.trace.push(RoundMetrics {
                round: step,
                train_loss,
                val_acc,
                test_acc,
                cum_uplink_bits: 0,
                cum_downlink_bits: 0,
            });
            if stop.observe(val_acc) {
                break;
            }
        }
    }
    Ok(out)
}
