use super::{
    accuracy, initial_model, round_members, summed_gradient, EarlyStop, Federation, FederationConfig, PayloadMeter,
    RoundMetrics, RunResult,
};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::SplitModel;
use crate::nn::{Gradient, Network, OptimizerState};
use crate::payload::Method;
use crate::seed::rng_for;

/// Wraps a numeric failure during training into a divergence error that
/// carries every completed evaluation.
pub(crate) fn diverged(round: usize, err: Error, trace: &[RoundMetrics]) -> Error {
    match err {
        Error::NumericFault(reason) => Error::Diverged {
            round,
            reason,
            trace: trace.to_vec(),
        },
        other => other,
    }
}

/// FedAvg for FL, FTL_f and FTL_c.
///
/// Each round the server broadcasts the full model, every selected client
/// uploads the sum of its per-sample gradients over the trainable layers,
/// and the server applies the unweighted sum of those uploads through the
/// optimizer. With `record_trajectory` the trainable parameters are kept
/// after every round.
pub fn run_fedavg(
    method: Method,
    fed: &Federation<'_>,
    cfg: &FederationConfig,
    record_trajectory: bool,
) -> Result<RunResult> {
    if !method.is_fedavg() {
        return Err(Error::invalid(format!("{method} is not a FedAvg method")));
    }
    fed.validate()?;
    cfg.validate(fed.clients.len())?;
    let model = initial_model(method, fed, cfg.seed)?;
    let frozen_checksum = model.extractor_checksum().to_owned();
    let (extractor, head) = model.into_parts();
    let depth = extractor.layers().len();
    let d = u128::from(cfg.bit_width);
    let full_bits = d * (extractor.param_count() + head.param_count()) as u128;

    let head_only = method == Method::FtlHead;
    let mut trainable = if head_only {
        head
    } else {
        Network::new(extractor.layers().iter().chain(head.layers()).cloned().collect())?
    };
    let frozen = head_only.then_some(&extractor);
    let sample_count_bits = if cfg.meter_sample_counts { cfg.bit_width } else { 0 };
    let upload_bits = d * trainable.param_count() as u128 + u128::from(sample_count_bits);

    // the extractor is frozen under FTL_c, so evaluation inputs map once
    let eval_sets = match frozen {
        Some(f) => {
            let map = |set: &[Sample]| -> Result<Vec<Sample>> {
                set.iter()
                    .map(|s| {
                        Ok(Sample {
                            x: f.forward(&s.x)?,
                            y: s.y,
                        })
                    })
                    .collect()
            };
            Some((map(fed.val)?, map(fed.test)?))
        }
        None => None,
    };
    let (val, test) = eval_sets
        .as_ref()
        .map_or((fed.val, fed.test), |(v, t)| (v.as_slice(), t.as_slice()));

    let mut opt = OptimizerState::new(cfg.optimizer.clone(), trainable.param_count())?;
    let mut meter = PayloadMeter::new();
    let mut trace = Vec::new();
    let mut trajectory = Vec::new();
    let mut stop = EarlyStop::new(cfg.patience);
    let mut rounds = 0;

    for round in 1..=cfg.max_rounds {
        let selected = round_members(fed, cfg, round)?;

        meter.record_downlink(round, full_bits);
        let mut total = Gradient::zeros(trainable.param_count());
        let mut loss = 0.0;
        let mut seen = 0usize;
        for &i in &selected {
            let client = &fed.clients[i];
            let (l, g) = summed_gradient(&trainable, frozen, &client.samples, |k| {
                rng_for(cfg.seed, "dropout", &[round as u64, client.id as u64, k as u64])
            })
            .map_err(|e| diverged(round, e, &trace))?;
            meter.record_uplink(round, client.id, upload_bits);
            total.accumulate(&g);
            loss += l;
            seen += client.samples.len();
        }
        let mut params = trainable.params();
        opt.step(params.as_mut_slice(), total.as_slice())
            .map_err(|e| diverged(round, e, &trace))?;
        trainable.set_params(&params)?;
        rounds = round;
        if record_trajectory {
            trajectory.push(params);
        }

        let train_loss = loss / seen as f64;
        if !train_loss.is_finite() {
            return Err(diverged(
                round,
                Error::NumericFault("training loss is not finite".into()),
                &trace,
            ));
        }
        if round % cfg.eval_every == 0 || round == cfg.max_rounds {
            let val_acc = accuracy(val, |x| trainable.predict(x))?;
            let test_acc = accuracy(test, |x| trainable.predict(x))?;
            trace.push(RoundMetrics {
                round,
                train_loss,
                val_acc,
                test_acc,
                cum_uplink_bits: meter.uplink_bits(),
                cum_downlink_bits: meter.downlink_bits(),
            });
            if stop.observe(val_acc) {
                break;
            }
        }
    }

    let model = if head_only {
        SplitModel::from_parts(extractor, trainable)?
    } else {
        let (e, h) = trainable.split_off(depth);
        SplitModel::from_parts(e, h)?
    };
    if head_only && model.extractor_checksum() != frozen_checksum {
        return Err(Error::NumericFault(
            "frozen extractor changed during FTL_c training".into(),
        ));
    }
    let final_test_acc = trace.last().map_or(0.0, |m| m.test_acc);
    Ok(RunResult {
        method,
        model,
        meter,
        trace,
        rounds,
        clients_per_round: super::clients_per_round(fed.clients.len(), cfg.client_fraction)?,
        total_samples: fed.total_samples(),
        trajectory,
        final_test_acc,
        bit_width: cfg.bit_width,
        sample_count_bits,
        label_bits: 0,
    })
}
