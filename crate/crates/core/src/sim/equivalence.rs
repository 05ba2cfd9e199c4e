use serde::Serialize;

use super::fbftl::{upload_features, ParameterServer};
use super::minibatch::MinibatchConfig;
use super::{initial_model, round_members, run_fedavg, Federation, FederationConfig, PayloadMeter};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::payload::Method;

/// How the server-side batches line up with the FedAvg rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOrder {
    /// Step `t` uses the union of the clients FedAvg selects in round `t`.
    Matched,
    /// The same batches in reverse order, as a negative control.
    Reversed,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub order: BatchOrder,
    pub rounds: usize,
    /// Largest absolute head-parameter difference over all rounds.
    pub max_deviation: f64,
    pub fedavg_test_acc: Vec<f64>,
    pub fbftl_test_acc: Vec<f64>,
}

impl EquivalenceReport {
    pub fn accuracies_identical(&self) -> bool {
        self.fedavg_test_acc == self.fbftl_test_acc
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance && self.accuracies_identical()
    }
}

/// Trains FTL_c by FedAvg and FbFTL on the server from the same initial
/// head, feeding the server one batch per FedAvg round, and compares the
/// head parameters after every round. Early stopping is disabled and every
/// round is evaluated.
pub fn run_matched_equivalence(
    fed: &Federation<'_>,
    cfg: &FederationConfig,
    order: BatchOrder,
) -> Result<EquivalenceReport> {
    let cfg = FederationConfig {
        patience: None,
        eval_every: 1,
        ..cfg.clone()
    };
    let fedavg = run_fedavg(Method::FtlHead, fed, &cfg, true)?;

    let model = initial_model(Method::Fbftl, fed, cfg.seed)?;
    if model.head().params() != initial_model(Method::FtlHead, fed, cfg.seed)?.head().params() {
        return Err(Error::config("FTL_c and FbFTL heads start from different parameters"));
    }
    // oracle-side view: features keep their client grouping
    let mut scratch = PayloadMeter::new();
    let uploads = upload_features(model.extractor(), fed.clients, cfg.bit_width, 0, &mut scratch)?;
    let mut offsets = Vec::with_capacity(uploads.len());
    let mut features: Vec<Sample> = Vec::new();
    for (_, batch) in uploads {
        offsets.push(features.len()..features.len() + batch.len());
        features.extend(batch.into_iter().map(|f| Sample { x: f.z, y: f.y }));
    }
    let mut schedule = Vec::with_capacity(fedavg.rounds);
    for round in 1..=fedavg.rounds {
        let batch: Vec<usize> = round_members(fed, &cfg, round)?
            .into_iter()
            .flat_map(|i| offsets[i].clone())
            .collect();
        schedule.push(batch);
    }
    if order == BatchOrder::Reversed {
        schedule.reverse();
    }

    let server = ParameterServer::from_features(model, features, fed.val, fed.test)?;
    let training = MinibatchConfig {
        optimizer: cfg.optimizer.clone(),
        batch_size: 1,
        max_steps: schedule.len(),
        eval_every: 1,
        patience: None,
        seed: cfg.seed,
        schedule: Some(schedule),
        record_trajectory: true,
    };
    let (_, outcome) = server.train(&training)?;

    let max_deviation = fedavg
        .trajectory
        .iter()
        .zip(&outcome.trajectory)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        order,
        rounds: fedavg.rounds,
        max_deviation,
        fedavg_test_acc: fedavg.trace.iter().map(|m| m.test_acc).collect(),
        fbftl_test_acc: outcome.trace.iter().map(|m| m.test_acc).collect(),
    })
}
