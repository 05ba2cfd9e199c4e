//! Round-based simulation of the four training protocols.

mod equivalence;
mod fbftl;
mod fedavg;
mod meter;
mod minibatch;
mod shuffle;

pub use equivalence::{run_matched_equivalence, BatchOrder, EquivalenceReport};
pub use fbftl::{run_fbftl, upload_features, FbftlRun, ParameterServer};
pub use fedavg::run_fedavg;
pub use meter::{Direction, MeterEvent, PayloadMeter};
pub use minibatch::{train_minibatch, MinibatchConfig, MinibatchOutcome};
pub use shuffle::{shuffle_and_strip, AnonymizedUpload};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Client, Sample};
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, SplitModel};
use crate::nn::{Gradient, Network, OptimizerConfig, ParamVector};
use crate::payload::{downlink_total, uplink_total, FedAvgBatches, Method, PayloadInputs};
use crate::seed::rng_for;

/// One evaluation point of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean loss over the samples used in this round, before the update.
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub cum_uplink_bits: u128,
    pub cum_downlink_bits: u128,
}

/// Federation and training settings shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// `C`, the fraction of clients picked each round.
    pub client_fraction: f64,
    pub optimizer: OptimizerConfig,
    /// Round budget. For FbFTL a round is one server-side mini-batch step.
    pub max_rounds: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Stop after this many evaluations without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_bit_width")]
    pub bit_width: u64,
    /// Meter `d` extra bits per FedAvg upload for the sample count `K_u`.
    #[serde(default)]
    pub meter_sample_counts: bool,
    /// Meter `ceil(log2 N)` extra bits per FbFTL sample for its label.
    #[serde(default)]
    pub meter_label_bits: bool,
    /// Server-side FbFTL batch size. Defaults to the number of samples
    /// FedAvg would see per round.
    #[serde(default)]
    pub fbftl_batch_size: Option<usize>,
}

fn default_eval_every() -> usize {
    1
}

fn default_bit_width() -> u64 {
    32
}

impl FederationConfig {
    pub fn new(client_fraction: f64, optimizer: OptimizerConfig, max_rounds: usize) -> Self {
        Self {
            client_fraction,
            optimizer,
            max_rounds,
            eval_every: 1,
            patience: None,
            seed: 0,
            bit_width: 32,
            meter_sample_counts: false,
            meter_label_bits: false,
            fbftl_batch_size: None,
        }
    }

    pub fn validate(&self, num_clients: usize) -> Result<()> {
        clients_per_round(num_clients, self.client_fraction)?;
        self.optimizer.validate()?;
        if self.max_rounds == 0 {
            return Err(Error::config("max_rounds must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("patience must be positive"));
        }
        if self.bit_width == 0 {
            return Err(Error::config("bit width must be positive"));
        }
        if self.fbftl_batch_size == Some(0) {
            return Err(Error::config("fbftl batch size must be positive"));
        }
        Ok(())
    }
}

/// Everything a run reads: the target architecture, the source model the
/// extractor is copied from, the client partition and the evaluation sets.
#[derive(Clone, Copy, Debug)]
pub struct Federation<'a> {
    pub arch: &'a ArchitectureSpec,
    /// Required by every method except FL.
    pub pretrained: Option<&'a Network>,
    pub clients: &'a [Client],
    pub val: &'a [Sample],
    pub test: &'a [Sample],
}

impl Federation<'_> {
    fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::config("federation has no clients"));
        }
        if self.clients.iter().any(|c| c.samples.is_empty()) {
            return Err(Error::config("every client needs at least one sample"));
        }
        let mut ids: Vec<usize> = self.clients.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("client ids must be distinct"));
        }
        if self.val.is_empty() || self.test.is_empty() {
            return Err(Error::config("validation and test sets must be non-empty"));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.samples.len()).sum()
    }

    fn pretrained(&self, method: Method) -> Result<&Network> {
        self.pretrained
            .ok_or_else(|| Error::config(format!("{method} needs a pre-trained source model")))
    }
}

/// `round(U * C)`, with `0 < C <= 1` and a result of at least one.
pub fn clients_per_round(num_clients: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("client fraction {fraction} not in (0, 1]")));
    }
    let m = (num_clients as f64 * fraction).round() as usize;
    if m == 0 {
        return Err(Error::config(format!(
            "{num_clients} clients x fraction {fraction} selects nobody"
        )));
    }
    Ok(m)
}

/// `round(U * C)` distinct ids from `0..U`, uniformly without replacement,
/// in ascending order.
pub fn sample_clients<R: Rng + ?Sized>(num_clients: usize, fraction: f64, rng: &mut R) -> Result<Vec<usize>> {
    let m = clients_per_round(num_clients, fraction)?;
    let mut ids = rand::seq::index::sample(rng, num_clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Clients selected in `round` (1-based), as indices into the client list.
pub(crate) fn round_selection(seed: u64, round: usize, num_clients: usize, fraction: f64) -> Result<Vec<usize>> {
    sample_clients(num_clients, fraction, &mut rng_for(seed, "select", &[round as u64]))
}

/// Positions in `fed.clients` of the clients selected in `round`, in
/// ascending id order. Selection indices refer to the id-sorted client list.
pub(crate) fn round_members(fed: &Federation<'_>, cfg: &FederationConfig, round: usize) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..fed.clients.len()).collect();
    order.sort_by_key(|&i| fed.clients[i].id);
    let mut picked: Vec<usize> = round_selection(cfg.seed, round, fed.clients.len(), cfg.client_fraction)?
        .into_iter()
        .map(|i| order[i])
        .collect();
    picked.sort_by_key(|&i| fed.clients[i].id);
    Ok(picked)
}

/// Initial target model for `method`. FL builds every layer fresh; the
/// transfer methods copy the extractor from the source model. Heads are
/// drawn from the same stream in both cases.
pub fn initial_model(method: Method, fed: &Federation<'_>, seed: u64) -> Result<SplitModel> {
    let mut rng = rng_for(seed, "init", &[]);
    match method {
        Method::Fl => SplitModel::split_network(fed.arch, fed.arch.build_network(&mut rng)?),
        _ => SplitModel::split_at(fed.arch, fed.pretrained(method)?, &mut rng),
    }
}

/// Fraction of `samples` whose argmax prediction matches the label.
pub fn accuracy(samples: &[Sample], mut predict: impl FnMut(&[f64]) -> Result<usize>) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut hits = 0usize;
    for s in samples {
        if predict(&s.x)? == s.y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Sum of per-sample gradients over `samples`, plus the summed loss.
/// `frozen` runs first without contributing parameters.
pub(crate) fn summed_gradient<R: Rng>(
    net: &Network,
    frozen: Option<&Network>,
    samples: &[Sample],
    mut dropout_rng: impl FnMut(usize) -> R,
) -> Result<(f64, Gradient)> {
    let mut total = Gradient::zeros(net.param_count());
    let mut loss = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let input = match frozen {
            Some(f) => f.forward(&s.x)?,
            None => s.x.clone(),
        };
        let mut rng = dropout_rng(k);
        let (l, g) = net.backward_with(&input, s.y, Some(&mut rng))?;
        total.accumulate(&g);
        loss += l;
    }
    Ok((loss, total))
}

/// Validation-based early stopping counted in evaluation points.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStop {
    patience: Option<usize>,
    best: f64,
    stale: usize,
}

impl EarlyStop {
    pub(crate) fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            stale: 0,
        }
    }

    /// Records a validation accuracy; true when training should stop.
    pub(crate) fn observe(&mut self, val_acc: f64) -> bool {
        if val_acc > self.best {
            self.best = val_acc;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.patience.is_some_and(|p| self.stale >= p)
    }
}

/// Outcome of one simulated training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: Method,
    pub model: SplitModel,
    pub meter: PayloadMeter,
    pub trace: Vec<RoundMetrics>,
    /// Rounds (FedAvg) or server steps (FbFTL) actually run.
    pub rounds: usize,
    pub clients_per_round: usize,
    pub total_samples: usize,
    /// Trainable parameters after every round, when recorded.
    pub trajectory: Vec<ParamVector>,
    pub final_test_acc: f64,
    pub(crate) bit_width: u64,
    pub(crate) sample_count_bits: u64,
    pub(crate) label_bits: u64,
}

/// Metered totals next to the closed-form prediction for the same run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MeteringCheck {
    pub metered_uplink: u128,
    pub metered_downlink: u128,
    pub analytic_uplink: u128,
    pub analytic_downlink: u128,
}

impl MeteringCheck {
    pub fn matches(&self) -> bool {
        self.metered_uplink == self.analytic_uplink && self.metered_downlink == self.analytic_downlink
    }
}

impl RunResult {
    /// Payload-calculator inputs describing exactly this run.
    pub fn payload_inputs(&self, arch: &ArchitectureSpec) -> Result<PayloadInputs> {
        let batches = (self.rounds * self.clients_per_round) as u64;
        let fedavg = if self.method.is_fedavg() { batches } else { 0 };
        let mut inputs = PayloadInputs::new(
            self.bit_width,
            self.clients_per_round as u64,
            FedAvgBatches {
                fl: fedavg,
                ftl_f: fedavg,
                ftl_c: fedavg,
            },
            self.total_samples as u64,
            arch.counts(),
        )?;
        inputs.sample_count_bits = self.sample_count_bits;
        inputs.label_bits = self.label_bits;
        Ok(inputs)
    }

    pub fn metering_check(&self, arch: &ArchitectureSpec) -> Result<MeteringCheck> {
        let inputs = self.payload_inputs(arch)?;
        Ok(MeteringCheck {
            metered_uplink: self.meter.uplink_bits(),
            metered_downlink: self.meter.downlink_bits(),
            analytic_uplink: uplink_total(self.method, &inputs),
            analytic_downlink: downlink_total(self.method, &inputs),
        })
    }
}

/// Runs `method` end to end.
pub fn run_method(method: Method, fed: &Federation<'_>, cfg: &FederationConfig) -> Result<RunResult> {
    match method {
        Method::Fbftl => run_fbftl(fed, cfg).map(|r| r.result),
        _ => run_fedavg(method, fed, cfg, false),
    }
}

/// `ceil(log2 n)`, the bits of a label over `n` classes.
pub fn label_bits(classes: usize) -> u64 {
    if classes <= 1 {
        0
    } else {
        u64::from(usize::BITS - (classes - 1).leading_zeros())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_of_selected_clients() {
        assert_eq!(clients_per_round(6250, 1.28e-3).unwrap(), 8);
        assert_eq!(clients_per_round(1176, 6.8e-3).unwrap(), 8);
        assert_eq!(clients_per_round(10, 1.0).unwrap(), 10);
        assert!(clients_per_round(10, 0.0).is_err());
        assert!(clients_per_round(10, 1.5).is_err());
        assert!(clients_per_round(10, 0.01).is_err());
    }

    #[test]
    fn selection_is_distinct_and_sorted() {
        let mut rng = rng_for(3, "t", &[]);
        let ids = sample_clients(1176, 6.8e-3, &mut rng).unwrap();
        assert_eq!(ids.len(), 8);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert!(ids.iter().all(|&i| i < 1176));
        assert_eq!(sample_clients(5, 1.0, &mut rng).unwrap(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn selection_is_uniform() {
        let mut rng = rng_for(4, "t", &[]);
        let mut hits = [0usize; 10];
        for _ in 0..20_000 {
            for i in sample_clients(10, 0.3, &mut rng).unwrap() {
                hits[i] += 1;
            }
        }
        for h in hits {
            assert!((h as f64 / 20_000.0 - 0.3).abs() < 0.015, "{h}");
        }
    }

    #[test]
    fn label_bit_widths() {
        assert_eq!(label_bits(1), 0);
        assert_eq!(label_bits(2), 1);
        assert_eq!(label_bits(4), 2);
        assert_eq!(label_bits(7), 3);
        assert_eq!(label_bits(10), 4);
    }

    #[test]
    fn early_stop_counts_stale_evaluations() {
        let mut es = EarlyStop::new(Some(2));
        assert!(!es.observe(0.5));
        assert!(!es.observe(0.6));
        assert!(!es.observe(0.6));
        assert!(es.observe(0.55));
        let mut never = EarlyStop::new(None);
        assert!((0..100).all(|_| !never.observe(0.1)));
    }
}
