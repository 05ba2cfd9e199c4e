use super::minibatch::{train_minibatch, MinibatchConfig, MinibatchOutcome};
use super::{
    clients_per_round, initial_model, label_bits, shuffle_and_strip, AnonymizedUpload, Federation, FederationConfig,
    PayloadMeter, RunResult,
};
use crate::data::{Client, FeatureSample, Sample};
use crate::error::{Error, Result};
use crate::model::SplitModel;
use crate::nn::Network;
use crate::payload::Method;
use crate::seed::rng_for;

/// Every client pushes each local sample through the broadcast extractor
/// and uploads `(z, y)` once. One uplink event is metered per sample.
pub fn upload_features(
    extractor: &Network,
    clients: &[Client],
    bit_width: u64,
    label_bits: u64,
    meter: &mut PayloadMeter,
) -> Result<Vec<(usize, Vec<FeatureSample>)>> {
    let mut out = Vec::with_capacity(clients.len());
    for c in clients {
        let mut batch = Vec::with_capacity(c.samples.len());
        for s in &c.samples {
            let z = extractor.forward(&s.x)?;
            let bits = u128::from(bit_width) * z.len() as u128 + u128::from(label_bits);
            meter.record_uplink(0, c.id, bits);
            batch.push(FeatureSample { z, y: s.y });
        }
        out.push((c.id, batch));
    }
    Ok(out)
}

/// Server side of FbFTL: holds the received feature pairs and trains the
/// head on them. It has no handle on the meter, so any amount of
/// retraining costs no communication.
#[derive(Clone, Debug)]
pub struct ParameterServer {
    extractor: Network,
    extractor_checksum: String,
    head_init: Network,
    features: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

impl ParameterServer {
    /// Takes the target model as initialized and the anonymized uploads in
    /// arrival order. Validation and test inputs are mapped to feature
    /// space once, outside any metered path.
    pub fn new(
        model: SplitModel,
        uploads: Vec<AnonymizedUpload<Vec<FeatureSample>>>,
        val: &[Sample],
        test: &[Sample],
    ) -> Result<Self> {
        let features = uploads
            .into_iter()
            .flat_map(|u| u.content)
            .map(|f| Sample { x: f.z, y: f.y })
            .collect();
        Self::from_features(model, features, val, test)
    }

    pub(crate) fn from_features(
        model: SplitModel,
        features: Vec<Sample>,
        val: &[Sample],
        test: &[Sample],
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let extractor_checksum = model.extractor_checksum().to_owned();
        let (extractor, head_init) = model.into_parts();
        let map = |set: &[Sample]| -> Result<Vec<Sample>> {
            set.iter()
                .map(|s| {
                    Ok(Sample {
                        x: extractor.forward(&s.x)?,
                        y: s.y,
                    })
                })
                .collect()
        };
        let val = map(val)?;
        let test = map(test)?;
        Ok(Self {
            extractor,
            extractor_checksum,
            head_init,
            features,
            val,
            test,
        })
    }

    pub fn features(&self) -> &[Sample] {
        &self.features
    }

    pub fn extractor_checksum(&self) -> &str {
        &self.extractor_checksum
    }

    /// Trains a copy of the initial head on the stored features.
    pub fn train(&self, cfg: &MinibatchConfig) -> Result<(SplitModel, MinibatchOutcome)> {
        let mut head = self.head_init.clone();
        let outcome = train_minibatch(&mut head, &self.features, &self.val, &self.test, cfg)?;
        let model = SplitModel::from_parts(self.extractor.clone(), head)?;
        if model.extractor_checksum() != self.extractor_checksum {
            return Err(Error::NumericFault(
                "extractor changed during server-side training".into(),
            ));
        }
        Ok((model, outcome))
    }
}

/// A finished FbFTL run together with the server state needed to retrain.
#[derive(Clone, Debug)]
pub struct FbftlRun {
    pub result: RunResult,
    pub server: ParameterServer,
    pub training: MinibatchConfig,
}

impl FbftlRun {
    /// Retrains the head from its initial state with new settings. The
    /// run's meter is untouched.
    pub fn retrain(&self, cfg: &MinibatchConfig) -> Result<(SplitModel, MinibatchOutcome)> {
        self.server.train(cfg)
    }
}

/// Server-side batch size matching the samples FedAvg would see per round.
pub(crate) fn default_batch_size(fed: &Federation<'_>, cfg: &FederationConfig) -> Result<usize> {
    if let Some(b) = cfg.fbftl_batch_size {
        return Ok(b);
    }
    let m = clients_per_round(fed.clients.len(), cfg.client_fraction)?;
    let mean = fed.total_samples() as f64 / fed.clients.len() as f64;
    Ok(((m as f64 * mean).round() as usize).max(1))
}

/// FbFTL: one broadcast of the extractor, one upload per sample, then
/// mini-batch training of the head on the server.
pub fn run_fbftl(fed: &Federation<'_>, cfg: &FederationConfig) -> Result<FbftlRun> {
    fed.validate()?;
    cfg.validate(fed.clients.len())?;
    let model = initial_model(Method::Fbftl, fed, cfg.seed)?;
    let classes = model.head().output_dim().unwrap_or(0);
    let label_bits = if cfg.meter_label_bits { label_bits(classes) } else { 0 };

    let mut meter = PayloadMeter::new();
    meter.record_downlink(0, u128::from(cfg.bit_width) * model.extractor().param_count() as u128);
    let uploads = upload_features(model.extractor(), fed.clients, cfg.bit_width, label_bits, &mut meter)?;
    let received = shuffle_and_strip(uploads, &mut rng_for(cfg.seed, "shuffle", &[]))?;
    let server = ParameterServer::new(model, received, fed.val, fed.test)?;

    let training = MinibatchConfig {
        optimizer: cfg.optimizer.clone(),
        batch_size: default_batch_size(fed, cfg)?,
        max_steps: cfg.max_rounds,
        eval_every: cfg.eval_every,
        patience: cfg.patience,
        seed: cfg.seed,
        schedule: None,
        record_trajectory: false,
    };
    let (model, outcome) = server.train(&training)?;
    let mut trace = outcome.trace;
    for m in &mut trace {
        m.cum_uplink_bits = meter.uplink_bits();
        m.cum_downlink_bits = meter.downlink_bits();
    }
    let final_test_acc = trace.last().map_or(0.0, |m| m.test_acc);
    let result = RunResult {
        method: Method::Fbftl,
        model,
        meter,
        trace,
        rounds: outcome.steps,
        clients_per_round: clients_per_round(fed.clients.len(), cfg.client_fraction)?,
        total_samples: fed.total_samples(),
        trajectory: outcome.trajectory,
        final_test_acc,
        bit_width: cfg.bit_width,
        sample_count_bits: 0,
        label_bits,
    };
    Ok(FbftlRun {
        result,
        server,
        training,
    })
}
