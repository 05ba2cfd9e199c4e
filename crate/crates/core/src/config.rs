//! TOML run configurations and the experiment pipeline they describe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    load_csv, partition_clients, split_train_test, synth_gaussian_mixture, Client, CsvSchema, Dataset, Partitioning,
    Sample, Standardizer, TransferSplit,
};
use crate::error::{Error, Result};
use crate::model::ArchitectureSpec;
use crate::nn::{Network, OptimizerConfig};
use crate::payload::{FedAvgBatches, Method, PayloadInputs, PublishedCell};
use crate::seed::{derive_seed, rng_for};
use crate::sim::{train_minibatch, Federation, FederationConfig, MinibatchConfig};

/// Hex SHA-256 of a config file's bytes, embedded in every output header.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::config(format!("{what}: {e}")))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Inputs of the payload comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayloadConfig {
    /// Architecture file, relative to the config file.
    pub arch: PathBuf,
    /// Overrides the architecture's bit width.
    #[serde(default)]
    pub bit_width: Option<u64>,
    pub clients_per_round: u64,
    pub batches: FedAvgBatches,
    /// `sum K_u`, the samples uploaded once under FbFTL.
    pub total_samples: u64,
    #[serde(default)]
    pub sample_count_bits: u64,
    #[serde(default)]
    pub label_bits: u64,
    /// Published table cells to check the computed values against.
    #[serde(default)]
    pub published: Vec<PublishedCell>,
}

impl PayloadConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse(text, "payload config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read(path)?)
    }

    /// Loads the referenced architecture and assembles calculator inputs.
    pub fn inputs(&self, base_dir: &Path) -> Result<(ArchitectureSpec, PayloadInputs)> {
        let arch = ArchitectureSpec::load(&resolve(base_dir, &self.arch))?;
        let mut inputs = PayloadInputs::new(
            self.bit_width.unwrap_or(arch.bit_width),
            self.clients_per_round,
            self.batches,
            self.total_samples,
            arch.counts(),
        )?;
        inputs.sample_count_bits = self.sample_count_bits;
        inputs.label_bits = self.label_bits;
        Ok((arch, inputs))
    }
}

/// A class given by position or by name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labelled CSV corpus. Takes precedence over `synthetic`.
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    pub source_classes: Vec<ClassRef>,
    pub target_classes: Vec<ClassRef>,
    pub test_fraction: f64,
    /// Carved out of the target training split for early stopping.
    pub val_fraction: f64,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub partitioning: Partitioning,
    pub clients: usize,
    pub samples_per_client: usize,
}

fn yes() -> bool {
    true
}

/// Centralized training of the source model the extractor comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub max_steps: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub patience: Option<usize>,
}

fn default_eval_every() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    /// Target architecture file, relative to the config file.
    pub arch: PathBuf,
    /// Source architecture file; needed by every method except FL.
    #[serde(default)]
    pub source_arch: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    pub federation: FederationConfig,
}

impl SimulateConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse(text, "simulate config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read(path)?)
    }
}

/// Data, source model and client partition ready for simulation.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub arch: ArchitectureSpec,
    pub source_model: Option<Network>,
    /// Held-out accuracy of the source model on its own task.
    pub source_accuracy: Option<f64>,
    pub clients: Vec<Client>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub federation: FederationConfig,
}

impl Experiment {
    /// Builds everything the config describes. Each randomized step draws
    /// from its own stream derived from the master seed.
    pub fn build(cfg: &SimulateConfig, base_dir: &Path) -> Result<Self> {
        let seed = cfg.seed;
        let arch = ArchitectureSpec::load(&resolve(base_dir, &cfg.arch))?;
        let d = &cfg.data;
        let corpus = match (&d.csv, &d.synthetic) {
            (Some(p), _) => load_csv(&resolve(base_dir, p), &d.schema)?,
            (None, Some(s)) => synth_gaussian_mixture(
                s.classes,
                s.dim,
                s.per_class,
                s.separation,
                &mut rng_for(seed, "data", &[]),
            )?,
            (None, None) => return Err(Error::config("data needs either csv or synthetic")),
        };
        let resolve_classes = |refs: &[ClassRef]| -> Result<Vec<usize>> {
            refs.iter()
                .map(|r| match r {
                    ClassRef::Index(i) => Ok(*i),
                    ClassRef::Name(n) => corpus
                        .class_names()
                        .iter()
                        .position(|c| c == n)
                        .ok_or_else(|| Error::config(format!("unknown class {n:?}"))),
                })
                .collect()
        };
        let split = TransferSplit::by_classes(
            &corpus,
            &resolve_classes(&d.source_classes)?,
            &resolve_classes(&d.target_classes)?,
        )?;
        let (train, test) = split_train_test(&split.target, d.test_fraction, &mut rng_for(seed, "split", &[]))?;
        let (train, val) = split_train_test(&train, d.val_fraction, &mut rng_for(seed, "val", &[]))?;
        let (mut source, mut train, mut val, mut test) = (split.source, train, val, test);
        if d.standardize {
            // the source model ships with its own input normalization
            let st = Standardizer::fit(&source)?;
            source = st.apply(&source);
            train = st.apply(&train);
            val = st.apply(&val);
            test = st.apply(&test);
        }
        let partition = partition_clients(
            &train,
            d.clients,
            d.samples_per_client,
            d.partitioning,
            &mut rng_for(seed, "partition", &[]),
        )?;

        let (source_model, source_accuracy) = if cfg.method == Method::Fl {
            (None, None)
        } else {
            let path = cfg
                .source_arch
                .as_ref()
                .ok_or_else(|| Error::config(format!("{} needs source_arch", cfg.method)))?;
            let pre = cfg
                .pretrain
                .as_ref()
                .ok_or_else(|| Error::config(format!("{} needs a [pretrain] section", cfg.method)))?;
            let source_arch = ArchitectureSpec::load(&resolve(base_dir, path))?;
            let (net, acc) = pretrain(&source_arch, &source, pre, d.val_fraction, seed)?;
            (Some(net), Some(acc))
        };

        let mut federation = cfg.federation.clone();
        federation.seed = derive_seed(seed, "federation", &[]);
        Ok(Self {
            arch,
            source_model,
            source_accuracy,
            clients: partition.clients,
            val: val.into_samples(),
            test: test.into_samples(),
            federation,
        })
    }

    pub fn federation(&self) -> Federation<'_> {
        Federation {
            arch: &self.arch,
            pretrained: self.source_model.as_ref(),
            clients: &self.clients,
            val: &self.val,
            test: &self.test,
        }
    }
}

/// Trains the source model centrally and returns it with its held-out
/// accuracy.
pub fn pretrain(
    arch: &ArchitectureSpec,
    source: &Dataset,
    cfg: &PretrainConfig,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Network, f64)> {
    let (train, held) = split_train_test(source, holdout_fraction, &mut rng_for(seed, "pretrain-split", &[]))?;
    if held.is_empty() {
        return Err(Error::config("source holdout is empty; raise val_fraction"));
    }
    let mut net = arch.build_network(&mut rng_for(seed, "pretrain-init", &[]))?;
    let mcfg = MinibatchConfig {
        optimizer: cfg.optimizer.clone(),
        batch_size: cfg.batch_size,
        max_steps: cfg.max_steps,
        eval_every: cfg.eval_every,
        patience: cfg.patience,
        seed: derive_seed(seed, "pretrain", &[]),
        schedule: None,
        record_trajectory: false,
    };
    let out = train_minibatch(&mut net, train.samples(), held.samples(), held.samples(), &mcfg)?;
    let acc = out.trace.last().map_or(0.0, |m| m.val_acc);
    Ok((net, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_refs_accept_indices_and_names() {
        #[derive(Deserialize)]
        struct T {
            c: Vec<ClassRef>,
        }
        let t: T = toml::from_str(r#"c = [1, "SIRA"]"#).unwrap();
        assert_eq!(t.c, vec![ClassRef::Index(1), ClassRef::Name("SIRA".into())]);
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(PayloadConfig::from_toml_str("arch = 'a'\nclients_per_round = 1\ntotal_samples = 1\nbogus = 2\n[batches]\nfl = 1\nftl_f = 1\nftl_c = 1\n").is_err());
    }
}
