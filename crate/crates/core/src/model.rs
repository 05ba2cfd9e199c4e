//! Architecture descriptions, trainable-parameter counting and the split
//! into a frozen feature extractor and a trainable task head.
//!
//! Layer positions are 1-based throughout this module, matching the `cut`
//! field of architecture files: `cut = 2` makes layer 1 the extractor and
//! layers 2.. the head.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        in_dim: u64,
        out_dim: u64,
        #[serde(default)]
        activation: Activation,
        #[serde(default, skip_serializing_if = "is_zero")]
        dropout: f64,
    },
    Conv2d {
        in_channels: u64,
        out_channels: u64,
        kernel_size: u64,
    },
    Pool,
    Flatten,
    Activation {
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl LayerSpec {
    pub fn dense(in_dim: u64, out_dim: u64, activation: Activation) -> Self {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            activation,
            dropout: 0.0,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. })
    }
}

/// Trainable parameters held by one layer: `N+ (N- + 1)` for dense layers,
/// `out (in k^2 + 1)` for 2-d convolutions, zero for everything else.
pub fn count_params(layer: &LayerSpec) -> u64 {
    match *layer {
        LayerSpec::Dense { in_dim, out_dim, .. } => out_dim * (in_dim + 1),
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_size,
        } => out_channels * (in_channels * kernel_size * kernel_size + 1),
        LayerSpec::Pool | LayerSpec::Flatten | LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => 0,
    }
}

/// Parameter totals for architectures whose layer list does not determine
/// them (VGG-16 on CIFAR-10, for one).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclaredCounts {
    pub total_params: u64,
    pub head_params: u64,
}

/// All parameter counts the payload formulas need.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    /// Sum of T_m over every layer.
    pub full: u64,
    /// Sum of T_m from the cut layer on.
    pub head: u64,
    /// Sum of T_m before the cut layer.
    pub extractor: u64,
    /// Input width of the cut layer, i.e. the feature dimension.
    pub cut_input: u64,
    /// Output width of the cut layer.
    pub cut_output: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_bit_width")]
    pub bit_width: u64,
    pub cut: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared: Option<DeclaredCounts>,
    pub layers: Vec<LayerSpec>,
}

fn default_bit_width() -> u64 {
    32
}

impl ArchitectureSpec {
    pub fn new(layers: Vec<LayerSpec>, cut: usize, bit_width: u64) -> Result<Self> {
        let spec = Self {
            name: String::new(),
            bit_width,
            cut,
            declared: None,
            layers,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::config(format!("architecture: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::config("architecture has no layers"));
        }
        if self.bit_width == 0 {
            return Err(Error::config("bit width must be positive"));
        }
        if self.cut == 0 || self.cut > self.layers.len() {
            return Err(Error::config(format!(
                "cut layer {} outside 1..={}",
                self.cut,
                self.layers.len()
            )));
        }
        if !self.layers[self.cut - 1].is_dense() {
            return Err(Error::config(format!(
                "cut layer {} is not a fully connected layer",
                self.cut
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    dropout,
                    ..
                } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(Error::config(format!("layer {} has a zero dimension", i + 1)));
                    }
                    if !(0.0..1.0).contains(&dropout) {
                        return Err(Error::config(format!("layer {} dropout not in [0, 1)", i + 1)));
                    }
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel_size,
                } => {
                    if in_channels == 0 || out_channels == 0 || kernel_size == 0 {
                        return Err(Error::config(format!("layer {} has a zero dimension", i + 1)));
                    }
                }
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                    return Err(Error::config(format!("layer {} dropout not in [0, 1)", i + 1)));
                }
                _ => {}
            }
        }
        if let Some(d) = self.declared {
            if d.head_params > d.total_params {
                return Err(Error::config("declared head parameters exceed the total"));
            }
        }
        Ok(())
    }

    /// Sum of T_m over layers `from_layer..` (1-based). Zero past the end.
    pub fn total_params(&self, from_layer: usize) -> u64 {
        self.layers
            .iter()
            .skip(from_layer.saturating_sub(1))
            .map(count_params)
            .sum()
    }

    fn cut_dims(&self) -> (u64, u64) {
        match self.layers[self.cut - 1] {
            LayerSpec::Dense { in_dim, out_dim, .. } => (in_dim, out_dim),
            _ => unreachable!("validated: cut layer is dense"),
        }
    }

    /// Counts for the payload formulas. Declared totals win over the
    /// layer-derived ones when present.
    pub fn counts(&self) -> ParamCounts {
        let (cut_input, cut_output) = self.cut_dims();
        let (full, head) = match self.declared {
            Some(d) => (d.total_params, d.head_params),
            None => (self.total_params(1), self.total_params(self.cut)),
        };
        ParamCounts {
            full,
            head,
            extractor: full - head,
            cut_input,
            cut_output,
        }
    }

    /// Number of dense layers strictly before the cut, i.e. the extractor's
    /// depth once the layer list is lowered to a [`Network`].
    pub fn extractor_depth(&self) -> usize {
        self.layers[..self.cut - 1].iter().filter(|l| l.is_dense()).count()
    }

    /// Lowers the layer list to a trainable dense network with uniform
    /// initialization. Standalone activation and dropout entries fold into
    /// the dense layer before them; convolution, pooling and flatten layers
    /// are only supported for parameter counting.
    pub fn build_network<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network> {
        let mut layers: Vec<DenseLayer> = Vec::new();
        for (i, spec) in self.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    activation,
                    dropout,
                } => {
                    let layer =
                        DenseLayer::zeros(in_dim as usize, out_dim as usize, activation)?.with_dropout(dropout)?;
                    layers.push(layer);
                }
                LayerSpec::Activation { activation } => {
                    let last = layers.pop().ok_or_else(|| {
                        Error::config(format!("activation layer {} has no dense layer before it", i + 1))
                    })?;
                    if last.activation() != Activation::Identity {
                        return Err(Error::config(format!("layer {} stacks a second activation", i + 1)));
                    }
                    let rebuilt =
                        DenseLayer::zeros(last.in_dim(), last.out_dim(), activation)?.with_dropout(last.dropout())?;
                    layers.push(rebuilt);
                }
                LayerSpec::Dropout { rate } => {
                    let last = layers.pop().ok_or_else(|| {
                        Error::config(format!("dropout layer {} has no dense layer before it", i + 1))
                    })?;
                    layers.push(last.with_dropout(rate)?);
                }
                LayerSpec::Conv2d { .. } | LayerSpec::Pool | LayerSpec::Flatten => {
                    return Err(Error::config(format!(
                        "layer {} ({:?}) is parameter-counted only; the simulator trains dense networks",
                        i + 1,
                        spec
                    )));
                }
            }
        }
        let mut net = Network::new(layers).map_err(|e| Error::config(e.to_string()))?;
        net.init_uniform(rng);
        Ok(net)
    }
}

/// A target model divided at the cut layer. The extractor is fixed at
/// construction; only the head is reachable mutably.
#[derive(Clone, Debug)]
pub struct SplitModel {
    extractor: Network,
    head: Network,
    extractor_checksum: String,
}

impl SplitModel {
    /// Copies the extractor layers out of `pretrained` and initializes a
    /// fresh head for `arch` from `rng`.
    pub fn split_at<R: Rng + ?Sized>(arch: &ArchitectureSpec, pretrained: &Network, rng: &mut R) -> Result<Self> {
        let fresh = arch.build_network(rng)?;
        let depth = arch.extractor_depth();
        if pretrained.layers().len() < depth {
            return Err(Error::config(format!(
                "pre-trained model has {} layers, extractor needs {depth}",
                pretrained.layers().len()
            )));
        }
        let (_, head) = fresh.clone().split_off(depth);
        let (extractor, _) = pretrained.clone().split_off(depth);
        let (expected, _) = fresh.split_off(depth);
        let dims = |n: &Network| -> Vec<(usize, usize, Activation)> {
            n.layers()
                .iter()
                .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
                .collect()
        };
        if dims(&extractor) != dims(&expected) {
            return Err(Error::config(
                "pre-trained layers do not match the architecture's extractor shape",
            ));
        }
        Self::from_parts(extractor, head)
    }

    /// Splits an existing network without reinitializing anything.
    pub fn split_network(arch: &ArchitectureSpec, network: Network) -> Result<Self> {
        let depth = arch.extractor_depth();
        if network.layers().len() < depth {
            return Err(Error::config("network is shallower than the cut"));
        }
        let (extractor, head) = network.split_off(depth);
        Self::from_parts(extractor, head)
    }

    pub fn from_parts(extractor: Network, head: Network) -> Result<Self> {
        if let (Some(out), Some(inp)) = (extractor.output_dim(), head.input_dim()) {
            if out != inp {
                return Err(Error::config(format!(
                    "extractor emits {out} features, head expects {inp}"
                )));
            }
        }
        let extractor_checksum = extractor.params().checksum();
        Ok(Self {
            extractor,
            head,
            extractor_checksum,
        })
    }

    pub fn extractor(&self) -> &Network {
        &self.extractor
    }

    pub fn head(&self) -> &Network {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Network {
        &mut self.head
    }

    pub fn into_parts(self) -> (Network, Network) {
        (self.extractor, self.head)
    }

    /// Checksum of the extractor parameters taken at construction.
    pub fn extractor_checksum(&self) -> &str {
        &self.extractor_checksum
    }

    pub fn extractor_unchanged(&self) -> bool {
        self.extractor.params().checksum() == self.extractor_checksum
    }

    /// `z = f1(x)`. With no extractor layers this is the identity.
    pub fn extract_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.extractor.forward(x)
    }

    /// `f2(f1(x))`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.forward(&self.extract_features(x)?)
    }

    /// Extractor followed by head as one network.
    pub fn joined(&self) -> Network {
        let layers = self
            .extractor
            .layers()
            .iter()
            .chain(self.head.layers())
            .cloned()
            .collect();
        Network::new(layers).expect("split halves chain")
    }
}
