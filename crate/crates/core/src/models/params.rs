use std::collections::HashMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use vaesr_autograd::{Float, Tensor, Var};

use super::config::{EncoderKind, ModelConfig};
use crate::degradation::derive_seed;
use crate::error::{Error, Result};

/// Seed of the frozen feature extractor, independent of the training seed.
pub const FEATURE_SEED: u64 = 2020;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Network {
    Encoder,
    Decoder,
    Srsn,
    Discriminator,
    Features,
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Network::Encoder => "encoder",
            Network::Decoder => "decoder",
            Network::Srsn => "srsn",
            Network::Discriminator => "discriminator",
            Network::Features => "features",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He(usize),
    /// Normal with standard deviation `sqrt(1 / fan_in)`.
    LeCun(usize),
    Zero,
}

/// Name, owner and shape of one parameter array.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub network: Network,
    pub shape: Vec<usize>,
}

struct Layout {
    specs: Vec<(ArraySpec, Init)>,
}

impl Layout {
    fn push(&mut self, network: Network, name: String, shape: Vec<usize>, init: Init) {
        self.specs.push((ArraySpec { name, network, shape }, init));
    }

    fn conv(&mut self, net: Network, name: &str, cin: usize, cout: usize, k: usize, zero: bool) {
        let init = if zero { Init::Zero } else { Init::He(cin * k * k) };
        self.push(net, format!("{net}.{name}.weight"), vec![cout, cin, k, k], init);
        self.push(net, format!("{net}.{name}.bias"), vec![cout], Init::Zero);
    }

    fn deconv(&mut self, net: Network, name: &str, cin: usize, cout: usize, k: usize, stride: usize) {
        // Each output pixel of a strided transposed convolution sees
        // roughly cin * (k / stride)^2 inputs.
        let fan_in = (cin * k * k / (stride * stride)).max(1);
        self.push(net, format!("{net}.{name}.weight"), vec![cin, cout, k, k], Init::He(fan_in));
        self.push(net, format!("{net}.{name}.bias"), vec![cout], Init::Zero);
    }

    fn linear(&mut self, net: Network, name: &str, fin: usize, fout: usize) {
        self.push(net, format!("{net}.{name}.weight"), vec![fout, fin], Init::LeCun(fin));
        self.push(net, format!("{net}.{name}.bias"), vec![fout], Init::Zero);
    }

    fn resblocks(&mut self, net: Network, count: usize, ch: usize) {
        for i in 0..count {
            self.conv(net, &format!("res{i}.conv1"), ch, ch, 3, false);
            self.conv(net, &format!("res{i}.conv2"), ch, ch, 3, false);
        }
    }

    fn of(cfg: &ModelConfig, zero_final: bool) -> Self {
        use Network::*;
        let mut l = Layout { specs: Vec::new() };

        let mut cin = 3;
        for (i, &c) in cfg.encoder_channels.iter().enumerate() {
            l.conv(Encoder, &format!("conv{}", i + 1), cin, c, 4, false);
            cin = c;
        }
        l.linear(Encoder, "mean", cin, cfg.latent_len);
        l.linear(Encoder, "log_variance", cin, cfg.latent_len);

        let (cd, g) = (cfg.decoder_channels, cfg.decoder_deconv);
        l.conv(Decoder, "embed1", 3, cd, 4, false);
        l.conv(Decoder, "embed2", cd, cd, 4, false);
        l.deconv(Decoder, "deconv1", cd + cfg.latent_len, cd, g.kernel, g.stride);
        l.deconv(Decoder, "deconv2", cd, cd, g.kernel, g.stride);
        l.conv(Decoder, "fuse", cd + 3, cd, 3, false);
        l.resblocks(Decoder, cfg.decoder_resblocks, cd);
        l.conv(Decoder, "out", cd, 3, 3, zero_final);

        let cs = cfg.srsn_channels;
        l.conv(Srsn, "conv_in", 3, cs, 3, false);
        l.resblocks(Srsn, cfg.srsn_blocks, cs);
        l.conv(Srsn, "conv_out", cs, 3, 3, zero_final);

        let mut cin = 3;
        for (i, &c) in cfg.disc_channels.iter().enumerate() {
            l.conv(Discriminator, &format!("conv{}", i + 1), cin, c, 4, false);
            cin = c;
        }
        l.linear(Discriminator, "fc", cin, 1);

        let mut cin = 3;
        for (i, &c) in cfg.feature_channels.iter().enumerate() {
            l.conv(Features, &format!("conv{}", i + 1), cin, c, 3, false);
            cin = c;
        }
        l
    }
}

/// Names, owners and shapes of every parameter array for `cfg`, in
/// checkpoint order.
pub fn manifest(cfg: &ModelConfig) -> Vec<ArraySpec> {
    Layout::of(cfg, true).specs.into_iter().map(|(s, _)| s).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T: Float> {
    pub spec: ArraySpec,
    pub tensor: Tensor<T>,
}

/// Every parameter array of the five networks, tagged with its owner.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T: Float = f32> {
    config: ModelConfig,
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

/// Options for [`ParameterSet::init_with`].
#[derive(Clone, Copy, Debug)]
pub struct InitOptions {
    /// Zero the last convolution of the decoder and the SRSN so that both
    /// start as exact identities.
    pub zero_final: bool,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self { zero_final: true }
    }
}

impl<T: Float> ParameterSet<T> {
    /// Standard initialization: He fan-in normal weights, zero biases, zero
    /// final layers on the decoder and SRSN.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, InitOptions::default())
    }

    /// Every array draws from its own stream seeded by `(seed, name)`, so
    /// arrays do not depend on each other. Feature-extractor arrays always
    /// use [`FEATURE_SEED`].
    pub fn init_with(config: &ModelConfig, seed: u64, opts: InitOptions) -> Result<Self> {
        config.validate()?;
        let entries = Layout::of(config, opts.zero_final)
            .specs
            .into_iter()
            .map(|(spec, init)| {
                let base = if spec.network == Network::Features { FEATURE_SEED } else { seed };
                let tensor = sample(&spec.shape, init, derive_seed(base, &spec.name));
                ParamEntry { spec, tensor }
            })
            .collect();
        Ok(Self::assemble(config.clone(), entries))
    }

    /// Build from named arrays, validating names and shapes against the
    /// manifest of `config`.
    pub fn from_arrays(config: &ModelConfig, arrays: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = manifest(config);
        let mut given: HashMap<String, Tensor<T>> = HashMap::with_capacity(arrays.len());
        for (name, t) in arrays {
            if given.insert(name.clone(), t).is_some() {
                return Err(Error::ShapeManifest { name, reason: "duplicate array".into() });
            }
        }
        let mut entries = Vec::with_capacity(expected.len());
        for spec in expected {
            let tensor = given
                .remove(&spec.name)
                .ok_or_else(|| Error::ShapeManifest { name: spec.name.clone(), reason: "missing".into() })?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeManifest {
                    name: spec.name.clone(),
                    reason: format!("expected shape {:?}, found {:?}", spec.shape, tensor.shape()),
                });
            }
            entries.push(ParamEntry { spec, tensor });
        }
        if let Some(name) = given.into_keys().min() {
            return Err(Error::ShapeManifest { name, reason: "not part of this model config".into() });
        }
        Ok(Self::assemble(config.clone(), entries))
    }

    fn assemble(config: ModelConfig, entries: Vec<ParamEntry<T>>) -> Self {
        let index = entries.iter().enumerate().map(|(i, e)| (e.spec.name.clone(), i)).collect();
        Self { config, entries, index }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].tensor)
    }

    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].tensor
    }

    /// Scalar parameter count of one network.
    pub fn count(&self, network: Network) -> usize {
        self.entries.iter().filter(|e| e.spec.network == network).map(|e| e.tensor.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Zero every array whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for e in self.entries.iter_mut().filter(|e| e.spec.name.starts_with(prefix)) {
            e.tensor = Tensor::zeros(e.spec.shape.clone());
        }
    }

    /// Copy the encoder's convolutional stack from `source`, as used with
    /// [`EncoderKind::FrozenPretrained`]. Shapes must match exactly.
    pub fn import_encoder_convs(&mut self, source: &ParameterSet<T>) -> Result<()> {
        for e in self.entries.iter_mut().filter(|e| is_encoder_conv(&e.spec.name)) {
            let t = source
                .get(&e.spec.name)
                .ok_or_else(|| Error::ShapeManifest { name: e.spec.name.clone(), reason: "missing".into() })?;
            if t.shape() != e.tensor.shape() {
                return Err(Error::ShapeManifest {
                    name: e.spec.name.clone(),
                    reason: format!("expected shape {:?}, found {:?}", e.tensor.shape(), t.shape()),
                });
            }
            e.tensor = t.clone();
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> ParameterSet<U> {
        ParameterSet {
            config: self.config.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { spec: e.spec.clone(), tensor: e.tensor.cast() })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Wrap every array in a graph leaf; arrays for which `trainable`
    /// returns true become parameters, the rest constants.
    pub fn bind(&self, trainable: impl Fn(&ArraySpec) -> bool) -> Bound<T> {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|e| {
                    if trainable(&e.spec) {
                        Var::parameter(e.tensor.clone())
                    } else {
                        Var::constant(e.tensor.clone())
                    }
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Bind with every array constant.
    pub fn bind_frozen(&self) -> Bound<T> {
        self.bind(|_| false)
    }
}

/// True for arrays that a training phase may update under `kind`: the
/// feature extractor never trains, and a frozen pretrained encoder only
/// trains its heads.
pub fn is_trainable_under(spec: &ArraySpec, kind: EncoderKind) -> bool {
    match spec.network {
        Network::Features => false,
        Network::Encoder => kind == EncoderKind::SmallConv || !is_encoder_conv(&spec.name),
        _ => true,
    }
}

fn is_encoder_conv(name: &str) -> bool {
    name.starts_with("encoder.conv")
}

fn sample<T: Float>(shape: &[usize], init: Init, seed: u64) -> Tensor<T> {
    let std = match init {
        Init::Zero => return Tensor::zeros(shape.to_vec()),
        Init::He(fan_in) => (2.0 / fan_in as f64).sqrt(),
        Init::LeCun(fan_in) => (1.0 / fan_in as f64).sqrt(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64(v * std)
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Parameter arrays bound into a computation graph.
pub struct Bound<T: Float> {
    vars: Vec<Var<T>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Bound<T> {
    /// # Panics
    /// If `name` is not in the manifest; layer names are fixed by the code.
    pub fn var(&self, name: &str) -> &Var<T> {
        let i = self.index.get(name).unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.vars[*i]
    }

    /// All bound leaves in manifest order.
    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }

    pub(crate) fn conv(&self, x: &Var<T>, layer: &str, k: usize, stride: usize, pad: usize) -> Var<T> {
        x.conv2d(
            self.var(&format!("{layer}.weight")),
            Some(self.var(&format!("{layer}.bias"))),
            k,
            stride,
            pad,
        )
    }

    pub(crate) fn deconv(&self, x: &Var<T>, layer: &str, k: usize, stride: usize, pad: usize) -> Var<T> {
        x.conv_transpose2d(
            self.var(&format!("{layer}.weight")),
            Some(self.var(&format!("{layer}.bias"))),
            k,
            stride,
            pad,
        )
    }

    pub(crate) fn linear(&self, x: &Var<T>, layer: &str) -> Var<T> {
        x.linear(self.var(&format!("{layer}.weight")), Some(self.var(&format!("{layer}.bias"))))
    }
}
