use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::arch::{ArchConfig, Nonlinearity, LEAKY_SLOPE};
use crate::error::{CoreError, Result};
use crate::nn::{Conv2d, ConvGeometry, ConvTranspose2d, Gdn, Layer, Real, Sequential};

/// Named, independently freezable parts of the codec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubNetwork {
    Analysis,
    Synthesis,
    HyperAnalysis,
    HyperSynthesis,
    FactorizedPrior,
}

impl SubNetwork {
    pub const ALL: [SubNetwork; 5] = [
        SubNetwork::Analysis,
        SubNetwork::Synthesis,
        SubNetwork::HyperAnalysis,
        SubNetwork::HyperSynthesis,
        SubNetwork::FactorizedPrior,
    ];

    /// Everything the coded bitstream depends on.
    pub const RATE_DETERMINING: [SubNetwork; 4] = [
        SubNetwork::Analysis,
        SubNetwork::HyperAnalysis,
        SubNetwork::HyperSynthesis,
        SubNetwork::FactorizedPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SubNetwork::Analysis => "analysis",
            SubNetwork::Synthesis => "synthesis",
            SubNetwork::HyperAnalysis => "hyper_analysis",
            SubNetwork::HyperSynthesis => "hyper_synthesis",
            SubNetwork::FactorizedPrior => "factorized_prior",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for SubNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-channel logistic prior for the hyper-latents.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedPrior<T> {
    pub location: Vec<T>,
    /// Natural log of the logistic scale.
    pub log_scale: Vec<T>,
}

impl<T: Real> FactorizedPrior<T> {
    pub fn new(channels: usize) -> Self {
        FactorizedPrior {
            location: vec![T::zero(); channels],
            log_scale: vec![T::zero(); channels],
        }
    }

    pub fn scale(&self, channel: usize) -> f64 {
        crate::math::exp(self.log_scale[channel].as_f64())
    }
}

/// All learnable parameters, partitioned by sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecParams<T> {
    pub arch: ArchConfig,
    pub analysis: Sequential<T>,
    pub synthesis: Sequential<T>,
    pub hyper_analysis: Sequential<T>,
    pub hyper_synthesis: Sequential<T>,
    pub prior: FactorizedPrior<T>,
}

fn activation<T: Real>(arch: &ArchConfig, channels: usize, inverse: bool) -> Layer<T> {
    match arch.nonlinearity {
        Nonlinearity::LeakyRelu => Layer::LeakyRelu(LEAKY_SLOPE),
        Nonlinearity::Gdn => Layer::Gdn(Gdn::new(channels, inverse)),
    }
}

fn chain<T: Real>(
    channels: &[usize],
    arch: &ArchConfig,
    transposed: bool,
    main_transform: bool,
) -> Sequential<T> {
    let g = ConvGeometry::same(arch.kernel_size, 2);
    let mut layers = Vec::new();
    for (i, pair) in channels.windows(2).enumerate() {
        layers.push(if transposed {
            Layer::Deconv(ConvTranspose2d::zeros(pair[0], pair[1], g))
        } else {
            Layer::Conv(Conv2d::zeros(pair[0], pair[1], g))
        });
        if i + 2 < channels.len() {
            layers.push(if main_transform {
                activation(arch, pair[1], transposed)
            } else {
                Layer::LeakyRelu(LEAKY_SLOPE)
            });
        }
    }
    Sequential::new(layers)
}

fn widths(first: usize, hidden: usize, last: usize, stages: usize) -> Vec<usize> {
    let mut v = vec![first];
    v.extend(std::iter::repeat_n(hidden, stages - 1));
    v.push(last);
    v
}

impl<T: Real> CodecParams<T> {
    /// All-zero parameters with the architecture's layer structure.
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let s = arch.downsampling_stages;
        let sh = arch.hyper_downsampling_stages;
        let (n, m, cz) = (
            arch.hidden_channels,
            arch.latent_channels,
            arch.hyper_channels,
        );
        Ok(CodecParams {
            arch,
            analysis: chain(&widths(3, n, m, s), &arch, false, true),
            synthesis: chain(&widths(m, n, 3, s), &arch, true, true),
            hyper_analysis: chain(&widths(m, n, cz, sh), &arch, false, false),
            hyper_synthesis: chain(&widths(cz, n, 2 * m, sh), &arch, true, false),
            prior: FactorizedPrior::new(cz),
        })
    }

    /// He-style random initialisation, fully determined by `seed`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        for sub in [
            SubNetwork::Analysis,
            SubNetwork::Synthesis,
            SubNetwork::HyperAnalysis,
            SubNetwork::HyperSynthesis,
        ] {
            let net = p.network_mut(sub).expect("layered sub-network");
            let count = net.layers.len();
            for (idx, layer) in net.layers.iter_mut().enumerate() {
                // The last layer of each transform gets unit gain.
                let g = if idx + 1 == count { 1.0 } else { gain };
                let (weights, fan_in) = match layer {
                    Layer::Conv(c) => {
                        let f = c.fan_in();
                        (&mut c.weight, f)
                    }
                    Layer::Deconv(d) => {
                        let f = d.fan_in();
                        (&mut d.weight, f)
                    }
                    _ => continue,
                };
                let normal = Normal::new(0.0, g / (fan_in as f64).sqrt()).expect("finite std");
                for w in weights.iter_mut() {
                    *w = T::lit(normal.sample(&mut rng));
                }
            }
        }
        if let Some(Layer::Deconv(last)) = p.synthesis.layers.last_mut() {
            last.bias.iter_mut().for_each(|b| *b = T::lit(0.5));
        }
        Ok(p)
    }

    pub fn network(&self, sub: SubNetwork) -> Option<&Sequential<T>> {
        match sub {
            SubNetwork::Analysis => Some(&self.analysis),
            SubNetwork::Synthesis => Some(&self.synthesis),
            SubNetwork::HyperAnalysis => Some(&self.hyper_analysis),
            SubNetwork::HyperSynthesis => Some(&self.hyper_synthesis),
            SubNetwork::FactorizedPrior => None,
        }
    }

    pub fn network_mut(&mut self, sub: SubNetwork) -> Option<&mut Sequential<T>> {
        match sub {
            SubNetwork::Analysis => Some(&mut self.analysis),
            SubNetwork::Synthesis => Some(&mut self.synthesis),
            SubNetwork::HyperAnalysis => Some(&mut self.hyper_analysis),
            SubNetwork::HyperSynthesis => Some(&mut self.hyper_synthesis),
            SubNetwork::FactorizedPrior => None,
        }
    }

    /// Parameter tensors of one sub-network in a fixed order.
    pub fn tensors(&self, sub: SubNetwork) -> Vec<&[T]> {
        match self.network(sub) {
            Some(net) => net.params(),
            None => vec![
                self.prior.location.as_slice(),
                self.prior.log_scale.as_slice(),
            ],
        }
    }

    pub fn tensors_mut(&mut self, sub: SubNetwork) -> Vec<&mut [T]> {
        match sub {
            SubNetwork::FactorizedPrior => vec![
                self.prior.location.as_mut_slice(),
                self.prior.log_scale.as_mut_slice(),
            ],
            other => self
                .network_mut(other)
                .expect("layered sub-network")
                .params_mut(),
        }
    }

    /// Mutable tensors of every sub-network, in [`SubNetwork::ALL`] order.
    pub fn all_tensors_mut(&mut self) -> Vec<&mut [T]> {
        let CodecParams {
            analysis,
            synthesis,
            hyper_analysis,
            hyper_synthesis,
            prior,
            ..
        } = self;
        let mut out = analysis.params_mut();
        out.extend(synthesis.params_mut());
        out.extend(hyper_analysis.params_mut());
        out.extend(hyper_synthesis.params_mut());
        out.push(prior.location.as_mut_slice());
        out.push(prior.log_scale.as_mut_slice());
        out
    }

    pub fn tensor_lengths(&self, sub: SubNetwork) -> Vec<usize> {
        self.tensors(sub).iter().map(|t| t.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        SubNetwork::ALL.iter().map(|&s| self.sub_params(s)).sum()
    }

    pub fn sub_params(&self, sub: SubNetwork) -> usize {
        self.tensors(sub).iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over the architecture and the listed sub-networks, hex encoded.
    pub fn hash_of(&self, subs: &[SubNetwork]) -> String {
        let mut h = Sha256::new();
        h.update(b"rdp-codec-params/v1");
        h.update(self.arch.canonical_bytes());
        h.update((T::BYTES as u64).to_le_bytes());
        let mut buf = Vec::new();
        for &sub in subs {
            h.update(sub.name().as_bytes());
            let tensors = self.tensors(sub);
            h.update((tensors.len() as u64).to_le_bytes());
            for t in tensors {
                buf.clear();
                buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
                for &v in t {
                    v.extend_le_bytes(&mut buf);
                }
                h.update(&buf);
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash over every parameter.
    pub fn content_hash(&self) -> String {
        self.hash_of(&SubNetwork::ALL)
    }

    /// Hash over the rate-determining sub-networks only.
    pub fn frozen_hash(&self) -> String {
        self.hash_of(&SubNetwork::RATE_DETERMINING)
    }

    pub fn cast<U: Real>(&self) -> CodecParams<U> {
        CodecParams {
            arch: self.arch,
            analysis: self.analysis.cast(),
            synthesis: self.synthesis.cast(),
            hyper_analysis: self.hyper_analysis.cast(),
            hyper_synthesis: self.hyper_synthesis.cast(),
            prior: FactorizedPrior {
                location: self
                    .prior
                    .location
                    .iter()
                    .map(|v| U::lit(v.as_f64()))
                    .collect(),
                log_scale: self
                    .prior
                    .log_scale
                    .iter()
                    .map(|v| U::lit(v.as_f64()))
                    .collect(),
            },
        }
    }

    /// Overwrites one sub-network from flat tensors with matching lengths.
    pub fn load_tensors(&mut self, sub: SubNetwork, data: &[Vec<T>]) -> Result<()> {
        let mut slots = self.tensors_mut(sub);
        if slots.len() != data.len() {
            return Err(CoreError::Checkpoint(format!(
                "{sub}: expected {} tensors, found {}",
                slots.len(),
                data.len()
            )));
        }
        for (i, (slot, src)) in slots.iter_mut().zip(data).enumerate() {
            if slot.len() != src.len() {
                return Err(CoreError::Checkpoint(format!(
                    "{sub}[{i}]: expected {} values, found {}",
                    slot.len(),
                    src.len()
                )));
            }
            slot.copy_from_slice(src);
        }
        Ok(())
    }
}

/// Hex prefix of a content hash as the 8 raw bytes stored in bitstream headers.
pub fn short_hash(hex_hash: &str) -> [u8; 8] {
    let mut out = [0u8; 8];
    if let Ok(bytes) = hex::decode(hex_hash.get(..16).unwrap_or("")) {
        out.copy_from_slice(&bytes);
    }
    out
}
