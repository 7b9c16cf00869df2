//! Feature-space perceptual distance.
//!
//! Images are mapped to `2x - 1`, passed through a stack of 3x3 convolutions
//! with ReLU, and every layer's activations are normalised to unit length
//! across channels at each position. The distance is
//! `sum_l w_l * mean_positions ||f_l(x) - f_l(y)||^2`.
//!
//! The default extractor draws its weights from a seed. Pretrained weights
//! (for example exported from a VGG or AlexNet trunk) can be loaded from a
//! JSON file through [`ExtractorKind::ExternalPretrained`].

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::{Conv2d, ConvGeometry, Real, Tensor};

/// Added to feature norms before dividing.
pub const NORM_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum ExtractorKind {
    SeededRandomMultiscale,
    ExternalPretrained { weights: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLayer {
    pub channels: usize,
    /// Stride of the layer's convolution: 1 or 2.
    pub downsample: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureExtractorSpec {
    pub kind: ExtractorKind,
    pub seed: u64,
    pub layers: Vec<FeatureLayer>,
    pub layer_weights: Vec<f64>,
}

impl FeatureExtractorSpec {
    /// Random five-layer extractor; layer distances are summed with weight 1.
    pub fn seeded(seed: u64) -> Self {
        let layers = [(16, 1), (32, 2), (48, 2), (64, 2), (64, 2)]
            .into_iter()
            .map(|(channels, downsample)| FeatureLayer { channels, downsample })
            .collect::<Vec<_>>();
        let n = layers.len();
        FeatureExtractorSpec {
            kind: ExtractorKind::SeededRandomMultiscale,
            seed,
            layers,
            layer_weights: vec![1.0; n],
        }
    }

    /// Default extractor used as the training loss.
    pub fn default_train() -> Self {
        Self::seeded(0x7e41)
    }

    /// Default extractor used for evaluation; deliberately different weights.
    pub fn default_eval() -> Self {
        Self::seeded(0xe7a1)
    }

    pub fn validate(&self) -> Result<()> {
        if let ExtractorKind::SeededRandomMultiscale = self.kind {
            if self.layers.is_empty() {
                return Err(CoreError::InvalidArgument("feature spec needs at least one layer".into()));
            }
            if self.layers.len() != self.layer_weights.len() {
                return Err(CoreError::InvalidArgument("one layer weight per layer required".into()));
            }
            for l in &self.layers {
                if l.channels == 0 || !(l.downsample == 1 || l.downsample == 2) {
                    return Err(CoreError::InvalidArgument(format!("bad feature layer {l:?}")));
                }
            }
        }
        if self.layer_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(CoreError::InvalidArgument("layer weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// On-disk format for pretrained extractors.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedFile {
    /// Applied after the `2x - 1` map: `(v - shift[c]) / scale[c]`.
    #[serde(default)]
    pub shift: Option<[f64; 3]>,
    #[serde(default)]
    pub scale: Option<[f64; 3]>,
    pub layers: Vec<PretrainedLayer>,
    /// Indices of layers whose (post-ReLU) output is compared.
    pub taps: Vec<usize>,
    pub tap_weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainedLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out, in, k, k]`, row major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Feature extractor backends. Anything that produces per-layer activations
/// and back-propagates through them can serve as the perceptual metric.
pub trait FeatureExtractor<T: Real> {
    /// Post-nonlinearity activations of every compared layer.
    fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>>;
    /// Gradient w.r.t. the input image given gradients w.r.t. each compared layer.
    fn backward(&self, x: &Tensor<T>, d_features: Vec<Tensor<T>>) -> Result<Tensor<T>>;
    fn layer_weights(&self) -> &[f64];
}

/// Convolution + ReLU stack, either seeded or loaded from a pretrained file.
#[derive(Clone, Debug)]
pub struct ConvFeatures<T> {
    convs: Vec<Conv2d<T>>,
    taps: Vec<usize>,
    weights: Vec<f64>,
    shift: [f64; 3],
    scale: [f64; 3],
}

struct Activations<T> {
    pre: Vec<Tensor<T>>,
    post: Vec<Tensor<T>>,
}

impl<T: Real> ConvFeatures<T> {
    pub fn from_spec(spec: &FeatureExtractorSpec) -> Result<Self> {
        spec.validate()?;
        match &spec.kind {
            ExtractorKind::SeededRandomMultiscale => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                let mut convs = Vec::new();
                let mut in_ch = 3;
                for l in &spec.layers {
                    let mut conv = Conv2d::zeros(in_ch, l.channels, ConvGeometry::same(3, l.downsample));
                    let std = (2.0 / conv.fan_in() as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("finite std");
                    for w in conv.weight.iter_mut() {
                        *w = T::lit(normal.sample(&mut rng));
                    }
                    convs.push(conv);
                    in_ch = l.channels;
                }
                Ok(ConvFeatures {
                    taps: (0..convs.len()).collect(),
                    convs,
                    weights: spec.layer_weights.clone(),
                    shift: [0.0; 3],
                    scale: [1.0; 3],
                })
            }
            ExtractorKind::ExternalPretrained { weights } => {
                let text = std::fs::read_to_string(weights)?;
                let file: PretrainedFile = serde_json::from_str(&text)?;
                Self::from_pretrained(&file)
            }
        }
    }

    pub fn from_pretrained(file: &PretrainedFile) -> Result<Self> {
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (i, l) in file.layers.iter().enumerate() {
            if l.in_channels != in_ch || l.weight.len() != l.out_channels * l.in_channels * l.kernel * l.kernel || l.bias.len() != l.out_channels {
                return Err(CoreError::InvalidArgument(format!("pretrained layer {i} has inconsistent shapes")));
            }
            let mut conv = Conv2d::zeros(l.in_channels, l.out_channels, ConvGeometry::same(l.kernel, l.stride));
            conv.weight = l.weight.iter().map(|&v| T::lit(v)).collect();
            conv.bias = l.bias.iter().map(|&v| T::lit(v)).collect();
            convs.push(conv);
            in_ch = l.out_channels;
        }
        if file.taps.is_empty() || file.taps.len() != file.tap_weights.len() || file.taps.iter().any(|&t| t >= convs.len()) || file.taps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidArgument("pretrained taps must be increasing layer indices with one weight each".into()));
        }
        Ok(ConvFeatures {
            convs,
            taps: file.taps.clone(),
            weights: file.tap_weights.clone(),
            shift: file.shift.unwrap_or([0.0; 3]),
            scale: file.scale.unwrap_or([1.0; 3]),
        })
    }

    fn input_map(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.channels() != 3 {
            return Err(CoreError::Shape(format!("perceptual metric needs RGB, got {:?}", x.shape())));
        }
        let plane = x.height() * x.width();
        let mut out = x.clone();
        for b in 0..x.batch() {
            let item = out.item_mut(b);
            for c in 0..3 {
                let (s, k) = (T::lit(self.shift[c]), T::lit(1.0 / self.scale[c]));
                for v in &mut item[c * plane..(c + 1) * plane] {
                    *v = ((*v + *v - T::one()) - s) * k;
                }
            }
        }
        Ok(out)
    }

    fn run(&self, x: &Tensor<T>) -> Result<Activations<T>> {
        let last = *self.taps.last().expect("validated");
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut cur = self.input_map(x)?;
        for conv in &self.convs[..=last] {
            let p = conv.forward(&cur)?;
            cur = p.map(|v| v.max(T::zero()));
            pre.push(p);
            post.push(cur.clone());
        }
        Ok(Activations { pre, post })
    }
}

impl<T: Real> FeatureExtractor<T> for ConvFeatures<T> {
    fn features(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut acts = self.run(x)?;
        Ok(self.taps.iter().map(|&t| std::mem::replace(&mut acts.post[t], Tensor::zeros([0, 0, 0, 0]))).collect())
    }

    fn backward(&self, x: &Tensor<T>, d_features: Vec<Tensor<T>>) -> Result<Tensor<T>> {
        let acts = self.run(x)?;
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; acts.post.len()];
        for (&t, d) in self.taps.iter().zip(d_features) {
            pending[t] = Some(d);
        }
        let input = self.input_map(x)?;
        let mut carry: Option<Tensor<T>> = None;
        for l in (0..acts.post.len()).rev() {
            let mut g = match (pending[l].take(), carry.take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b)?;
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => Tensor::zeros(acts.post[l].shape()),
            };
            for (gv, &p) in g.data_mut().iter_mut().zip(acts.pre[l].data()) {
                if p <= T::zero() {
                    *gv = T::zero();
                }
            }
            let below = if l == 0 { &input } else { &acts.post[l - 1] };
            carry = self.convs[l].backward(below, &g, None, true)?;
        }
        let mut dx = carry.expect("at least one layer");
        let plane = x.height() * x.width();
        for b in 0..x.batch() {
            let item = dx.item_mut(b);
            for c in 0..3 {
                let k = T::lit(2.0 / self.scale[c]);
                for v in &mut item[c * plane..(c + 1) * plane] {
                    *v *= k;
                }
            }
        }
        Ok(dx)
    }

    fn layer_weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Unit-normalises each spatial position's channel vector.
fn normalise<T: Real>(f: &Tensor<T>) -> (Tensor<T>, Vec<f64>) {
    let [n, c, h, w] = f.shape();
    let plane = h * w;
    let mut out = f.clone();
    let mut norms = vec![0.0; n * plane];
    for b in 0..n {
        let item = out.item_mut(b);
        for p in 0..plane {
            let s = (0..c).map(|ch| item[ch * plane + p].as_f64().powi(2)).sum::<f64>().sqrt();
            norms[b * plane + p] = s;
            let inv = T::lit(1.0 / (s + NORM_EPS));
            for ch in 0..c {
                item[ch * plane + p] *= inv;
            }
        }
    }
    (out, norms)
}

/// Normalised features of a reference image, reusable across many comparisons.
pub struct ReferenceFeatures<T> {
    normalised: Vec<Tensor<T>>,
}

pub fn reference_features<T: Real>(net: &dyn FeatureExtractor<T>, x: &Tensor<T>) -> Result<ReferenceFeatures<T>> {
    Ok(ReferenceFeatures {
        normalised: net.features(x)?.iter().map(|f| normalise(f).0).collect(),
    })
}

/// Per-item distances between the reference and `y`, and optionally the
/// gradient of their batch mean w.r.t. `y`.
pub fn distance_to<T: Real>(
    net: &dyn FeatureExtractor<T>,
    reference: &ReferenceFeatures<T>,
    y: &Tensor<T>,
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor<T>>)> {
    let feats = net.features(y)?;
    let n = y.batch();
    let mut per_item = vec![0.0; n];
    let mut d_feats = Vec::with_capacity(feats.len());
    for ((f, r), &w) in feats.iter().zip(&reference.normalised).zip(net.layer_weights()) {
        r.expect_shape(f.shape())?;
        let (u, norms) = normalise(f);
        let [_, c, h, wd] = f.shape();
        let plane = h * wd;
        for b in 0..n {
            let (ui, ri) = (u.item(b), r.item(b));
            let sq: f64 = ui.iter().zip(ri).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum();
            per_item[b] += w * sq / plane as f64;
        }
        if want_grad {
            // Loss = (1/n) sum_b w/plane * ||u - r||^2, u = f / (|f| + eps).
            let k = 2.0 * w / (plane as f64 * n as f64);
            let mut d = Tensor::zeros(f.shape());
            for b in 0..n {
                let (ui, ri, fi) = (u.item(b), r.item(b), f.item(b));
                let di = d.item_mut(b);
                for p in 0..plane {
                    let s = norms[b * plane + p];
                    let se = s + NORM_EPS;
                    let mut dot = 0.0;
                    for ch in 0..c {
                        let i = ch * plane + p;
                        dot += k * (ui[i].as_f64() - ri[i].as_f64()) * fi[i].as_f64();
                    }
                    let radial = if s > 0.0 { dot / (s * se * se) } else { 0.0 };
                    for ch in 0..c {
                        let i = ch * plane + p;
                        let gu = k * (ui[i].as_f64() - ri[i].as_f64());
                        di[i] = T::lit(gu / se - fi[i].as_f64() * radial);
                    }
                }
            }
            d_feats.push(d);
        }
    }
    let grad = if want_grad { Some(net.backward(y, d_feats)?) } else { None };
    Ok((per_item, grad))
}

/// Batch-mean perceptual distance between `x` and `y` under `spec`.
pub fn perceptual_distance<T: Real>(x: &Tensor<T>, y: &Tensor<T>, spec: &FeatureExtractorSpec) -> Result<f64> {
    x.expect_shape(y.shape())?;
    let net = ConvFeatures::<T>::from_spec(spec)?;
    let r = reference_features(&net, x)?;
    let (per_item, _) = distance_to(&net, &r, y, false)?;
    Ok(per_item.iter().sum::<f64>() / per_item.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = FeatureExtractorSpec {
            kind: ExtractorKind::SeededRandomMultiscale,
            seed: 3,
            layers: vec![FeatureLayer { channels: 4, downsample: 1 }, FeatureLayer { channels: 5, downsample: 2 }],
            layer_weights: vec![0.7, 0.3],
        };
        let net = ConvFeatures::<f64>::from_spec(&spec).unwrap();
        let x = random([2, 3, 6, 6], 1);
        let mut y = random([2, 3, 6, 6], 2);
        let r = reference_features(&net, &x).unwrap();
        let loss = |y: &Tensor<f64>| {
            let (d, _) = distance_to(&net, &r, y, false).unwrap();
            d.iter().sum::<f64>() / 2.0
        };
        let (_, g) = distance_to(&net, &r, &y, true).unwrap();
        let g = g.unwrap();
        let eps = 1e-6;
        for i in (0..y.len()).step_by(7) {
            let orig = y.data()[i];
            y.data_mut()[i] = orig + eps;
            let up = loss(&y);
            y.data_mut()[i] = orig - eps;
            let down = loss(&y);
            y.data_mut()[i] = orig;
            let num = (up - down) / (2.0 * eps);
            assert!((num - g.data()[i]).abs() < 1e-6 * (1.0 + num.abs()), "{i}: {num} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn pretrained_file_matches_equivalent_seeded_net() {
        let spec = FeatureExtractorSpec::seeded(9);
        let net = ConvFeatures::<f64>::from_spec(&spec).unwrap();
        let file = PretrainedFile {
            shift: None,
            scale: None,
            layers: net
                .convs
                .iter()
                .map(|c| PretrainedLayer {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: 3,
                    stride: c.geometry.stride,
                    weight: c.weight.clone(),
                    bias: c.bias.clone(),
                })
                .collect(),
            taps: (0..net.convs.len()).collect(),
            tap_weights: spec.layer_weights.clone(),
        };
        let loaded = ConvFeatures::<f64>::from_pretrained(&file).unwrap();
        let (x, y) = (random([1, 3, 32, 32], 4), random([1, 3, 32, 32], 5));
        let a = distance_to(&net, &reference_features(&net, &x).unwrap(), &y, false).unwrap().0;
        let b = distance_to(&loaded, &reference_features(&loaded, &x).unwrap(), &y, false).unwrap().0;
        assert_eq!(a, b);
    }
}
