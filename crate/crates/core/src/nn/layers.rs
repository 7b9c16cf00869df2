//! Layer stack with explicit forward tapes and hand-written backward passes.

use crate::error::Result;
use crate::nn::conv::{Conv2d, ConvTranspose2d};
use crate::nn::gemm::{gemm, transpose};
use crate::nn::{Real, Tensor};

const GDN_EPS: f64 = 1e-6;

/// Generalized divisive normalisation across channels.
///
/// `norm_i = beta_i + sum_j gamma_ij x_j^2`; the forward form divides by
/// `sqrt(norm_i)`, the inverse form multiplies. `beta = beta_raw^2 + eps`
/// and `gamma = gamma_raw^2` keep both positive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gdn<T> {
    pub channels: usize,
    pub inverse: bool,
    pub beta_raw: Vec<T>,
    pub gamma_raw: Vec<T>,
}

impl<T: Real> Gdn<T> {
    pub fn new(channels: usize, inverse: bool) -> Self {
        let mut gamma_raw = vec![T::zero(); channels * channels];
        for c in 0..channels {
            gamma_raw[c * channels + c] = T::lit(0.1f64.sqrt());
        }
        Gdn {
            channels,
            inverse,
            beta_raw: vec![T::one(); channels],
            gamma_raw,
        }
    }

    fn effective(&self) -> (Vec<T>, Vec<T>) {
        let beta = self
            .beta_raw
            .iter()
            .map(|&b| b * b + T::lit(GDN_EPS))
            .collect();
        let gamma = self.gamma_raw.iter().map(|&g| g * g).collect();
        (beta, gamma)
    }

    fn norm(&self, x: &[T], positions: usize, beta: &[T], gamma: &[T]) -> (Vec<T>, Vec<T>) {
        let sq: Vec<T> = x.iter().map(|&v| v * v).collect();
        let mut norm = vec![T::zero(); x.len()];
        gemm(
            self.channels,
            positions,
            self.channels,
            gamma,
            &sq,
            &mut norm,
            false,
        );
        for (chunk, &b) in norm.chunks_mut(positions).zip(beta) {
            chunk.iter_mut().for_each(|v| *v += b);
        }
        (sq, norm)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (beta, gamma) = self.effective();
        let positions = x.height() * x.width();
        let mut out = x.clone();
        for b in 0..x.batch() {
            let (_, norm) = self.norm(x.item(b), positions, &beta, &gamma);
            for (v, n) in out.item_mut(b).iter_mut().zip(norm) {
                let s = n.sqrt();
                *v = if self.inverse { *v * s } else { *v / s };
            }
        }
        out
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<(&mut [T], &mut [T])>,
    ) -> Tensor<T> {
        let (beta, gamma) = self.effective();
        let c = self.channels;
        let positions = x.height() * x.width();
        let mut dx = Tensor::zeros(x.shape());
        let mut grads = grads;
        let mut gamma_t = vec![T::zero(); gamma.len()];
        transpose(c, c, &gamma, &mut gamma_t);
        let half = T::lit(0.5);
        let mut dnorm = vec![T::zero(); c * positions];
        let mut through = vec![T::zero(); c * positions];
        let mut sq_t = vec![T::zero(); c * positions];
        let mut dgamma = vec![T::zero(); c * c];
        for b in 0..x.batch() {
            let xb = x.item(b);
            let gb = dy.item(b);
            let (sq, norm) = self.norm(xb, positions, &beta, &gamma);
            let dxb = dx.item_mut(b);
            for i in 0..xb.len() {
                let s = norm[i].sqrt();
                if self.inverse {
                    dxb[i] = gb[i] * s;
                    dnorm[i] = gb[i] * xb[i] * half / s;
                } else {
                    dxb[i] = gb[i] / s;
                    dnorm[i] = -gb[i] * xb[i] * half / (norm[i] * s);
                }
            }
            gemm(c, positions, c, &gamma_t, &dnorm, &mut through, false);
            for i in 0..xb.len() {
                dxb[i] += through[i] * T::lit(2.0) * xb[i];
            }
            if let Some((dbeta, dgamma_raw)) = grads.as_mut() {
                for (ci, chunk) in dnorm.chunks(positions).enumerate() {
                    let mut s = T::zero();
                    for &v in chunk {
                        s += v;
                    }
                    dbeta[ci] += s * T::lit(2.0) * self.beta_raw[ci];
                }
                transpose(c, positions, &sq, &mut sq_t);
                gemm(c, c, positions, &dnorm, &sq_t, &mut dgamma, false);
                for (i, g) in dgamma.iter().enumerate() {
                    dgamma_raw[i] += *g * T::lit(2.0) * self.gamma_raw[i];
                }
            }
        }
        dx
    }
}

/// One stage of a feed-forward stack.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Deconv(ConvTranspose2d<T>),
    LeakyRelu(f64),
    Relu,
    Gdn(Gdn<T>),
}

impl<T: Real> Layer<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self {
            Layer::Conv(c) => c.forward(x)?,
            Layer::Deconv(d) => d.forward(x)?,
            Layer::LeakyRelu(slope) => {
                let s = T::lit(*slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            Layer::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Layer::Gdn(g) => g.forward(x),
        })
    }

    fn param_count(&self) -> usize {
        match self {
            Layer::Conv(_) | Layer::Deconv(_) | Layer::Gdn(_) => 2,
            _ => 0,
        }
    }
}

/// Per-tensor gradient buffers matching [`Sequential::params`] order.
pub type Grads<T> = Vec<Vec<T>>;

/// Inputs to every layer of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    inputs: Vec<Tensor<T>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Sequential { layers }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = self
            .layers
            .first()
            .map(|l| l.forward(x))
            .transpose()?
            .unwrap_or_else(|| x.clone());
        for layer in self.layers.iter().skip(1) {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&cur)?;
            inputs.push(cur);
            cur = next;
        }
        Ok((cur, Tape { inputs }))
    }

    /// Back-propagates `dy` through the recorded tape, accumulating parameter
    /// gradients into `grads` when given. Returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        dy: Tensor<T>,
        mut grads: Option<&mut Grads<T>>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut offset: usize = self.layers.iter().map(Layer::param_count).sum();
        let mut cur = dy;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            offset -= layer.param_count();
            let x = &tape.inputs[idx];
            let want_dx = need_input_grad || idx > 0;
            let slots = grads.as_deref_mut().map(|g| {
                let (a, b) = g[offset..offset + 2].split_at_mut(1);
                (a[0].as_mut_slice(), b[0].as_mut_slice())
            });
            let next = match layer {
                Layer::Conv(c) => c.backward(x, &cur, slots, want_dx)?,
                Layer::Deconv(d) => d.backward(x, &cur, slots, want_dx)?,
                Layer::Gdn(g) => Some(g.backward(x, &cur, slots)),
                Layer::LeakyRelu(slope) => {
                    let s = T::lit(*slope);
                    Some(x.zip_map(&cur, |xv, g| if xv > T::zero() { g } else { g * s })?)
                }
                Layer::Relu => {
                    Some(x.zip_map(&cur, |xv, g| if xv > T::zero() { g } else { T::zero() })?)
                }
            };
            match next {
                Some(t) => cur = t,
                None => return Ok(None),
            }
        }
        Ok(need_input_grad.then_some(cur))
    }

    pub fn params(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weight.as_slice(), c.bias.as_slice()]),
                Layer::Deconv(d) => out.extend([d.weight.as_slice(), d.bias.as_slice()]),
                Layer::Gdn(g) => out.extend([g.beta_raw.as_slice(), g.gamma_raw.as_slice()]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weight.as_mut_slice(), c.bias.as_mut_slice()]),
                Layer::Deconv(d) => out.extend([d.weight.as_mut_slice(), d.bias.as_mut_slice()]),
                Layer::Gdn(g) => {
                    out.extend([g.beta_raw.as_mut_slice(), g.gamma_raw.as_mut_slice()])
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params()
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Sequential<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv(c) => Layer::Conv(Conv2d {
                        in_channels: c.in_channels,
                        out_channels: c.out_channels,
                        geometry: c.geometry,
                        weight: conv(&c.weight),
                        bias: conv(&c.bias),
                    }),
                    Layer::Deconv(d) => Layer::Deconv(ConvTranspose2d {
                        in_channels: d.in_channels,
                        out_channels: d.out_channels,
                        geometry: d.geometry,
                        output_padding: d.output_padding,
                        weight: conv(&d.weight),
                        bias: conv(&d.bias),
                    }),
                    Layer::LeakyRelu(s) => Layer::LeakyRelu(*s),
                    Layer::Relu => Layer::Relu,
                    Layer::Gdn(g) => Layer::Gdn(Gdn {
                        channels: g.channels,
                        inverse: g.inverse,
                        beta_raw: conv(&g.beta_raw),
                        gamma_raw: conv(&g.gamma_raw),
                    }),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv::ConvGeometry;

    fn ramp(shape: [usize; 4], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n)
                .map(|i| ((i * 37 % 23) as f64 / 23.0 - 0.4) * scale)
                .collect(),
        )
        .unwrap()
    }

    fn stack(inverse: bool) -> Sequential<f64> {
        let mut c1 = Conv2d::zeros(2, 4, ConvGeometry::same(3, 2));
        c1.weight = (0..c1.weight.len())
            .map(|i| ((i * 13 % 17) as f64 / 17.0 - 0.5) * 0.6)
            .collect();
        let mut d1 = ConvTranspose2d::zeros(4, 2, ConvGeometry::same(3, 2));
        d1.weight = (0..d1.weight.len())
            .map(|i| ((i * 11 % 19) as f64 / 19.0 - 0.5) * 0.6)
            .collect();
        d1.bias = vec![0.05, -0.02];
        let mut gdn = Gdn::new(4, inverse);
        gdn.gamma_raw
            .iter_mut()
            .enumerate()
            .for_each(|(i, g)| *g += 0.05 * (i % 3) as f64);
        Sequential::new(vec![
            Layer::Conv(c1),
            Layer::Gdn(gdn),
            Layer::LeakyRelu(0.1),
            Layer::Deconv(d1),
        ])
    }

    fn loss(net: &Sequential<f64>, x: &Tensor<f64>, probe: &Tensor<f64>) -> f64 {
        net.forward(x)
            .unwrap()
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn sequential_gradients_match_finite_differences() {
        for inverse in [false, true] {
            let mut net = stack(inverse);
            let x = ramp([2, 2, 4, 4], 1.0);
            let probe = ramp([2, 2, 4, 4], 0.7);
            let (_, tape) = net.forward_tape(&x).unwrap();
            let mut grads = net.zero_grads();
            let dx = net
                .backward(&tape, probe.clone(), Some(&mut grads), true)
                .unwrap()
                .unwrap();
            let h = 1e-6;
            for t in 0..grads.len() {
                for i in 0..grads[t].len() {
                    let orig = net.params()[t][i];
                    net.params_mut()[t][i] = orig + h;
                    let up = loss(&net, &x, &probe);
                    net.params_mut()[t][i] = orig - h;
                    let down = loss(&net, &x, &probe);
                    net.params_mut()[t][i] = orig;
                    let fd = (up - down) / (2.0 * h);
                    assert!(
                        (fd - grads[t][i]).abs() < 1e-6 * (1.0 + fd.abs()),
                        "tensor {t}[{i}] {fd} vs {}",
                        grads[t][i]
                    );
                }
            }
            let mut xm = x.clone();
            for i in 0..x.len() {
                let orig = xm.data()[i];
                xm.data_mut()[i] = orig + h;
                let up = loss(&net, &xm, &probe);
                xm.data_mut()[i] = orig - h;
                let down = loss(&net, &xm, &probe);
                xm.data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - dx.data()[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn gdn_inverse_undoes_forward_for_diagonal_gamma() {
        let g = Gdn::<f64>::new(3, false);
        let ig = Gdn::<f64>::new(3, true);
        let x = ramp([1, 3, 2, 2], 2.0);
        let y = g.forward(&x);
        // With diagonal gamma the per-channel norm depends on x only, so IGDN(x) / x = x / GDN(x).
        let z = ig.forward(&x);
        for ((a, b), c) in x.data().iter().zip(y.data()).zip(z.data()) {
            if a.abs() > 1e-9 {
                assert!((a / b - c / a).abs() < 1e-12);
            }
        }
    }
}
