//! Strided 2-D convolution and transposed convolution via im2col.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::gemm::{gemm, transpose};
use crate::nn::{Real, Tensor};

/// Square kernel with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Padding that makes a stride-`s` convolution map `n` to `n / s`.
    pub fn same(kernel: usize, stride: usize) -> Self {
        ConvGeometry {
            kernel,
            stride,
            pad: (kernel - 1) / 2,
        }
    }

    pub fn conv_out(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output padding that makes the transposed convolution map `n` to `n * stride`.
    pub fn transposed_output_padding(&self) -> usize {
        (self.stride + 2 * self.pad).saturating_sub(self.kernel)
    }

    pub fn transposed_out(&self, n: usize, output_padding: usize) -> Option<usize> {
        if n == 0 {
            return None;
        }
        ((n - 1) * self.stride + self.kernel + output_padding).checked_sub(2 * self.pad)
    }
}

/// Unfolds `x[c, h, w]` into `cols[c*k*k, oh*ow]`.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let (s, pad) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                let out = &mut cols[row..row + oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - pad;
                    let seg = &mut out[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize - pad;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `x[c, h, w]`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    g: ConvGeometry,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let k = g.kernel;
    let (s, pad) = (g.stride as isize, g.pad as isize);
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * oh * ow;
                let src = &cols[row..row + oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &v) in seg.iter().enumerate() {
                        let ix = ox as isize * s + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Real>(dy: &[T], db: &mut [T], plane: usize) {
    for (chunk, g) in dy.chunks(plane).zip(db.iter_mut()) {
        let mut s = T::zero();
        for &v in chunk {
            s += v;
        }
        *g += s;
    }
}

/// Convolution with weight layout `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        Conv2d {
            in_channels,
            out_channels,
            geometry,
            weight: vec![T::zero(); out_channels * in_channels * k * k],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.geometry.kernel * self.geometry.kernel
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input;
        if c != self.in_channels {
            return Err(CoreError::Shape(format!(
                "convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        match (self.geometry.conv_out(h), self.geometry.conv_out(w)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([n, self.out_channels, oh, ow]),
            _ => Err(CoreError::Shape(format!(
                "spatial size {h}x{w} too small for kernel {}",
                self.geometry.kernel
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, _, h, w] = x.shape();
        let [_, oc, oh, ow] = out_shape;
        let kk = self.fan_in();
        let mut cols = vec![T::zero(); kk * oh * ow];
        let mut out = Tensor::zeros(out_shape);
        for b in 0..n {
            im2col(
                x.item(b),
                self.in_channels,
                h,
                w,
                self.geometry,
                oh,
                ow,
                &mut cols,
            );
            let y = out.item_mut(b);
            gemm(oc, oh * ow, kk, &self.weight, &cols, y, false);
            add_bias(y, &self.bias, oh * ow);
        }
        Ok(out)
    }

    /// Back-propagates `dy`. Parameter gradients are accumulated into
    /// `grads = (d_weight, d_bias)` when given.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<(&mut [T], &mut [T])>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let out_shape = self.output_shape(x.shape())?;
        dy.expect_shape(out_shape)?;
        let [n, ic, h, w] = x.shape();
        let [_, oc, oh, ow] = out_shape;
        let kk = self.fan_in();
        let positions = oh * ow;
        let mut cols = vec![T::zero(); kk * positions];
        let mut cols_t = vec![T::zero(); kk * positions];
        let mut grads = grads;
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        let w_t = need_input_grad.then(|| {
            let mut t = vec![T::zero(); self.weight.len()];
            transpose(oc, kk, &self.weight, &mut t);
            t
        });
        for b in 0..n {
            let g = dy.item(b);
            if let Some((dw, db)) = grads.as_mut() {
                im2col(x.item(b), ic, h, w, self.geometry, oh, ow, &mut cols);
                transpose(kk, positions, &cols, &mut cols_t);
                gemm(oc, kk, positions, g, &cols_t, dw, true);
                accumulate_bias_grad(g, db, positions);
            }
            if let (Some(dx), Some(w_t)) = (dx.as_mut(), w_t.as_ref()) {
                gemm(kk, positions, oc, w_t, g, &mut cols, false);
                col2im(&cols, ic, h, w, self.geometry, oh, ow, dx.item_mut(b));
            }
        }
        Ok(dx)
    }
}

/// Transposed convolution with weight layout `[in, out, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    pub output_padding: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        ConvTranspose2d {
            in_channels,
            out_channels,
            geometry,
            output_padding: geometry.transposed_output_padding(),
            weight: vec![T::zero(); in_channels * out_channels * k * k],
            bias: vec![T::zero(); out_channels],
        }
    }

    /// Fan-in seen by one output element, used for initialisation.
    pub fn fan_in(&self) -> usize {
        let k = self.geometry.kernel;
        let s = self.geometry.stride;
        (self.in_channels * k * k / (s * s)).max(1)
    }

    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input;
        if c != self.in_channels {
            return Err(CoreError::Shape(format!(
                "transposed convolution expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        match (
            self.geometry.transposed_out(h, self.output_padding),
            self.geometry.transposed_out(w, self.output_padding),
        ) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([n, self.out_channels, oh, ow]),
            _ => Err(CoreError::Shape(format!("invalid spatial size {h}x{w}"))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let [n, ic, h, w] = x.shape();
        let [_, oc, oh, ow] = out_shape;
        let k = self.geometry.kernel;
        let rows = oc * k * k;
        let mut w_t = vec![T::zero(); self.weight.len()];
        transpose(ic, rows, &self.weight, &mut w_t);
        let mut cols = vec![T::zero(); rows * h * w];
        let mut out = Tensor::zeros(out_shape);
        for b in 0..n {
            gemm(rows, h * w, ic, &w_t, x.item(b), &mut cols, false);
            let y = out.item_mut(b);
            col2im(&cols, oc, oh, ow, self.geometry, h, w, y);
            add_bias(y, &self.bias, oh * ow);
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: Option<(&mut [T], &mut [T])>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let out_shape = self.output_shape(x.shape())?;
        dy.expect_shape(out_shape)?;
        let [n, ic, h, w] = x.shape();
        let [_, oc, oh, ow] = out_shape;
        let k = self.geometry.kernel;
        let rows = oc * k * k;
        let positions = h * w;
        let mut dcols = vec![T::zero(); rows * positions];
        let mut dcols_t = vec![T::zero(); rows * positions];
        let mut grads = grads;
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape()));
        for b in 0..n {
            let g = dy.item(b);
            im2col(g, oc, oh, ow, self.geometry, h, w, &mut dcols);
            if let Some((dw, db)) = grads.as_mut() {
                transpose(rows, positions, &dcols, &mut dcols_t);
                gemm(ic, rows, positions, x.item(b), &dcols_t, dw, true);
                accumulate_bias_grad(g, db, oh * ow);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    ic,
                    positions,
                    rows,
                    &self.weight,
                    &dcols,
                    dx.item_mut(b),
                    false,
                );
            }
        }
        Ok(dx)
    }
}
