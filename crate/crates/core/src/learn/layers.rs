use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::Field;
use crate::{Error, Result};

pub const KERNEL: usize = 3;

/// 3×3 convolution or transposed convolution on channel-last fields.
///
/// Weights are laid out `[ky][kx][c_in][c_out]`. A regular convolution
/// reads input `(oy·s + ky − pad, ox·s + kx − pad)` for output `(oy, ox)`;
/// the transposed one scatters input `(iy, ix)` to output
/// `(iy·s + ky − pad, ix·s + kx − pad)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
    pub transposed: bool,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(c_in: usize, c_out: usize, stride: usize, transposed: bool) -> Self {
        Self {
            c_in,
            c_out,
            stride,
            pad: 1,
            output_pad: if transposed { stride - 1 } else { 0 },
            transposed,
            weight: vec![0.0; KERNEL * KERNEL * c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    /// Uniform in ±√(6 / fan_in), zero bias.
    pub fn init(c_in: usize, c_out: usize, stride: usize, transposed: bool, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(c_in, c_out, stride, transposed);
        let bound = (6.0 / (KERNEL * KERNEL * c_in) as f64).sqrt();
        for w in &mut conv.weight {
            *w = rng.gen_range(-bound..bound);
        }
        conv
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |n: usize| {
            if self.transposed {
                (n - 1) * self.stride + KERNEL + self.output_pad - 2 * self.pad
            } else {
                (n + 2 * self.pad - KERNEL) / self.stride + 1
            }
        };
        (f(h), f(w))
    }

    /// Visit every (input cell, output cell, tap) triple that the layer connects.
    fn for_each_tap(&self, in_hw: (usize, usize), out_hw: (usize, usize), mut f: impl FnMut(usize, usize, usize)) {
        let (small, large) = if self.transposed {
            (in_hw, out_hw)
        } else {
            (out_hw, in_hw)
        };
        for sy in 0..small.0 {
            for sx in 0..small.1 {
                for ky in 0..KERNEL {
                    let ly = (sy * self.stride + ky) as isize - self.pad as isize;
                    if ly < 0 || ly >= large.0 as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let lx = (sx * self.stride + kx) as isize - self.pad as isize;
                        if lx < 0 || lx >= large.1 as isize {
                            continue;
                        }
                        let s = sy * small.1 + sx;
                        let l = ly as usize * large.1 + lx as usize;
                        let tap = ky * KERNEL + kx;
                        if self.transposed {
                            f(s, l, tap);
                        } else {
                            f(l, s, tap);
                        }
                    }
                }
            }
        }
    }

    fn check_input(&self, x: &Field) -> Result<()> {
        if x.channels() != self.c_in {
            return Err(Error::shape(format!(
                "layer expects {} channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        if x.h() == 0 || x.w() == 0 {
            return Err(Error::shape("empty spatial extent"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Field) -> Result<Field> {
        self.check_input(x)?;
        let (oh, ow) = self.output_size(x.h(), x.w());
        let mut out = Field::zeros(oh, ow, self.c_out);
        for i in 0..oh * ow {
            out.cell_mut(i).copy_from_slice(&self.bias);
        }
        let (ci, co) = (self.c_in, self.c_out);
        let data = out.data_mut();
        self.for_each_tap((x.h(), x.w()), (oh, ow), |i, o, tap| {
            let xin = x.cell(i);
            let y = &mut data[o * co..(o + 1) * co];
            for (c, &v) in xin.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let k = &self.weight[(tap * ci + c) * co..(tap * ci + c + 1) * co];
                for (yo, ko) in y.iter_mut().zip(k) {
                    *yo += v * ko;
                }
            }
        });
        Ok(out)
    }

    /// Gradients w.r.t. input and parameters given the output gradient.
    pub fn backward(&self, x: &Field, grad_out: &Field) -> (Field, ConvGrad) {
        let (ci, co) = (self.c_in, self.c_out);
        let mut grad_in = Field::zeros(x.h(), x.w(), ci);
        let mut gw = vec![0.0; self.weight.len()];
        let mut gb = vec![0.0; co];
        for o in 0..grad_out.n_cells() {
            for (b, g) in gb.iter_mut().zip(grad_out.cell(o)) {
                *b += g;
            }
        }
        let gin = grad_in.data_mut();
        self.for_each_tap((x.h(), x.w()), (grad_out.h(), grad_out.w()), |i, o, tap| {
            let g = grad_out.cell(o);
            let xin = x.cell(i);
            for c in 0..ci {
                let base = (tap * ci + c) * co;
                let k = &self.weight[base..base + co];
                gin[i * ci + c] += k.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                let v = xin[c];
                if v != 0.0 {
                    for (w, gg) in gw[base..base + co].iter_mut().zip(g) {
                        *w += v * gg;
                    }
                }
            }
        });
        (grad_in, ConvGrad { weight: gw, bias: gb })
    }
}

/// The same affine map applied to every cell's channel vector.
/// Weights are laid out `[c_in][c_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub c_in: usize,
    pub c_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            c_in,
            c_out,
            weight: vec![0.0; c_in * c_out],
            bias: vec![0.0; c_out],
        }
    }

    /// Uniform in ±√(`gain` / fan_in), zero bias.
    pub fn init(c_in: usize, c_out: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let mut lin = Self::zeros(c_in, c_out);
        let bound = (gain / c_in as f64).sqrt();
        for w in &mut lin.weight {
            *w = rng.gen_range(-bound..bound);
        }
        lin
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&self.bias);
        for (c, &v) in x.iter().enumerate() {
            let k = &self.weight[c * self.c_out..(c + 1) * self.c_out];
            for (yo, ko) in y.iter_mut().zip(k) {
                *yo += v * ko;
            }
        }
    }

    pub fn forward(&self, x: &Field) -> Result<Field> {
        if x.channels() != self.c_in {
            return Err(Error::shape(format!(
                "linear layer expects {} channels, got {}",
                self.c_in,
                x.channels()
            )));
        }
        let mut out = Field::zeros(x.h(), x.w(), self.c_out);
        for i in 0..x.n_cells() {
            self.apply(x.cell(i), out.cell_mut(i));
        }
        Ok(out)
    }

    /// Add one cell's contribution to the parameter gradients.
    pub fn accumulate(&self, x: &[f64], g: &[f64], grad: &mut ConvGrad) {
        for (b, gg) in grad.bias.iter_mut().zip(g) {
            *b += gg;
        }
        for (c, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (w, gg) in grad.weight[c * self.c_out..(c + 1) * self.c_out].iter_mut().zip(g) {
                *w += v * gg;
            }
        }
    }

    pub fn backward_input(&self, g: &[f64], gx: &mut [f64]) {
        for (c, out) in gx.iter_mut().enumerate() {
            let k = &self.weight[c * self.c_out..(c + 1) * self.c_out];
            *out = k.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }

    pub fn backward(&self, x: &Field, grad_out: &Field) -> (Field, ConvGrad) {
        let mut grad = ConvGrad {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.c_out],
        };
        let mut gin = Field::zeros(x.h(), x.w(), self.c_in);
        for i in 0..x.n_cells() {
            self.accumulate(x.cell(i), grad_out.cell(i), &mut grad);
            self.backward_input(grad_out.cell(i), gin.cell_mut(i));
        }
        (gin, grad)
    }
}

pub fn relu(x: &Field) -> Field {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

/// Mask the gradient by the sign of the pre-activation.
pub fn relu_backward(pre: &Field, grad: &mut Field) {
    for (g, &p) in grad.data_mut().iter_mut().zip(pre.data()) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}
