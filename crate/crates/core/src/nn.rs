//! The differentiable layer vocabulary: 1-D convolutions (standard,
//! pointwise, depthwise), GELU, softmax, max-pooling, batch normalization,
//! and the fully connected layer.
//!
//! Convolution is cross-correlation — no kernel flip. Weights initialize
//! uniformly in ±√(1/fan_in) and biases to zero, so a fresh layer neither
//! amplifies nor shifts its input on average.

use std::cell::RefCell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{GradStore, Op, Tensor};
use crate::Real;

/// Whether stateful layers (batch normalization) use batch statistics and
/// update their running estimates, or freeze them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn uniform_init(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<Real> {
    let bound = (1.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound) as Real).collect()
}

/// Output length of a window op: ⌊(L + 2·padding − kernel)/stride⌋ + 1.
pub fn conv_output_length(l: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::config("kernel and stride must be ≥ 1"));
    }
    let span = l + 2 * padding;
    if span < kernel {
        return Err(Error::dim(format!(
            "window does not fit: length {l}, kernel {kernel}, stride {stride}, padding {padding}"
        )));
    }
    Ok((span - kernel) / stride + 1)
}

/// Valid output range `[lo, hi)` for kernel tap offset `off = τ − padding`:
/// the `t` with `0 ≤ t·stride + off < l_in`.
fn tap_bounds(l_in: usize, l_out: usize, stride: usize, off: isize) -> (usize, usize) {
    let lo = if off >= 0 {
        0
    } else {
        ((-off) as usize).div_ceil(stride)
    };
    let last = l_in as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = (last as usize / stride + 1).min(l_out);
    (lo, hi.max(lo))
}

/// Cross-correlation of `[B, Cin, L]` with `[Cout, Cin, k]` weights plus
/// bias (`[C, 1, k]` weights when `depthwise`, acting channel by channel).
pub fn conv1d(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    depthwise: bool,
) -> Result<Tensor> {
    if x.rank() != 3 || weights.rank() != 3 || bias.rank() != 1 {
        return Err(Error::dim(format!(
            "conv1d needs x[B,C,L], weights[O,I,k], bias[O]; got {:?}, {:?}, {:?}",
            x.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let (batch, channels_in, l_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_ch, w_in, kernel) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    if depthwise {
        if w_in != 1 || out_ch != channels_in {
            return Err(Error::dim(format!(
                "depthwise weights must be [{channels_in}, 1, k], got {:?}",
                weights.shape()
            )));
        }
    } else if w_in != channels_in {
        return Err(Error::dim(format!(
            "weights expect {w_in} input channels, x has {channels_in}"
        )));
    }
    if bias.shape()[0] != out_ch {
        return Err(Error::dim(format!(
            "bias has {} entries for {out_ch} output channels",
            bias.shape()[0]
        )));
    }
    let l_out = conv_output_length(l_in, kernel, stride, padding)?;

    let mut out = vec![0.0; batch * out_ch * l_out];
    {
        let xv = x.data();
        let wv = weights.data();
        let bv = bias.data();
        for b in 0..batch {
            for o in 0..out_ch {
                let row = &mut out[(b * out_ch + o) * l_out..(b * out_ch + o + 1) * l_out];
                row.fill(bv[o]);
                let in_range = if depthwise { o..o + 1 } else { 0..channels_in };
                for i in in_range {
                    let xrow = &xv[(b * channels_in + i) * l_in..(b * channels_in + i + 1) * l_in];
                    let wbase = if depthwise { o * kernel } else { (o * channels_in + i) * kernel };
                    for tau in 0..kernel {
                        let w = wv[wbase + tau];
                        if w == 0.0 {
                            continue;
                        }
                        let off = tau as isize - padding as isize;
                        let (lo, hi) = tap_bounds(l_in, l_out, stride, off);
                        for t in lo..hi {
                            let src = (t * stride) as isize + off;
                            row[t] += w * xrow[src as usize];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![batch, out_ch, l_out],
        out,
        Op::Conv1d {
            x: x.clone(),
            weight: weights.clone(),
            bias: bias.clone(),
            stride,
            padding,
            depthwise,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    depthwise: bool,
    out: &Tensor,
    g: &[Real],
    store: &mut GradStore,
) {
    let (batch, channels_in, l_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (out_ch, _, kernel) = (weights.shape()[0], weights.shape()[1], weights.shape()[2]);
    let l_out = out.shape()[2];

    store.with_slot(bias, |gb| {
        for b in 0..batch {
            for o in 0..out_ch {
                let grow = &g[(b * out_ch + o) * l_out..(b * out_ch + o + 1) * l_out];
                gb[o] += grow.iter().sum::<Real>();
            }
        }
    });

    {
        let xv = x.data();
        store.with_slot(weights, |gw| {
            for b in 0..batch {
                for o in 0..out_ch {
                    let grow = &g[(b * out_ch + o) * l_out..(b * out_ch + o + 1) * l_out];
                    let in_range = if depthwise { o..o + 1 } else { 0..channels_in };
                    for i in in_range {
                        let xrow =
                            &xv[(b * channels_in + i) * l_in..(b * channels_in + i + 1) * l_in];
                        let wbase =
                            if depthwise { o * kernel } else { (o * channels_in + i) * kernel };
                        for tau in 0..kernel {
                            let off = tau as isize - padding as isize;
                            let (lo, hi) = tap_bounds(l_in, l_out, stride, off);
                            let mut acc = 0.0;
                            for t in lo..hi {
                                let src = (t * stride) as isize + off;
                                acc += grow[t] * xrow[src as usize];
                            }
                            gw[wbase + tau] += acc;
                        }
                    }
                }
            }
        });
    }

    let wv = weights.data();
    store.with_slot(x, |gx| {
        for b in 0..batch {
            for o in 0..out_ch {
                let grow = &g[(b * out_ch + o) * l_out..(b * out_ch + o + 1) * l_out];
                let in_range = if depthwise { o..o + 1 } else { 0..channels_in };
                for i in in_range {
                    let gxrow =
                        &mut gx[(b * channels_in + i) * l_in..(b * channels_in + i + 1) * l_in];
                    let wbase = if depthwise { o * kernel } else { (o * channels_in + i) * kernel };
                    for tau in 0..kernel {
                        let w = wv[wbase + tau];
                        if w == 0.0 {
                            continue;
                        }
                        let off = tau as isize - padding as isize;
                        let (lo, hi) = tap_bounds(l_in, l_out, stride, off);
                        for t in lo..hi {
                            let src = (t * stride) as isize + off;
                            gxrow[src as usize] += w * grow[t];
                        }
                    }
                }
            }
        }
    });
}

/// A convolution layer: the spec of the window plus its learnable tensors.
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub depthwise: bool,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Conv1d> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::config("channel counts must be ≥ 1"));
        }
        let fan_in = in_channels * kernel;
        let weights = Tensor::param(
            uniform_init(out_channels * in_channels * kernel, fan_in, rng),
            &[out_channels, in_channels, kernel],
        )?;
        let bias = Tensor::param(vec![0.0; out_channels], &[out_channels])?;
        Ok(Conv1d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            depthwise: false,
            weights,
            bias,
        })
    }

    /// Channel-per-channel convolution with length-preserving padding
    /// (kernel must be odd).
    pub fn new_depthwise(channels: usize, kernel: usize, rng: &mut impl Rng) -> Result<Conv1d> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!(
                "depthwise kernel must be odd to preserve length, got {kernel}"
            )));
        }
        let weights = Tensor::param(
            uniform_init(channels * kernel, kernel, rng),
            &[channels, 1, kernel],
        )?;
        let bias = Tensor::param(vec![0.0; channels], &[channels])?;
        Ok(Conv1d {
            in_channels: channels,
            out_channels: channels,
            kernel,
            stride: 1,
            padding: (kernel - 1) / 2,
            depthwise: true,
            weights,
            bias,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv1d(x, &self.weights, &self.bias, self.stride, self.padding, self.depthwise)
    }

    pub fn output_length(&self, l: usize) -> Result<usize> {
        conv_output_length(l, self.kernel, self.stride, self.padding)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Exact GELU, elementwise: `x·Φ(x)`.
pub fn gelu(x: &Tensor) -> Tensor {
    x.gelu()
}

/// Max-subtracted softmax along `axis`; outputs sum to 1 along that axis.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let size = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let lanes = x.len() / size;
    let mut out = vec![0.0; x.len()];
    {
        let xv = x.data();
        for lane in 0..lanes {
            let base = (lane / inner) * (inner * size) + (lane % inner);
            let mut max = Real::NEG_INFINITY;
            for j in 0..size {
                max = max.max(xv[base + j * inner]);
            }
            let mut total = 0.0;
            for j in 0..size {
                let e = (xv[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..size {
                out[base + j * inner] /= total;
            }
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        Op::Softmax { x: x.clone(), axis },
    ))
}

pub(crate) fn softmax_backward(
    x: &Tensor,
    axis: usize,
    out: &Tensor,
    g: &[Real],
    store: &mut GradStore,
) {
    let size = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let lanes = x.len() / size;
    let s = out.data();
    store.with_slot(x, |gx| {
        for lane in 0..lanes {
            let base = (lane / inner) * (inner * size) + (lane % inner);
            let mut dot = 0.0;
            for j in 0..size {
                let idx = base + j * inner;
                dot += g[idx] * s[idx];
            }
            for j in 0..size {
                let idx = base + j * inner;
                gx[idx] += s[idx] * (g[idx] - dot);
            }
        }
    });
}

/// Window maxima over the last axis of `[B, C, L]`; gradient routes to the
/// first maximal element of each window.
pub fn maxpool1d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::dim(format!(
            "maxpool1d needs [B,C,L], got {:?}",
            x.shape()
        )));
    }
    let (batch, channels, l_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if l_in < kernel {
        return Err(Error::dim(format!(
            "cannot pool length {l_in} with kernel {kernel}"
        )));
    }
    let l_out = conv_output_length(l_in, kernel, stride, 0)?;
    let mut out = vec![0.0; batch * channels * l_out];
    let mut argmax = vec![0usize; batch * channels * l_out];
    {
        let xv = x.data();
        for r in 0..batch * channels {
            let xrow = &xv[r * l_in..(r + 1) * l_in];
            for t in 0..l_out {
                let start = t * stride;
                let mut best = start;
                for j in start + 1..start + kernel {
                    if xrow[j] > xrow[best] {
                        best = j;
                    }
                }
                out[r * l_out + t] = xrow[best];
                argmax[r * l_out + t] = r * l_in + best;
            }
        }
    }
    Ok(Tensor::from_op(
        vec![batch, channels, l_out],
        out,
        Op::MaxPool1d { x: x.clone(), argmax },
    ))
}

/// Per-channel batch normalization with learnable affine and running
/// statistics for evaluation.
pub struct BatchNorm1d {
    pub scale: Tensor,
    pub shift: Tensor,
    running_mean: RefCell<Vec<Real>>,
    running_var: RefCell<Vec<Real>>,
    pub momentum: Real,
    pub epsilon: Real,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Result<BatchNorm1d> {
        if channels == 0 {
            return Err(Error::config("batchnorm needs ≥ 1 channel"));
        }
        Ok(BatchNorm1d {
            scale: Tensor::param(vec![1.0; channels], &[channels])?,
            shift: Tensor::param(vec![0.0; channels], &[channels])?,
            running_mean: RefCell::new(vec![0.0; channels]),
            running_var: RefCell::new(vec![1.0; channels]),
            momentum: 0.1,
            epsilon: 1e-5,
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn running_mean(&self) -> Vec<Real> {
        self.running_mean.borrow().clone()
    }

    pub fn running_var(&self) -> Vec<Real> {
        self.running_var.borrow().clone()
    }

    pub fn set_running_stats(&self, mean: &[Real], var: &[Real]) -> Result<()> {
        if mean.len() != self.channels() || var.len() != self.channels() {
            return Err(Error::dim(format!(
                "running stats need {} entries, got {}/{}",
                self.channels(),
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::numeric("negative running variance"));
        }
        self.running_mean.borrow_mut().copy_from_slice(mean);
        self.running_var.borrow_mut().copy_from_slice(var);
        Ok(())
    }

    /// Train mode normalizes by batch statistics over (batch, length) per
    /// channel and updates the running estimates (variance with the
    /// n/(n−1) correction); eval mode normalizes by the running estimates.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if x.rank() != 3 {
            return Err(Error::dim(format!(
                "batchnorm needs [B,C,L], got {:?}",
                x.shape()
            )));
        }
        let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        if channels != self.channels() {
            return Err(Error::dim(format!(
                "batchnorm built for {} channels, x has {channels}",
                self.channels()
            )));
        }
        let n = batch * len;
        if mode == Mode::Train && n < 2 {
            return Err(Error::contract(
                "batchnorm train mode needs at least 2 values per channel",
            ));
        }

        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; channels];
        {
            let xv = x.data();
            let mut means = vec![0.0; channels];
            let mut vars = vec![0.0; channels];
            match mode {
                Mode::Train => {
                    for c in 0..channels {
                        let mut sum = 0.0;
                        for b in 0..batch {
                            let row = &xv[(b * channels + c) * len..(b * channels + c + 1) * len];
                            sum += row.iter().sum::<Real>();
                        }
                        let mean = sum / n as Real;
                        let mut sq = 0.0;
                        for b in 0..batch {
                            let row = &xv[(b * channels + c) * len..(b * channels + c + 1) * len];
                            for &v in row {
                                sq += (v - mean) * (v - mean);
                            }
                        }
                        means[c] = mean;
                        vars[c] = sq / n as Real;
                    }
                    let mut rm = self.running_mean.borrow_mut();
                    let mut rv = self.running_var.borrow_mut();
                    for c in 0..channels {
                        let unbiased = vars[c] * n as Real / (n as Real - 1.0);
                        rm[c] = (1.0 - self.momentum) * rm[c] + self.momentum * means[c];
                        rv[c] = (1.0 - self.momentum) * rv[c] + self.momentum * unbiased;
                    }
                }
                Mode::Eval => {
                    means.copy_from_slice(&self.running_mean.borrow());
                    vars.copy_from_slice(&self.running_var.borrow());
                }
            }
            for c in 0..channels {
                inv_std[c] = 1.0 / (vars[c] + self.epsilon).sqrt();
            }
            for b in 0..batch {
                for c in 0..channels {
                    let base = (b * channels + c) * len;
                    for t in 0..len {
                        normalized[base + t] = (xv[base + t] - means[c]) * inv_std[c];
                    }
                }
            }
        }

        let sv = self.scale.data();
        let hv = self.shift.data();
        let mut out = vec![0.0; x.len()];
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                for t in 0..len {
                    out[base + t] = sv[c] * normalized[base + t] + hv[c];
                }
            }
        }
        drop(sv);
        drop(hv);
        Ok(Tensor::from_op(
            x.shape().to_vec(),
            out,
            Op::BatchNorm {
                x: x.clone(),
                scale: self.scale.clone(),
                shift: self.shift.clone(),
                normalized,
                inv_std,
                train: mode == Mode::Train,
            },
        ))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    normalized: &[Real],
    inv_std: &[Real],
    train: bool,
    g: &[Real],
    store: &mut GradStore,
) {
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let n = (batch * len) as Real;

    let mut g_sum = vec![0.0; channels];
    let mut g_dot = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * len;
            for t in 0..len {
                g_sum[c] += g[base + t];
                g_dot[c] += g[base + t] * normalized[base + t];
            }
        }
    }

    store.with_slot(scale, |gs| {
        for c in 0..channels {
            gs[c] += g_dot[c];
        }
    });
    store.with_slot(shift, |gh| {
        for c in 0..channels {
            gh[c] += g_sum[c];
        }
    });

    let sv = scale.data();
    store.with_slot(x, |gx| {
        for b in 0..batch {
            for c in 0..channels {
                let base = (b * channels + c) * len;
                let k = sv[c] * inv_std[c];
                if train {
                    for t in 0..len {
                        let i = base + t;
                        gx[i] += k * (g[i] - g_sum[c] / n - normalized[i] * g_dot[c] / n);
                    }
                } else {
                    for t in 0..len {
                        gx[base + t] += k * g[base + t];
                    }
                }
            }
        }
    });
}

/// Affine map `[B, D] → [B, D′]`.
pub fn linear(x: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || weights.rank() != 2 || bias.rank() != 1 {
        return Err(Error::dim(format!(
            "linear needs x[B,D], weights[O,D], bias[O]; got {:?}, {:?}, {:?}",
            x.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let (batch, d_in) = (x.shape()[0], x.shape()[1]);
    let (d_out, w_in) = (weights.shape()[0], weights.shape()[1]);
    if d_in != w_in || bias.shape()[0] != d_out {
        return Err(Error::dim(format!(
            "linear shapes disagree: x[.., {d_in}], weights[{d_out}, {w_in}], bias[{}]",
            bias.shape()[0]
        )));
    }
    let mut out = vec![0.0; batch * d_out];
    {
        let xv = x.data();
        let wv = weights.data();
        let bv = bias.data();
        for b in 0..batch {
            let xrow = &xv[b * d_in..(b + 1) * d_in];
            let orow = &mut out[b * d_out..(b + 1) * d_out];
            for (o, slot) in orow.iter_mut().enumerate() {
                let wrow = &wv[o * d_in..(o + 1) * d_in];
                let mut acc = bv[o];
                for d in 0..d_in {
                    acc += xrow[d] * wrow[d];
                }
                *slot = acc;
            }
        }
    }
    Ok(Tensor::from_op(
        vec![batch, d_out],
        out,
        Op::Linear { x: x.clone(), weight: weights.clone(), bias: bias.clone() },
    ))
}

pub(crate) fn linear_backward(
    x: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    g: &[Real],
    store: &mut GradStore,
) {
    let (batch, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = weights.shape()[0];

    store.with_slot(bias, |gb| {
        for b in 0..batch {
            for o in 0..d_out {
                gb[o] += g[b * d_out + o];
            }
        }
    });
    {
        let xv = x.data();
        store.with_slot(weights, |gw| {
            for b in 0..batch {
                let xrow = &xv[b * d_in..(b + 1) * d_in];
                for o in 0..d_out {
                    let gv = g[b * d_out + o];
                    if gv == 0.0 {
                        continue;
                    }
                    let wrow = &mut gw[o * d_in..(o + 1) * d_in];
                    for d in 0..d_in {
                        wrow[d] += gv * xrow[d];
                    }
                }
            }
        });
    }
    let wv = weights.data();
    store.with_slot(x, |gx| {
        for b in 0..batch {
            let gxrow = &mut gx[b * d_in..(b + 1) * d_in];
            for o in 0..d_out {
                let gv = g[b * d_out + o];
                if gv == 0.0 {
                    continue;
                }
                let wrow = &wv[o * d_in..(o + 1) * d_in];
                for d in 0..d_in {
                    gxrow[d] += gv * wrow[d];
                }
            }
        }
    });
}

/// A fully connected layer with its learnable tensors.
pub struct Linear {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Result<Linear> {
        Ok(Linear {
            weights: Tensor::param(uniform_init(d_out * d_in, d_in, rng), &[d_out, d_in])?,
            bias: Tensor::param(vec![0.0; d_out], &[d_out])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        linear(x, &self.weights, &self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randt(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<Real> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(data, shape).unwrap()
    }

    #[test]
    fn conv_length_arithmetic_matches_the_architecture_table() {
        assert_eq!(conv_output_length(2048, 63, 1, 31).unwrap(), 2048);
        assert_eq!(conv_output_length(2048, 64, 2, 0).unwrap(), 993);
        assert_eq!(conv_output_length(993, 3, 2, 0).unwrap(), 496);
    }

    #[test]
    fn conv_reports_unfittable_windows() {
        let err = conv_output_length(4, 9, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("length 4") && msg.contains("kernel 9"), "got {msg}");
    }

    #[test]
    fn identity_kernel_convolution_passes_input_through() {
        let x = randt(&[2, 1, 10], 41);
        let w = Tensor::param(vec![1.0], &[1, 1, 1]).unwrap();
        let b = Tensor::param(vec![0.0], &[1]).unwrap();
        let y = conv1d(&x, &w, &b, 1, 0, false).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn convolution_matches_a_direct_summation_oracle() {
        let x = randt(&[2, 3, 12], 42);
        let w = randt(&[4, 3, 5], 43);
        let b = randt(&[4], 44);
        let (stride, padding) = (2, 1);
        let y = conv1d(&x, &w, &b, stride, padding, false).unwrap();
        let l_out = conv_output_length(12, 5, stride, padding).unwrap();
        assert_eq!(y.shape(), &[2, 4, l_out]);
        let (xv, wv, bv, yv) = (x.to_vec(), w.to_vec(), b.to_vec(), y.to_vec());
        for bt in 0..2 {
            for o in 0..4 {
                for t in 0..l_out {
                    let mut want = bv[o];
                    for i in 0..3 {
                        for tau in 0..5 {
                            let src = (t * stride + tau) as isize - padding as isize;
                            if src >= 0 && (src as usize) < 12 {
                                want += wv[(o * 3 + i) * 5 + tau]
                                    * xv[(bt * 3 + i) * 12 + src as usize];
                            }
                        }
                    }
                    let got = yv[(bt * 4 + o) * l_out + t];
                    assert!((got - want).abs() < 1e-12, "b{bt} o{o} t{t}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let x0 = randt(&[2, 3, 8], 45);
        let w0 = randt(&[2, 3, 3], 46);
        let b0 = randt(&[2], 47);
        for (probe, build) in [
            (&w0, 0usize),
            (&x0, 1),
            (&b0, 2),
        ] {
            let report = gradcheck(
                |p| {
                    let (x, w, b) = match build {
                        0 => (x0.clone(), p.clone(), b0.clone()),
                        1 => (p.clone(), w0.clone(), b0.clone()),
                        _ => (x0.clone(), w0.clone(), p.clone()),
                    };
                    let y = conv1d(&x, &w, &b, 2, 1, false)?;
                    Ok(y.mul(&y)?.sum())
                },
                probe,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "conv input {build}: max rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn depthwise_center_tap_kernel_is_identity() {
        let x = randt(&[2, 3, 9], 48);
        let w = Tensor::param(vec![0.0, 1.0, 0.0].repeat(3), &[3, 1, 3]).unwrap();
        let b = Tensor::param(vec![0.0; 3], &[3]).unwrap();
        let y = conv1d(&x, &w, &b, 1, 1, true).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn depthwise_uniform_kernel_is_a_moving_average() {
        let x = randt(&[1, 2, 8], 49);
        let third: Real = 1.0 / 3.0;
        let w = Tensor::param(vec![third; 6], &[2, 1, 3]).unwrap();
        let b = Tensor::param(vec![0.0; 2], &[2]).unwrap();
        let y = conv1d(&x, &w, &b, 1, 1, true).unwrap();
        let xv = x.to_vec();
        let yv = y.to_vec();
        for c in 0..2 {
            for t in 0..8 {
                let mut want = 0.0;
                for d in -1i64..=1 {
                    let src = t as i64 + d;
                    if (0..8).contains(&src) {
                        want += xv[c * 8 + src as usize] * third;
                    }
                }
                assert!((yv[c * 8 + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        let x0 = randt(&[2, 4, 8], 50);
        let b0 = randt(&[4], 51);
        let w0 = randt(&[4, 1, 3], 52);
        let report = gradcheck(
            |w| {
                let y = conv1d(&x0, w, &b0, 1, 1, true)?;
                Ok(y.mul(&y)?.sum())
            },
            &w0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel {}", report.max_rel_err);
        let report = gradcheck(
            |x| {
                let y = conv1d(x, &w0, &b0, 1, 1, true)?;
                Ok(y.mul(&y)?.sum())
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel {}", report.max_rel_err);
    }

    #[test]
    fn softmax_of_uniform_input_is_uniform() {
        let x = Tensor::from_vec(vec![1.0, 1.0, 1.0], &[3]).unwrap();
        let y = softmax(&x, 0).unwrap();
        for v in y.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let x = Tensor::from_vec(vec![1000.0, 0.0], &[2]).unwrap();
        let y = softmax(&x, 0).unwrap().to_vec();
        assert!(y[0].is_finite() && y[1].is_finite());
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!(y[1] < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_every_axis() {
        let x = randt(&[2, 3, 5], 53);
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            let yv = y.to_vec();
            let size = x.shape()[axis];
            let inner: usize = x.shape()[axis + 1..].iter().product();
            let lanes = x.len() / size;
            for lane in 0..lanes {
                let base = (lane / inner) * (inner * size) + (lane % inner);
                let total: Real = (0..size).map(|j| yv[base + j * inner]).sum();
                assert!((total - 1.0).abs() < 1e-12, "axis {axis} lane {lane}: {total}");
            }
        }
    }

    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let x = randt(&[2, 4, 5], 54);
        for axis in [1usize, 2] {
            let k = randt(&[2, 4, 5], 55).detach();
            let report = gradcheck(
                |t| Ok(softmax(t, axis)?.mul(&k)?.sum()),
                &x,
                1e-5,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "axis {axis}: max rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Tensor::from_vec(vec![1.0, 3.0, 2.0, 5.0, 4.0], &[1, 1, 5]).unwrap();
        let y = maxpool1d(&x, 3, 2).unwrap();
        assert_eq!(y.to_vec(), vec![3.0, 5.0]);
    }

    #[test]
    fn maxpool_on_monotone_input_takes_strided_tail_samples() {
        let x = Tensor::from_vec((0..10).map(|v| v as Real).collect(), &[1, 1, 10]).unwrap();
        let y = maxpool1d(&x, 3, 2).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn maxpool_rejects_short_input() {
        let x = Tensor::zeros(&[1, 1, 2]).unwrap();
        assert!(maxpool1d(&x, 3, 2).is_err());
    }

    #[test]
    fn maxpool_backward_conserves_gradient_mass_and_breaks_ties_low() {
        let x = Tensor::param(vec![7.0, 7.0, 1.0, 0.0, 2.0], &[1, 1, 5]).unwrap();
        let y = maxpool1d(&x, 3, 2).unwrap();
        let k = Tensor::from_vec(vec![2.0, 5.0], &[1, 1, 2]).unwrap();
        y.mul(&k).unwrap().sum().backward().unwrap();
        let gx = x.grad();
        // first window ties between index 0 and 1: the first index wins
        assert_eq!(gx, vec![2.0, 0.0, 0.0, 0.0, 5.0]);
        let g_in: Real = k.to_vec().iter().sum();
        let g_out: Real = gx.iter().sum();
        assert!((g_in - g_out).abs() < 1e-12);
    }

    #[test]
    fn maxpool_gradients_match_finite_differences() {
        // Distinct values so the argmax is stable under ±h perturbation.
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut vals: Vec<Real> = (0..2 * 3 * 9).map(|i| i as Real * 0.1).collect();
        for i in (1..vals.len()).rev() {
            let j = rng.gen_range(0..=i);
            vals.swap(i, j);
        }
        let x = Tensor::from_vec(vals, &[2, 3, 9]).unwrap();
        let report = gradcheck(
            |t| {
                let y = maxpool1d(t, 3, 2)?;
                Ok(y.mul(&y)?.sum())
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "max rel {}", report.max_rel_err);
    }

    #[test]
    fn batchnorm_train_output_is_standardized_per_channel() {
        let bn = BatchNorm1d::new(3).unwrap();
        let x = randt(&[4, 3, 7], 57);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let yv = y.to_vec();
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(&yv[(b * 3 + c) * 7..(b * 3 + c + 1) * 7]);
            }
            let n = vals.len() as Real;
            let mean: Real = vals.iter().sum::<Real>() / n;
            let var: Real = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
    }

    #[test]
    fn batchnorm_eval_with_fresh_stats_is_identity_up_to_epsilon() {
        let bn = BatchNorm1d::new(2).unwrap();
        let x = randt(&[2, 2, 5], 58);
        let y = bn.forward(&x, Mode::Eval).unwrap();
        let (xv, yv) = (x.to_vec(), y.to_vec());
        for i in 0..xv.len() {
            assert!((xv[i] - yv[i]).abs() < 1e-5 * xv[i].abs().max(1.0));
        }
    }

    #[test]
    fn batchnorm_train_needs_two_values() {
        let bn = BatchNorm1d::new(2).unwrap();
        let x = Tensor::zeros(&[1, 2, 1]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(crate::Error::Contract(_))));
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_updates_running_statistics_toward_batch_values() {
        let bn = BatchNorm1d::new(1).unwrap();
        let x = Tensor::from_vec(vec![4.0, 4.0, 4.0, 4.0], &[2, 1, 2]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        let rm = bn.running_mean()[0];
        // running mean moves 10% of the way from 0 toward the batch mean 4
        assert!((rm - 0.4).abs() < 1e-12, "running mean {rm}");
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences_in_both_modes() {
        let x0 = randt(&[2, 3, 6], 59);
        for mode in [Mode::Train, Mode::Eval] {
            let bn = BatchNorm1d::new(3).unwrap();
            bn.set_running_stats(&[0.1, -0.2, 0.3], &[1.5, 0.7, 2.0]).unwrap();
            let report = gradcheck(
                |t| {
                    let y = bn.forward(t, mode)?;
                    Ok(y.mul(&y)?.sum())
                },
                &x0,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.passed, "{mode:?}: max rel {}", report.max_rel_err);
        }
    }

    #[test]
    fn batchnorm_scale_and_shift_gradients_match_finite_differences() {
        let x = randt(&[2, 3, 6], 60);
        let bn = BatchNorm1d::new(3).unwrap();
        let loss = |bn: &BatchNorm1d| -> crate::Result<Tensor> {
            let y = bn.forward(&x, Mode::Train)?;
            Ok(y.mul(&y)?.sum().add(&y.sum())?.sum())
        };
        let l = loss(&bn).unwrap();
        l.backward().unwrap();
        let analytic_scale = bn.scale.grad();
        let analytic_shift = bn.shift.grad();
        for c in 0..3 {
            let num = bn.scale.numeric_grad_at(c, 1e-5, || loss(&bn)).unwrap();
            assert!(
                (num - analytic_scale[c]).abs() / num.abs().max(1.0) < 1e-4,
                "scale[{c}]: {num} vs {}",
                analytic_scale[c]
            );
            let num = bn.shift.numeric_grad_at(c, 1e-5, || loss(&bn)).unwrap();
            assert!(
                (num - analytic_shift[c]).abs() / num.abs().max(1.0) < 1e-4,
                "shift[{c}]: {num} vs {}",
                analytic_shift[c]
            );
        }
    }

    #[test]
    fn linear_identity_weights_pass_through() {
        let x = randt(&[3, 4], 61);
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let weights = Tensor::param(w, &[4, 4]).unwrap();
        let bias = Tensor::param(vec![0.0; 4], &[4]).unwrap();
        let y = linear(&x, &weights, &bias).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn linear_rejects_mismatched_inner_dimension() {
        let x = Tensor::zeros(&[2, 5]).unwrap();
        let w = Tensor::zeros(&[3, 4]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert!(linear(&x, &w, &b).is_err());
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let x0 = randt(&[3, 5], 62);
        let w0 = randt(&[4, 5], 63);
        let b0 = randt(&[4], 64);
        let report = gradcheck(
            |w| {
                let y = linear(&x0, w, &b0)?;
                Ok(y.mul(&y)?.sum())
            },
            &w0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "w: max rel {}", report.max_rel_err);
        let report = gradcheck(
            |x| {
                let y = linear(x, &w0, &b0)?;
                Ok(y.mul(&y)?.sum())
            },
            &x0,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "x: max rel {}", report.max_rel_err);
    }

    #[test]
    fn layer_constructors_initialize_within_fan_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let conv = Conv1d::new(3, 8, 5, 1, 2, &mut rng).unwrap();
        let bound = (1.0 / 15.0f64).sqrt() as Real;
        assert!(conv.weights.to_vec().iter().all(|v| v.abs() <= bound));
        assert!(conv.bias.to_vec().iter().all(|&v| v == 0.0));
        assert_eq!(conv.output_length(16).unwrap(), 16);

        let dw = Conv1d::new_depthwise(4, 3, &mut rng).unwrap();
        assert!(dw.depthwise);
        assert_eq!(dw.weights.shape(), &[4, 1, 3]);
        assert!(Conv1d::new_depthwise(4, 4, &mut rng).is_err());

        let lin = Linear::new(10, 2, &mut rng).unwrap();
        let bound = (1.0 / 10.0f64).sqrt() as Real;
        assert!(lin.weights.to_vec().iter().all(|v| v.abs() <= bound));
    }
}
