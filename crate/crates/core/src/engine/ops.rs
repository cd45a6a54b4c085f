//! Feed-forward layer primitives: forward passes plus the matching
//! gradient routines used by the model tape.
//!
//! Backward routines *accumulate* into the parameter-gradient slices they are
//! handed and return a freshly allocated input gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's *output*.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

fn check_finite(t: &Tensor, what: &'static str) -> Result<()> {
    if t.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Valid (unpadded) stride-1 1-D convolution over a `[T x C]` sequence with
/// `[K x C x W]` kernels, giving `[(T - W + 1) x K]`.
pub fn conv1d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    check_finite(input, "conv1d input")?;
    let (t_len, channels) = input.dims2()?;
    let (filters, k_channels, width) = match kernels.shape() {
        &[k, c, w] => (k, c, w),
        s => return Err(Error::dim(format!("conv kernels must be [K x C x W], got {s:?}"))),
    };
    if k_channels != channels {
        return Err(Error::dim(format!(
            "conv kernels expect {k_channels} channels, input has {channels}"
        )));
    }
    if bias.shape() != [filters] {
        return Err(Error::dim(format!("conv bias must be [{filters}], got {:?}", bias.shape())));
    }
    if width == 0 || t_len < width {
        return Err(Error::Window { len: t_len, width });
    }
    Ok(conv1d_raw(input, kernels, bias, activation))
}

pub(crate) fn conv1d_raw(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Tensor {
    let channels = input.shape()[1];
    let (filters, width) = (kernels.shape()[0], kernels.shape()[2]);
    let out_len = input.shape()[0] + 1 - width;
    let x = input.data();
    let ker = kernels.data();
    let b = bias.data();
    let mut out = vec![0.0; out_len * filters];
    for t in 0..out_len {
        for k in 0..filters {
            let kbase = k * channels * width;
            let mut acc = b[k];
            for w in 0..width {
                let row = &x[(t + w) * channels..(t + w + 1) * channels];
                for (c, &xv) in row.iter().enumerate() {
                    acc += xv * ker[kbase + c * width + w];
                }
            }
            out[t * filters + k] = activation.apply(acc);
        }
    }
    Tensor::from_parts(vec![out_len, filters], out)
}

/// Gradient of [`conv1d_forward`]; `output` is the post-activation result.
pub fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    output: &Tensor,
    activation: Activation,
    d_output: &Tensor,
    d_kernels: &mut [f64],
    d_bias: &mut [f64],
) -> Tensor {
    let (t_in, channels) = (input.shape()[0], input.shape()[1]);
    let (filters, width) = (kernels.shape()[0], kernels.shape()[2]);
    let out_len = output.shape()[0];
    let x = input.data();
    let ker = kernels.data();
    let mut dx = vec![0.0; t_in * channels];
    for t in 0..out_len {
        for k in 0..filters {
            let idx = t * filters + k;
            let dpre = d_output.data()[idx] * activation.derivative_from_output(output.data()[idx]);
            if dpre == 0.0 {
                continue;
            }
            d_bias[k] += dpre;
            let kbase = k * channels * width;
            for w in 0..width {
                let xrow = (t + w) * channels;
                for c in 0..channels {
                    let ki = kbase + c * width + w;
                    d_kernels[ki] += dpre * x[xrow + c];
                    dx[xrow + c] += dpre * ker[ki];
                }
            }
        }
    }
    Tensor::from_parts(vec![t_in, channels], dx)
}

/// Max over non-overlapping windows of `pool` rows; a trailing remainder
/// shorter than `pool` is dropped.
pub fn maxpool1d_forward(input: &Tensor, pool: usize) -> Result<Tensor> {
    if pool == 0 {
        return Err(Error::param("pool size must be at least 1"));
    }
    input.dims2()?;
    check_finite(input, "maxpool input")?;
    Ok(maxpool1d_indexed(input, pool).0)
}

/// Pooled output plus, per output cell, the input row that supplied the max.
pub fn maxpool1d_indexed(input: &Tensor, pool: usize) -> (Tensor, Vec<usize>) {
    let (t_len, channels) = (input.shape()[0], input.shape()[1]);
    let out_len = t_len / pool;
    let x = input.data();
    let mut out = vec![0.0; out_len * channels];
    let mut arg = vec![0usize; out_len * channels];
    for t in 0..out_len {
        for c in 0..channels {
            let mut best_row = t * pool;
            let mut best = x[best_row * channels + c];
            for r in t * pool + 1..(t + 1) * pool {
                let v = x[r * channels + c];
                if v > best {
                    best = v;
                    best_row = r;
                }
            }
            out[t * channels + c] = best;
            arg[t * channels + c] = best_row;
        }
    }
    (Tensor::from_parts(vec![out_len, channels], out), arg)
}

/// Routes each output gradient to the row recorded in `argmax`.
pub fn maxpool1d_backward(in_shape: &[usize], argmax: &[usize], d_output: &Tensor) -> Tensor {
    let channels = in_shape[1];
    let mut dx = vec![0.0; in_shape[0] * channels];
    for (i, &row) in argmax.iter().enumerate() {
        let c = i % channels;
        dx[row * channels + c] += d_output.data()[i];
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

/// `act(W x + b)` with `W` shaped `[n_out x n_in]`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor, activation: Activation) -> Result<Tensor> {
    check_finite(x, "dense input")?;
    let n_in = x.dims1()?;
    let (n_out, w_in) = w.dims2()?;
    if w_in != n_in {
        return Err(Error::dim(format!("dense weight expects {w_in} inputs, got {n_in}")));
    }
    if b.shape() != [n_out] {
        return Err(Error::dim(format!("dense bias must be [{n_out}], got {:?}", b.shape())));
    }
    Ok(Tensor::from_parts(vec![n_out], dense_raw(x.data(), w, b, activation)))
}

pub(crate) fn dense_raw(x: &[f64], w: &Tensor, b: &Tensor, activation: Activation) -> Vec<f64> {
    let n_in = x.len();
    w.data()
        .chunks_exact(n_in)
        .zip(b.data())
        .map(|(row, &bias)| activation.apply(bias + dot(row, x)))
        .collect()
}

/// Gradient of [`dense_forward`]: accumulates `dW`, `db` and returns `dx`.
/// Shapes must be those of the forward call.
pub fn dense_backward(
    x: &[f64],
    w: &Tensor,
    output: &[f64],
    activation: Activation,
    d_output: &[f64],
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Vec<f64> {
    let n_in = x.len();
    let mut dx = vec![0.0; n_in];
    for (o, (&dy, &y)) in d_output.iter().zip(output).enumerate() {
        let dpre = dy * activation.derivative_from_output(y);
        if dpre == 0.0 {
            continue;
        }
        d_b[o] += dpre;
        let row = &w.data()[o * n_in..(o + 1) * n_in];
        let drow = &mut d_w[o * n_in..(o + 1) * n_in];
        for j in 0..n_in {
            drow[j] += dpre * x[j];
            dx[j] += dpre * row[j];
        }
    }
    dx
}

/// Same dense map applied independently to every row of a `[T x n_in]` sequence.
pub fn time_dense_forward(seq: &Tensor, w: &Tensor, b: &Tensor, activation: Activation) -> Result<Tensor> {
    check_finite(seq, "time-distributed input")?;
    let (t_len, n_in) = seq.dims2()?;
    let (n_out, w_in) = w.dims2()?;
    if w_in != n_in {
        return Err(Error::dim(format!("adapter expects {w_in} columns, input has {n_in}")));
    }
    if b.shape() != [n_out] {
        return Err(Error::dim(format!("adapter bias must be [{n_out}]")));
    }
    let mut out = Vec::with_capacity(t_len * n_out);
    for t in 0..t_len {
        out.extend(dense_raw(seq.row(t), w, b, activation));
    }
    Ok(Tensor::from_parts(vec![t_len, n_out], out))
}

/// Gradient of [`time_dense_forward`], row by row.
pub fn time_dense_backward(
    seq: &Tensor,
    w: &Tensor,
    output: &Tensor,
    activation: Activation,
    d_output: &Tensor,
    d_w: &mut [f64],
    d_b: &mut [f64],
) -> Tensor {
    let (t_len, n_in) = (seq.shape()[0], seq.shape()[1]);
    let mut dx = Vec::with_capacity(t_len * n_in);
    for t in 0..t_len {
        dx.extend(dense_backward(seq.row(t), w, output.row(t), activation, d_output.row(t), d_w, d_b));
    }
    Tensor::from_parts(vec![t_len, n_in], dx)
}

/// Inverted-dropout multiplier: `0` with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; n];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

pub fn dropout_forward<R: Rng + ?Sized>(x: &Tensor, rate: f64, mode: Mode, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    check_finite(x, "dropout input")?;
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train => {
            let mask = dropout_mask(x.len(), rate, rng);
            let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        }
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dim(format!("{} predictions vs {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptySequence);
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mse operands"));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
