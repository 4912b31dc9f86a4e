//! Forward and backward kernels for the fixed layer set.
//!
//! Signals are `[channels, length]` tensors processed one window at a time.
//! Convolutions are valid (unpadded) cross-correlations computed through an
//! im2col buffer and a single GEMM.

use super::scalar::{gemm, Mat};
use super::{Scalar, Tensor};
use crate::error::{ensure, Result};

/// Gradients of a 1-D convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_kernel: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// Gradients of a dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// Argmax routing recorded by a pooling forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    /// Flat index into the input for every output element.
    pub argmax: Vec<u32>,
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    x.expect_rank(2, "conv input")?;
    kernel.expect_rank(3, "conv kernel")?;
    let (cin, len) = (x.shape()[0], x.shape()[1]);
    let (cout, kin, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    ensure!(kin == cin, Shape, "kernel expects {kin} input channels, input has {cin}");
    ensure!(len >= k, Shape, "input length {len} shorter than kernel length {k}");
    Ok((cin, len, cout, k))
}

/// im2col: row `i*k + j` holds `x[i, j .. j + lout]`.
fn im2col<T: Scalar>(x: &[T], cin: usize, len: usize, k: usize) -> Vec<T> {
    let lout = len - k + 1;
    let mut col = Vec::with_capacity(cin * k * lout);
    for i in 0..cin {
        let row = &x[i * len..(i + 1) * len];
        for j in 0..k {
            col.extend_from_slice(&row[j..j + lout]);
        }
    }
    col
}

/// `y[c, t] = bias[c] + sum_{i, j} kernel[c, i, j] * x[i, t + j]`.
pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (cin, len, cout, k) = conv_dims(x, kernel)?;
    bias.expect_shape(&[cout])?;
    let lout = len - k + 1;
    let mut y = Vec::with_capacity(cout * lout);
    for &b in bias.data() {
        y.extend(std::iter::repeat_n(b, lout));
    }
    if k == 1 {
        gemm(Mat::new(kernel.data(), cout, cin), Mat::new(x.data(), cin, lout), T::one(), &mut y);
    } else {
        let col = im2col(x.data(), cin, len, k);
        gemm(Mat::new(kernel.data(), cout, cin * k), Mat::new(&col, cin * k, lout), T::one(), &mut y);
    }
    Tensor::from_vec(&[cout, lout], y)
}

/// Exact gradients of [`conv1d_forward`] given the upstream gradient.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (gk, gb, gx) = conv1d_backward_impl(x, kernel, upstream, true)?;
    Ok(ConvGrads { grad_x: gx.expect("requested"), grad_kernel: gk, grad_bias: gb })
}

pub(crate) fn conv1d_backward_impl<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Tensor<T>, Tensor<T>, Option<Tensor<T>>)> {
    let (cin, len, cout, k) = conv_dims(x, kernel)?;
    let lout = len - k + 1;
    upstream.expect_shape(&[cout, lout])?;
    let up = upstream.data();

    let grad_bias: Vec<T> = up.chunks_exact(lout).map(|r| r.iter().copied().sum()).collect();

    let col = im2col(x.data(), cin, len, k);
    let mut grad_kernel = vec![T::zero(); cout * cin * k];
    gemm(Mat::new(up, cout, lout), Mat::t(&col, cin * k, lout), T::zero(), &mut grad_kernel);
    drop(col);

    let grad_x = if want_input_grad {
        let mut grad_col = vec![T::zero(); cin * k * lout];
        gemm(Mat::t(kernel.data(), cout, cin * k), Mat::new(up, cout, lout), T::zero(), &mut grad_col);
        let mut gx = vec![T::zero(); cin * len];
        for i in 0..cin {
            let row = &mut gx[i * len..(i + 1) * len];
            for j in 0..k {
                let src = &grad_col[(i * k + j) * lout..(i * k + j + 1) * lout];
                row[j..j + lout].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
            }
        }
        Some(Tensor::from_vec(&[cin, len], gx)?)
    } else {
        None
    };

    Ok((
        Tensor::from_vec(&[cout, cin, k], grad_kernel)?,
        Tensor::from_vec(&[cout], grad_bias)?,
        grad_x,
    ))
}

/// Max over non-overlapping pairs; a trailing odd element is dropped and ties go to the first index.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    x.expect_rank(2, "pool input")?;
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    ensure!(len >= 2, Shape, "max-pool needs length >= 2, got {len}");
    let lout = len / 2;
    let mut y = Vec::with_capacity(ch * lout);
    let mut argmax = Vec::with_capacity(ch * lout);
    for c in 0..ch {
        let row = &x.data()[c * len..(c + 1) * len];
        for t in 0..lout {
            let (a, b) = (row[2 * t], row[2 * t + 1]);
            let pick = if b > a { 2 * t + 1 } else { 2 * t };
            y.push(row[pick]);
            argmax.push((c * len + pick) as u32);
        }
    }
    Ok((
        Tensor::from_vec(&[ch, lout], y)?,
        PoolIndices { input_shape: x.shape().to_vec(), argmax },
    ))
}

/// Routes each upstream value to its recorded argmax position.
pub fn maxpool2_backward<T: Scalar>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    pool_backward(indices, upstream)
}

/// Bin boundaries `[floor(b*L/T), floor((b+1)*L/T))` of adaptive pooling.
pub fn adaptive_bins(len: usize, target_len: usize) -> Vec<(usize, usize)> {
    (0..target_len)
        .map(|b| (b * len / target_len, (b + 1) * len / target_len))
        .collect()
}

/// Max over `target_len` contiguous bins per channel.
pub fn adaptive_maxpool<T: Scalar>(x: &Tensor<T>, target_len: usize) -> Result<(Tensor<T>, PoolIndices)> {
    x.expect_rank(2, "pool input")?;
    let (ch, len) = (x.shape()[0], x.shape()[1]);
    ensure!(target_len > 0, Shape, "adaptive pool target length must be positive");
    ensure!(len >= target_len, Shape, "cannot adaptively pool length {len} to {target_len}");
    let bins = adaptive_bins(len, target_len);
    let mut y = Vec::with_capacity(ch * target_len);
    let mut argmax = Vec::with_capacity(ch * target_len);
    for c in 0..ch {
        let row = &x.data()[c * len..(c + 1) * len];
        for &(lo, hi) in &bins {
            let mut best = lo;
            for i in lo + 1..hi {
                if row[i] > row[best] {
                    best = i;
                }
            }
            y.push(row[best]);
            argmax.push((c * len + best) as u32);
        }
    }
    Ok((
        Tensor::from_vec(&[ch, target_len], y)?,
        PoolIndices { input_shape: x.shape().to_vec(), argmax },
    ))
}

pub fn adaptive_maxpool_backward<T: Scalar>(
    indices: &PoolIndices,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    pool_backward(indices, upstream)
}

fn pool_backward<T: Scalar>(indices: &PoolIndices, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    ensure!(
        upstream.len() == indices.argmax.len(),
        Shape,
        "upstream has {} elements, pool produced {}",
        upstream.len(),
        indices.argmax.len()
    );
    let mut g = Tensor::zeros(&indices.input_shape);
    let gd = g.data_mut();
    for (&i, &u) in indices.argmax.iter().zip(upstream.data()) {
        gd[i as usize] += u;
    }
    Ok(g)
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    x.expect_rank(1, "dense input")?;
    weight.expect_rank(2, "dense weight")?;
    let (out, inp) = (weight.shape()[0], weight.shape()[1]);
    ensure!(x.len() == inp, Shape, "dense layer expects {inp} inputs, got {}", x.len());
    Ok((out, inp))
}

/// `y = W x + b`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, inp) = dense_dims(x, weight)?;
    bias.expect_shape(&[out])?;
    let mut y = bias.data().to_vec();
    gemm(Mat::new(weight.data(), out, inp), Mat::new(x.data(), inp, 1), T::one(), &mut y);
    Tensor::from_vec(&[out], y)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (out, inp) = dense_dims(x, weight)?;
    upstream.expect_shape(&[out])?;
    let mut gw = vec![T::zero(); out * inp];
    for (row, &u) in gw.chunks_exact_mut(inp).zip(upstream.data()) {
        row.iter_mut().zip(x.data()).for_each(|(g, &xv)| *g = u * xv);
    }
    let mut gx = vec![T::zero(); inp];
    gemm(Mat::t(weight.data(), out, inp), Mat::new(upstream.data(), out, 1), T::zero(), &mut gx);
    Ok(DenseGrads {
        grad_x: Tensor::from_vec(&[inp], gx)?,
        grad_weight: Tensor::from_vec(&[out, inp], gw)?,
        grad_bias: upstream.clone(),
    })
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU; `activation` may be either the ReLU input or its output
/// since both are positive exactly where the derivative is 1.
pub fn relu_backward<T: Scalar>(activation: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.expect_shape(activation.shape())?;
    let data = activation
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&a, &u)| if a > T::zero() { u } else { T::zero() })
        .collect();
    Tensor::from_vec(activation.shape(), data)
}

/// Logistic sigmoid, clamped so every finite input maps strictly inside (0, 1).
pub fn sigmoid<T: Scalar>(v: T) -> T {
    let y = T::one() / (T::one() + (-v).exp());
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    y.max(T::min_positive_value()).min(hi)
}

pub fn sigmoid_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Gradient of the sigmoid from its output: `upstream * y * (1 - y)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.expect_shape(output.shape())?;
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &u)| u * y * (T::one() - y))
        .collect();
    Tensor::from_vec(output.shape(), data)
}
