//! Dense channel-major tensors and the handful of operators VGG-style
//! feature extraction needs.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rank-3 `f32` array laid out channel-major, then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::Config(format!(
                "tensor {channels}x{height}x{width} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The `height * width` plane of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Convolution kernels in `[out, in, kh, kw]` order plus one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvWeights {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Config(format!(
                "conv dimensions must be positive, got {out_channels}x{in_channels}x{kernel_h}x{kernel_w}"
            )));
        }
        let expected = out_channels * in_channels * kernel_h * kernel_w;
        if weights.len() != expected {
            return Err(Error::Config(format!(
                "conv weights {out_channels}x{in_channels}x{kernel_h}x{kernel_w} need {expected} values, got {}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Config(format!(
                "conv bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        Ok(ConvWeights {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernel_h, self.kernel_w)
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Number of weights plus biases.
    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Output spatial size of a convolution, or a configuration error when the
/// kernel does not fit.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Config(format!(
            "kernel {kernel} does not fit input {input} with padding {padding}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

// Upper bound on patch-matrix elements materialized per tile (f64).
const PATCH_BUDGET: usize = 1 << 19;

/// 2-D cross-correlation with zero padding, as used by every VGG conv layer.
///
/// The input is unrolled into a patch matrix one column tile at a time and
/// multiplied against the kernel matrix in `f64`; results are rounded to
/// `f32` after the bias is added. Tiles run in parallel but each output
/// value is produced by a single GEMM, so results do not depend on the
/// thread count.
pub fn conv2d(input: &Tensor, w: &ConvWeights, stride: usize, padding: usize) -> Result<Tensor> {
    if input.channels != w.in_channels {
        return Err(Error::Config(format!(
            "conv expects {} input channels, tensor has {}",
            w.in_channels, input.channels
        )));
    }
    let out_h = conv_output_size(input.height, w.kernel_h, stride, padding)?;
    let out_w = conv_output_size(input.width, w.kernel_w, stride, padding)?;

    let k = w.in_channels * w.kernel_h * w.kernel_w;
    let m = w.out_channels;
    let plane = out_h * out_w;
    let kernel: Vec<f64> = w.weights.iter().map(|&v| f64::from(v)).collect();

    let tile = (PATCH_BUDGET / k).clamp(1, plane);
    let starts: Vec<usize> = (0..plane).step_by(tile).collect();

    let blocks: Vec<(usize, usize, Vec<f32>)> = starts
        .par_iter()
        .map(|&p0| {
            let n = tile.min(plane - p0);
            let patches = unroll_patches(input, w, stride, padding, out_w, p0, n);
            let mut acc = vec![0.0f64; m * n];
            // SAFETY: `kernel` is m x k, `patches` is k x n and `acc` is m x n,
            // all row-major and sized exactly as the strides describe.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    kernel.as_ptr(),
                    k as isize,
                    1,
                    patches.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    acc.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            let block = acc
                .chunks_exact(n)
                .zip(&w.bias)
                .flat_map(|(row, &b)| row.iter().map(move |&s| (s + f64::from(b)) as f32))
                .collect();
            (p0, n, block)
        })
        .collect();

    let mut out = vec![0.0f32; m * plane];
    for (p0, n, block) in blocks {
        for (o, row) in block.chunks_exact(n).enumerate() {
            out[o * plane + p0..o * plane + p0 + n].copy_from_slice(row);
        }
    }
    Tensor::new(m, out_h, out_w, out)
}

/// Patch matrix rows are `(in_channel, dy, dx)` to match the kernel layout;
/// columns are output pixels `p0..p0 + n`.
fn unroll_patches(
    input: &Tensor,
    w: &ConvWeights,
    stride: usize,
    padding: usize,
    out_w: usize,
    p0: usize,
    n: usize,
) -> Vec<f64> {
    let (kh, kw) = (w.kernel_h, w.kernel_w);
    let rows = w.in_channels * kh * kw;
    let mut patches = vec![0.0f64; rows * n];
    for c in 0..w.in_channels {
        let src = input.channel(c);
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (c * kh + dy) * kw + dx;
                let dst = &mut patches[row * n..(row + 1) * n];
                for (t, slot) in dst.iter_mut().enumerate() {
                    let p = p0 + t;
                    let iy = (p / out_w * stride + dy) as isize - padding as isize;
                    let ix = (p % out_w * stride + dx) as isize - padding as isize;
                    if iy >= 0
                        && ix >= 0
                        && (iy as usize) < input.height
                        && (ix as usize) < input.width
                    {
                        *slot = f64::from(src[iy as usize * input.width + ix as usize]);
                    }
                }
            }
        }
    }
    patches
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        *v = v.max(0.0);
    }
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "maxpool2 needs even spatial dimensions, got {}x{}",
            input.height, input.width
        )));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = Vec::with_capacity(input.channels * oh * ow);
    for c in 0..input.channels {
        let src = input.channel(c);
        for y in 0..oh {
            let top = &src[2 * y * input.width..(2 * y + 1) * input.width];
            let bottom = &src[(2 * y + 1) * input.width..(2 * y + 2) * input.width];
            for x in 0..ow {
                out.push(
                    top[2 * x]
                        .max(top[2 * x + 1])
                        .max(bottom[2 * x])
                        .max(bottom[2 * x + 1]),
                );
            }
        }
    }
    Tensor::new(input.channels, oh, ow, out)
}

/// 1-based nearest rank `ceil(q * n)`.
///
/// `q * n` is nudged down by a relative epsilon so that decimal fractions
/// such as 0.9 whose binary form lies a hair above the decimal value do not
/// round up a whole rank.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    let exact = q * n as f64;
    let rank = (exact - exact.abs() * 1e-12).ceil() as usize;
    rank.clamp(1, n)
}

/// Nearest-rank quantile: the element at 1-based position `ceil(q * N)` of
/// the ascending sort.
pub fn quantile_nearest_rank(values: &[f32], q: f64) -> Result<f32> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of an empty sequence".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Argument(format!("quantile level {q} not in (0, 1]")));
    }
    let mut scratch = values.to_vec();
    Ok(select_rank(&mut scratch, nearest_rank(q, values.len())))
}

/// Partially reorders `scratch` and returns its `rank`-th smallest element.
pub(crate) fn select_rank(scratch: &mut [f32], rank: usize) -> f32 {
    let (_, v, _) = scratch.select_nth_unstable_by(rank - 1, f32::total_cmp);
    *v
}
