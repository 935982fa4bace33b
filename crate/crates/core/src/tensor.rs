//! Dense tensors and the numerical primitives built on them.
//!
//! Conventions used throughout the crate: 64-bit floats, row-major layout,
//! channel-first images `(C, H, W)`. "Convolution" is cross-correlation
//! (no kernel flip), the deep-learning convention.

use crate::error::{Error, Result};

/// Dense N-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dimension {
                op: "Tensor::new",
                details: format!("zero dimension in shape {shape:?}"),
            });
        }
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "Tensor::new",
                details: format!(
                    "shape {shape:?} holds {expected} elements, got {}",
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Flat index for `(c, y, x)` into a rank-3 tensor.
    #[inline]
    pub fn idx3(&self, c: usize, y: usize, x: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (c * self.shape[1] + y) * self.shape[2] + x
    }
}

fn require_rank(t: &Tensor, rank: usize, op: &'static str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::Dimension {
            op,
            details: format!("expected rank {rank}, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// 2-D cross-correlation of a `(C_in, H, W)` input with `(C_out, C_in, kH, kW)`
/// kernels plus a per-output-channel bias.
///
/// Output spatial size is `floor((H + 2*padding - kH) / stride) + 1` (same
/// for width). Padding is zero-fill.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f64],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    require_rank(input, 3, "conv2d")?;
    require_rank(kernels, 4, "conv2d")?;
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (c_out, kc, kh, kw) = (
        kernels.shape[0],
        kernels.shape[1],
        kernels.shape[2],
        kernels.shape[3],
    );
    if kc != c_in {
        return Err(Error::Dimension {
            op: "conv2d",
            details: format!("input has {c_in} channels but kernels expect {kc}"),
        });
    }
    if bias.len() != c_out {
        return Err(Error::Dimension {
            op: "conv2d",
            details: format!("bias length {} != {c_out} output channels", bias.len()),
        });
    }
    if stride == 0 {
        return Err(Error::Dimension {
            op: "conv2d",
            details: "stride must be >= 1".into(),
        });
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::Dimension {
            op: "conv2d",
            details: format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ),
        });
    }

    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = Tensor::zeros(vec![c_out, oh, ow]);

    for (o, &bias_o) in bias.iter().enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias_o;
                for i in 0..c_in {
                    for ky in 0..kh {
                        // input row, shifted back by the padding
                        let iy = oy * stride + ky;
                        if iy < padding || iy >= h + padding {
                            continue;
                        }
                        let iy = iy - padding;
                        for kx in 0..kw {
                            let ix = ox * stride + kx;
                            if ix < padding || ix >= w + padding {
                                continue;
                            }
                            let ix = ix - padding;
                            acc += input.data[input.idx3(i, iy, ix)]
                                * kernels.data
                                    [((o * c_in + i) * kh + ky) * kw + kx];
                        }
                    }
                }
                let idx = out.idx3(o, oy, ox);
                out.data[idx] = acc;
            }
        }
    }
    Ok(out)
}

/// Max pooling over square windows. Returns the pooled tensor and, for each
/// output element, the flat index into `input.data()` of its maximum
/// (first occurrence wins on ties) for use by backward passes.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    require_rank(input, 3, "maxpool2d")?;
    let (c, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    if window == 0 || stride == 0 {
        return Err(Error::Dimension {
            op: "maxpool2d",
            details: "window and stride must be >= 1".into(),
        });
    }
    if window > h || window > w {
        return Err(Error::Dimension {
            op: "maxpool2d",
            details: format!("window {window} exceeds spatial extent {h}x{w}"),
        });
    }
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let mut argmax = vec![0usize; c * oh * ow];

    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for wy in 0..window {
                    for wx in 0..window {
                        let idx = input.idx3(ch, oy * stride + wy, ox * stride + wx);
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let oidx = out.idx3(ch, oy, ox);
                out.data[oidx] = best;
                argmax[oidx] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Affine map `out[m] = sum_n weights[m,n] * input[n] + bias[m]`.
pub fn linear(input: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    require_rank(input, 1, "linear")?;
    require_rank(weights, 2, "linear")?;
    let n = input.shape[0];
    let (m, wn) = (weights.shape[0], weights.shape[1]);
    if wn != n {
        return Err(Error::Dimension {
            op: "linear",
            details: format!("input length {n} != weight columns {wn}"),
        });
    }
    if bias.len() != m {
        return Err(Error::Dimension {
            op: "linear",
            details: format!("bias length {} != {m} rows", bias.len()),
        });
    }
    let mut out = vec![0.0; m];
    for (row, slot) in out.iter_mut().enumerate() {
        let mut acc = bias[row];
        let w = &weights.data[row * n..(row + 1) * n];
        for (wv, xv) in w.iter().zip(&input.data) {
            acc += wv * xv;
        }
        *slot = acc;
    }
    Tensor::new(vec![m], out)
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&x| x.max(0.0)).collect(),
    }
}

/// Numerically stable softmax (max subtraction). Panics on an empty slice.
pub fn softmax(input: &[f64]) -> Vec<f64> {
    assert!(!input.is_empty(), "softmax of empty vector");
    let max = input.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = input.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity `dot(a,b) / (|a| |b|)`, clamped into `[-1, 1]`.
///
/// A zero-norm argument is an error rather than a silent zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine_similarity",
            details: format!("lengths {} vs {}", a.len(), b.len()),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput {
            op: "cosine_similarity",
            details: "zero-norm vector".into(),
        });
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}
