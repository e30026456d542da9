//! Forward and adjoint kernels on plain tensors. The tape wires these
//! together; they are also usable directly for inference.

use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

fn expect_rank<S: Scalar>(op: &'static str, t: &Tensor<S>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// `[m×k] · [k×n] → [m×n]`.
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == S::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &y) in row.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `a · bᵀ` for `a: [m×n]`, `b: [k×n]`.
pub(crate) fn matmul_nt<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let k = b.shape()[0];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); m * k];
    for i in 0..m {
        let arow = &ad[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &bd[j * n..(j + 1) * n];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + j] = acc;
        }
    }
    Tensor::new(vec![m, k], out).expect("matmul_nt shape")
}

/// `aᵀ · b` for `a: [m×k]`, `b: [m×n]`.
pub(crate) fn matmul_tn<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); k * n];
    for r in 0..m {
        let brow = &bd[r * n..(r + 1) * n];
        for p in 0..k {
            let x = ad[r * k + p];
            if x == S::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    Tensor::new(vec![k, n], out).expect("matmul_tn shape")
}

/// Geometry of a valid (unpadded) cross-correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

pub(crate) fn conv_dims<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    stride: usize,
) -> Result<ConvDims> {
    expect_rank("conv2d", kernels, 4)?;
    let (batch, c, h, w) = match input.shape() {
        [c, h, w] => (1, *c, *h, *w),
        [b, c, h, w] => (*b, *c, *h, *w),
        _ => {
            return Err(TensorError::Rank {
                op: "conv2d",
                expected: 3,
                shape: input.shape().to_vec(),
            })
        }
    };
    let ks = kernels.shape();
    let (f, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if kc != c || kh != kw || kh > h || kw > w || stride == 0 {
        return Err(TensorError::Shape {
            op: "conv2d",
            left: input.shape().to_vec(),
            right: ks.to_vec(),
        });
    }
    Ok(ConvDims {
        batch,
        channels: c,
        height: h,
        width: w,
        filters: f,
        kernel: kh,
        stride,
        out_h: (h - kh) / stride + 1,
        out_w: (w - kw) / stride + 1,
    })
}

/// Valid cross-correlation. Accepts `[C×H×W]` or a batch `[B×C×H×W]`;
/// the output keeps the input's rank.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, kernels: &Tensor<S>, stride: usize) -> Result<Tensor<S>> {
    let d = conv_dims(input, kernels, stride)?;
    let (x, k) = (input.data(), kernels.data());
    let ksz = d.kernel;
    let mut out = vec![S::zero(); d.batch * d.filters * d.out_h * d.out_w];
    for b in 0..d.batch {
        for f in 0..d.filters {
            let obase = (b * d.filters + f) * d.out_h * d.out_w;
            for c in 0..d.channels {
                let ibase = (b * d.channels + c) * d.height * d.width;
                let kbase = (f * d.channels + c) * ksz * ksz;
                for oy in 0..d.out_h {
                    for ox in 0..d.out_w {
                        let mut acc = S::zero();
                        for ky in 0..ksz {
                            let irow = ibase + (oy * d.stride + ky) * d.width + ox * d.stride;
                            let krow = kbase + ky * ksz;
                            for kx in 0..ksz {
                                acc += x[irow + kx] * k[krow + kx];
                            }
                        }
                        out[obase + oy * d.out_w + ox] += acc;
                    }
                }
            }
        }
    }
    let shape = if input.rank() == 3 {
        vec![d.filters, d.out_h, d.out_w]
    } else {
        vec![d.batch, d.filters, d.out_h, d.out_w]
    };
    Tensor::new(shape, out)
}

/// Adjoints of [`conv2d`] with respect to input and kernels.
pub(crate) fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernels: &Tensor<S>,
    stride: usize,
    grad_out: &Tensor<S>,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor<S>>, Option<Tensor<S>>) {
    let d = conv_dims(input, kernels, stride).expect("validated in forward");
    let (x, k, g) = (input.data(), kernels.data(), grad_out.data());
    let ksz = d.kernel;
    let mut gx = want_input.then(|| vec![S::zero(); x.len()]);
    let mut gk = want_kernel.then(|| vec![S::zero(); k.len()]);
    for b in 0..d.batch {
        for f in 0..d.filters {
            let obase = (b * d.filters + f) * d.out_h * d.out_w;
            for c in 0..d.channels {
                let ibase = (b * d.channels + c) * d.height * d.width;
                let kbase = (f * d.channels + c) * ksz * ksz;
                for oy in 0..d.out_h {
                    for ox in 0..d.out_w {
                        let go = g[obase + oy * d.out_w + ox];
                        if go == S::zero() {
                            continue;
                        }
                        for ky in 0..ksz {
                            let irow = ibase + (oy * d.stride + ky) * d.width + ox * d.stride;
                            let krow = kbase + ky * ksz;
                            for kx in 0..ksz {
                                if let Some(gx) = gx.as_mut() {
                                    gx[irow + kx] += go * k[krow + kx];
                                }
                                if let Some(gk) = gk.as_mut() {
                                    gk[krow + kx] += go * x[irow + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|v| Tensor::new(input.shape().to_vec(), v).expect("shape")),
        gk.map(|v| Tensor::new(kernels.shape().to_vec(), v).expect("shape")),
    )
}

/// 2×2 mean pooling with stride 2 over the trailing two axes (floor).
pub fn mean_pool2<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let r = input.rank();
    if r < 3 || input.shape()[r - 1] < 2 || input.shape()[r - 2] < 2 {
        return Err(TensorError::Rank {
            op: "mean_pool2",
            expected: 4,
            shape: input.shape().to_vec(),
        });
    }
    let (h, w) = (input.shape()[r - 2], input.shape()[r - 1]);
    let (oh, ow) = (h / 2, w / 2);
    let planes = input.len() / (h * w);
    let quarter = S::of(0.25);
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                out.push((x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(shape, out)
}

pub(crate) fn mean_pool2_backward<S: Scalar>(input_shape: &[usize], grad_out: &Tensor<S>) -> Tensor<S> {
    let r = input_shape.len();
    let (h, w) = (input_shape[r - 2], input_shape[r - 1]);
    let (oh, ow) = (h / 2, w / 2);
    let planes = input_shape.iter().product::<usize>() / (h * w);
    let quarter = S::of(0.25);
    let g = grad_out.data();
    let mut gx = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[(p * oh + y) * ow + xx] * quarter;
                let i = base + 2 * y * w + 2 * xx;
                gx[i] += v;
                gx[i + 1] += v;
                gx[i + w] += v;
                gx[i + w + 1] += v;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), gx).expect("shape")
}

pub fn sigmoid<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|x| S::one() / (S::one() + (-x).exp()))
}

pub fn tanh<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|x| x.tanh())
}

pub fn relu<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.map(|x| if x > S::zero() { x } else { S::zero() })
}

fn log_sum_exp<S: Scalar>(row: &[S]) -> S {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Softmax of a vector, computed with max subtraction.
pub fn softmax<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    expect_rank("softmax", t, 1)?;
    Ok(softmax_rows_raw(t, 1, t.len()))
}

fn softmax_rows_raw<S: Scalar>(t: &Tensor<S>, rows: usize, cols: usize) -> Tensor<S> {
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &t.data()[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&x| (x - max).exp()).collect();
        let total: S = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(t.shape().to_vec(), out).expect("shape")
}

pub(crate) fn softmax_rows<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    expect_rank("softmax_rows", t, 2)?;
    Ok(softmax_rows_raw(t, t.shape()[0], t.shape()[1]))
}

pub(crate) fn log_softmax_rows<S: Scalar>(t: &Tensor<S>) -> Result<Tensor<S>> {
    expect_rank("log_softmax_rows", t, 2)?;
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &t.data()[r * cols..(r + 1) * cols];
        let lse = log_sum_exp(row);
        out.extend(row.iter().map(|&x| x - lse));
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Log-sum-exp classification loss `log Σⱼ exp(qⱼ) − q_k` of a logit vector.
pub fn lse_loss<S: Scalar>(q: &Tensor<S>, k: usize) -> Result<S> {
    expect_rank("lse_loss", q, 1)?;
    if k >= q.len() {
        return Err(TensorError::Index {
            op: "lse_loss",
            index: k,
            len: q.len(),
        });
    }
    Ok(log_sum_exp(q.data()) - q.data()[k])
}

/// Per-row LSE loss of `[R×M]` logits against `labels`.
pub(crate) fn lse_rows<S: Scalar>(q: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    expect_rank("lse_rows", q, 2)?;
    let (rows, cols) = (q.shape()[0], q.shape()[1]);
    if labels.len() != rows {
        return Err(TensorError::Shape {
            op: "lse_rows",
            left: q.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let mut out = Vec::with_capacity(rows);
    for (r, &k) in labels.iter().enumerate() {
        if k >= cols {
            return Err(TensorError::Index {
                op: "lse_rows",
                index: k,
                len: cols,
            });
        }
        let row = &q.data()[r * cols..(r + 1) * cols];
        out.push(log_sum_exp(row) - row[k]);
    }
    Tensor::new(vec![rows], out)
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    same_shape(op, a, b)
}

pub(crate) fn check_rank<S: Scalar>(op: &'static str, t: &Tensor<S>, rank: usize) -> Result<()> {
    expect_rank(op, t, rank)
}
