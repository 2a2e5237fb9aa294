//! Forward implementations. Each op validates shapes, computes its output
//! and records lineage when any input tracks gradients.

use crate::error::{CoadError, Result};

use super::gemm::{col2im_add, conv_out_extent, gemm_acc, im2col, ConvGeom};
use super::{canonical_sum, Scalar, Tensor};

/// Lineage node: the operation that produced a tensor, holding handles to
/// its inputs plus whatever the backward pass needs.
pub enum Op<T: Scalar> {
    Add(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Affine {
        x: Tensor<T>,
        scale: T,
    },
    Relu(Tensor<T>),
    Sigmoid(Tensor<T>),
    Ln(Tensor<T>),
    Clamp {
        x: Tensor<T>,
        lo: T,
        hi: T,
    },
    Matmul(Tensor<T>, Tensor<T>),
    Transpose2d(Tensor<T>),
    Reshape(Tensor<T>),
    Concat0(Vec<Tensor<T>>),
    Slice0 {
        x: Tensor<T>,
        start: usize,
    },
    SoftmaxAlong {
        x: Tensor<T>,
        axis: usize,
    },
    SoftmaxWeightedSum0(Tensor<T>),
    SumAll(Tensor<T>),
    ChannelMean(Tensor<T>),
    ChannelMax {
        x: Tensor<T>,
        argmax: Vec<usize>,
    },
    SpatialGlobalMean(Tensor<T>),
    SpatialMaxPool {
        x: Tensor<T>,
        argmax: Vec<usize>,
    },
    BroadcastMulChannelVec {
        x: Tensor<T>,
        v: Tensor<T>,
    },
    BroadcastMulPlane {
        x: Tensor<T>,
        p: Tensor<T>,
    },
    Conv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
        stride: usize,
        padding: usize,
        dilation: usize,
    },
    ConvTranspose2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Tensor<T>,
        stride: usize,
        padding: usize,
    },
    BilinearResize(Tensor<T>),
}

impl<T: Scalar> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Add(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![a, b],
            Op::Affine { x, .. }
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Ln(x)
            | Op::Clamp { x, .. }
            | Op::Transpose2d(x)
            | Op::Reshape(x)
            | Op::Slice0 { x, .. }
            | Op::SoftmaxAlong { x, .. }
            | Op::SoftmaxWeightedSum0(x)
            | Op::SumAll(x)
            | Op::ChannelMean(x)
            | Op::ChannelMax { x, .. }
            | Op::SpatialGlobalMean(x)
            | Op::SpatialMaxPool { x, .. }
            | Op::BilinearResize(x) => vec![x],
            Op::Concat0(parts) => parts.iter().collect(),
            Op::BroadcastMulChannelVec { x, v } => vec![x, v],
            Op::BroadcastMulPlane { x, p } => vec![x, p],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::ConvTranspose2d { x, w, b, .. } => vec![x, w, b],
        }
    }

    pub(crate) fn any_input_needs_grad(&self) -> bool {
        self.inputs().iter().any(|t| t.needs_grad())
    }
}

/// (outer, axis extent, inner) strides decomposition for axis-wise ops.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "add")?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_same_shape(other, "mul")?;
        let data = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&self, scale: T, shift: T) -> Tensor<T> {
        let data = self.data().iter().map(|&x| scale * x + shift).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Affine {
                x: self.clone(),
                scale,
            },
        )
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        self.affine(c, T::zero())
    }

    /// `1 - x`.
    pub fn one_minus(&self) -> Tensor<T> {
        self.affine(-T::one(), T::one())
    }

    pub fn relu(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let one = T::one();
        let data = self.data().iter().map(|&x| one / (one + (-x).exp())).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Sigmoid(self.clone()))
    }

    pub fn ln(&self) -> Tensor<T> {
        let data = self.data().iter().map(|&x| x.ln()).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Ln(self.clone()))
    }

    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&x| if x < lo { lo } else if x > hi { hi } else { x })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Clamp {
                x: self.clone(),
                lo,
                hi,
            },
        )
    }

    /// Standard matrix product `[m x k] * [k x n] -> [m x n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, ka) = self.dims2("matmul")?;
        let (kb, n) = other.dims2("matmul")?;
        if ka != kb {
            return Err(CoadError::ShapeMismatch {
                op: "matmul",
                detail: format!("inner extents differ: {ka} vs {kb}"),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(m, ka, n, &self.data(), &other.data(), &mut out);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            Op::Matmul(self.clone(), other.clone()),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor<T>> {
        let (m, n) = self.dims2("transpose2d")?;
        let src = self.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        drop(src);
        Ok(Tensor::from_op(vec![n, m], out, Op::Transpose2d(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(CoadError::ShapeMismatch {
                op: "reshape",
                detail: format!("cannot view {:?} as {:?}", self.shape(), shape),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Concatenation along the first axis; operand order is preserved.
    /// For `C x H x W` feature maps this is channel concatenation.
    pub fn concat0(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(CoadError::ShapeMismatch {
                op: "concat0",
                detail: "no operands".into(),
            });
        }
        let tail = &parts[0].shape()[1..];
        let mut first_extent = 0usize;
        for p in parts {
            if p.rank() != parts[0].rank() || &p.shape()[1..] != tail {
                return Err(CoadError::ShapeMismatch {
                    op: "concat0",
                    detail: format!("{:?} vs {:?}", p.shape(), parts[0].shape()),
                });
            }
            first_extent += p.shape()[0];
        }
        let mut shape = vec![first_extent];
        shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(&p.data());
        }
        Ok(Tensor::from_op(shape, data, Op::Concat0(parts.to_vec())))
    }

    /// Stacks equally-shaped tensors along a new leading axis.
    pub fn stack0(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        let reshaped: Vec<Tensor<T>> = parts
            .iter()
            .map(|p| {
                let mut s = vec![1usize];
                s.extend_from_slice(p.shape());
                p.reshape(&s)
            })
            .collect::<Result<_>>()?;
        Tensor::concat0(&reshaped)
    }

    /// Contiguous slice `[start, start+len)` along the first axis.
    pub fn slice0(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        let first = *self.shape().first().ok_or(CoadError::ShapeMismatch {
            op: "slice0",
            detail: "rank-0 tensor".into(),
        })?;
        if len == 0 || start + len > first {
            return Err(CoadError::ShapeMismatch {
                op: "slice0",
                detail: format!("range {start}..{} out of extent {first}", start + len),
            });
        }
        let inner: usize = self.shape()[1..].iter().product();
        let data = self.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = vec![len];
        shape.extend_from_slice(&self.shape()[1..]);
        Ok(Tensor::from_op(
            shape,
            data,
            Op::Slice0 {
                x: self.clone(),
                start,
            },
        ))
    }

    /// Softmax along `axis`; subtracts the per-slice maximum before
    /// exponentiation. Output is strictly positive and sums to 1 per slice.
    pub fn softmax_along(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.rank() {
            return Err(CoadError::AxisOutOfRange {
                axis,
                rank: self.rank(),
            });
        }
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let mut mx = src[idx(0)];
                for l in 1..len {
                    mx = mx.max(src[idx(l)]);
                }
                let mut denom = T::zero();
                for l in 0..len {
                    let e = (src[idx(l)] - mx).exp();
                    out[idx(l)] = e;
                    denom += e;
                }
                for l in 0..len {
                    out[idx(l)] /= denom;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            Op::SoftmaxAlong {
                x: self.clone(),
                axis,
            },
        ))
    }

    /// Order-insensitive set pooling over the leading axis: per trailing
    /// element, softmax weights over axis 0 times the values, summed.
    /// All reductions run in a canonical value order, so the result is
    /// bit-exactly invariant under permutations of axis 0.
    pub fn softmax_weighted_sum0(&self) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(CoadError::ShapeMismatch {
                op: "softmax_weighted_sum0",
                detail: format!("need rank >= 2, got {:?}", self.shape()),
            });
        }
        let n = self.shape()[0];
        let m: usize = self.shape()[1..].iter().product();
        let src = self.data();
        let mut out = vec![T::zero(); m];
        let mut exps = vec![T::zero(); n];
        let mut buf = vec![T::zero(); n];
        for j in 0..m {
            let mut mx = src[j];
            for i in 1..n {
                mx = mx.max(src[i * m + j]);
            }
            for i in 0..n {
                exps[i] = (src[i * m + j] - mx).exp();
            }
            buf.copy_from_slice(&exps);
            let denom = canonical_sum(&mut buf);
            for i in 0..n {
                buf[i] = exps[i] / denom * src[i * m + j];
            }
            out[j] = canonical_sum(&mut buf);
        }
        drop(src);
        Ok(Tensor::from_op(
            self.shape()[1..].to_vec(),
            out,
            Op::SoftmaxWeightedSum0(self.clone()),
        ))
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data().iter() {
            acc += v;
        }
        Tensor::from_op(vec![1], vec![acc], Op::SumAll(self.clone()))
    }

    /// Mean of every element, as a `[1]` tensor.
    pub fn mean_all(&self) -> Tensor<T> {
        let n = T::from_count(self.numel());
        self.sum_all().scale(T::one() / n)
    }

    /// Channel-wise average pooling: `C x H x W -> 1 x H x W`.
    pub fn channel_mean(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("channel_mean")?;
        let src = self.data();
        let inv = T::one() / T::from_count(c);
        let mut out = vec![T::zero(); h * w];
        for ch in 0..c {
            for (o, &v) in out.iter_mut().zip(&src[ch * h * w..(ch + 1) * h * w]) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        drop(src);
        Ok(Tensor::from_op(vec![1, h, w], out, Op::ChannelMean(self.clone())))
    }

    /// Channel-wise max pooling: `C x H x W -> 1 x H x W`.
    /// Gradient routes to the argmax; ties break to the lowest flat index.
    pub fn channel_max(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("channel_max")?;
        let src = self.data();
        let mut out = vec![T::zero(); h * w];
        let mut argmax = vec![0usize; h * w];
        for p in 0..h * w {
            let mut best = src[p];
            let mut best_i = p;
            for ch in 1..c {
                let v = src[ch * h * w + p];
                if v > best {
                    best = v;
                    best_i = ch * h * w + p;
                }
            }
            out[p] = best;
            argmax[p] = best_i;
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![1, h, w],
            out,
            Op::ChannelMax {
                x: self.clone(),
                argmax,
            },
        ))
    }

    /// Global average pooling: `C x H x W -> C`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("global_avg_pool")?;
        let src = self.data();
        let inv = T::one() / T::from_count(h * w);
        let out = (0..c)
            .map(|ch| {
                let mut acc = T::zero();
                for &v in &src[ch * h * w..(ch + 1) * h * w] {
                    acc += v;
                }
                acc * inv
            })
            .collect();
        drop(src);
        Ok(Tensor::from_op(
            vec![c],
            out,
            Op::SpatialGlobalMean(self.clone()),
        ))
    }

    /// Spatial max pooling with square window; floor output extents.
    /// Ties route the gradient to the lowest flat index.
    pub fn max_pool2d(&self, window: usize, stride: usize) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("max_pool2d")?;
        if window == 0 || stride == 0 || window > h || window > w {
            return Err(CoadError::Config(format!(
                "invalid max-pool window {window} / stride {stride} for {h}x{w} input"
            )));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let src = self.data();
        let mut out = vec![T::zero(); c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for dh in 0..window {
                        for dw in 0..window {
                            let flat = ch * h * w + (i * stride + dh) * w + (j * stride + dw);
                            if src[flat] > best {
                                best = src[flat];
                                best_i = flat;
                            }
                        }
                    }
                    let o = ch * oh * ow + i * ow + j;
                    out[o] = best;
                    argmax[o] = best_i;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            out,
            Op::SpatialMaxPool {
                x: self.clone(),
                argmax,
            },
        ))
    }

    /// Per-channel scaling of a `C x H x W` map by a length-`C` vector.
    pub fn broadcast_mul_channel_vec(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("broadcast_mul_channel_vec")?;
        if v.shape() != [c] {
            return Err(CoadError::ShapeMismatch {
                op: "broadcast_mul_channel_vec",
                detail: format!("vector {:?} vs {c} channels", v.shape()),
            });
        }
        let src = self.data();
        let vv = v.data();
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let s = vv[ch];
            for (o, &x) in out[ch * h * w..(ch + 1) * h * w]
                .iter_mut()
                .zip(&src[ch * h * w..(ch + 1) * h * w])
            {
                *o = x * s;
            }
        }
        drop(src);
        drop(vv);
        Ok(Tensor::from_op(
            vec![c, h, w],
            out,
            Op::BroadcastMulChannelVec {
                x: self.clone(),
                v: v.clone(),
            },
        ))
    }

    /// Multiplies every channel plane of `C x H x W` by a `1 x H x W` map.
    pub fn broadcast_mul_plane(&self, p: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("broadcast_mul_plane")?;
        if p.shape() != [1, h, w] {
            return Err(CoadError::ShapeMismatch {
                op: "broadcast_mul_plane",
                detail: format!("plane {:?} vs 1x{h}x{w}", p.shape()),
            });
        }
        let src = self.data();
        let pp = p.data();
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for ((o, &x), &pl) in out[ch * h * w..(ch + 1) * h * w]
                .iter_mut()
                .zip(&src[ch * h * w..(ch + 1) * h * w])
                .zip(pp.iter())
            {
                *o = x * pl;
            }
        }
        drop(src);
        drop(pp);
        Ok(Tensor::from_op(
            vec![c, h, w],
            out,
            Op::BroadcastMulPlane {
                x: self.clone(),
                p: p.clone(),
            },
        ))
    }

    /// 2-D cross-correlation with zero padding.
    /// Weight layout `Cout x Cin x k x k`, bias `Cout`.
    pub fn conv2d(
        &self,
        w: &Tensor<T>,
        b: &Tensor<T>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor<T>> {
        let (cin, h, wd) = self.dims3("conv2d")?;
        let ws = w.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(CoadError::ShapeMismatch {
                op: "conv2d",
                detail: format!("weight must be Cout x Cin x k x k, got {ws:?}"),
            });
        }
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(CoadError::ShapeMismatch {
                op: "conv2d",
                detail: format!("input has {cin} channels, weight expects {wcin}"),
            });
        }
        if b.shape() != [cout] {
            return Err(CoadError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias {:?} vs {cout} output channels", b.shape()),
            });
        }
        if k == 0 || stride == 0 || dilation == 0 {
            return Err(CoadError::Config(format!(
                "conv2d requires k, stride, dilation >= 1 (got k={k}, stride={stride}, dilation={dilation})"
            )));
        }
        let out_h = conv_out_extent(h, k, stride, padding, dilation).ok_or_else(|| {
            CoadError::Config(format!(
                "conv2d output height for input {h}, k={k}, stride={stride}, padding={padding}, dilation={dilation} is not a positive integer"
            ))
        })?;
        let out_w = conv_out_extent(wd, k, stride, padding, dilation).ok_or_else(|| {
            CoadError::Config(format!(
                "conv2d output width for input {wd}, k={k}, stride={stride}, padding={padding}, dilation={dilation} is not a positive integer"
            ))
        })?;
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            padding,
            dilation,
            out_h,
            out_w,
        };
        let cols = im2col(&self.data(), &geom);
        let mut out = vec![T::zero(); cout * out_h * out_w];
        gemm_acc(
            cout,
            cin * k * k,
            out_h * out_w,
            &w.data(),
            &cols,
            &mut out,
        );
        {
            let bias = b.data();
            for co in 0..cout {
                let bv = bias[co];
                for o in &mut out[co * out_h * out_w..(co + 1) * out_h * out_w] {
                    *o += bv;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![cout, out_h, out_w],
            out,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                stride,
                padding,
                dilation,
            },
        ))
    }

    /// Fractionally strided convolution (gradient-of-conv semantics).
    /// Weight layout `Cin x Cout x k x k`; `H' = (H-1)*stride - 2*padding + k`.
    pub fn conv_transpose2d(
        &self,
        w: &Tensor<T>,
        b: &Tensor<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let (cin, h, wd) = self.dims3("conv_transpose2d")?;
        let ws = w.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(CoadError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("weight must be Cin x Cout x k x k, got {ws:?}"),
            });
        }
        let (wcin, cout, k) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(CoadError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("input has {cin} channels, weight expects {wcin}"),
            });
        }
        if b.shape() != [cout] {
            return Err(CoadError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("bias {:?} vs {cout} output channels", b.shape()),
            });
        }
        if k == 0 || stride == 0 {
            return Err(CoadError::Config(format!(
                "conv_transpose2d requires k, stride >= 1 (got k={k}, stride={stride})"
            )));
        }
        let out_h = ((h - 1) * stride + k).checked_sub(2 * padding);
        let out_w = ((wd - 1) * stride + k).checked_sub(2 * padding);
        let (out_h, out_w) = match (out_h, out_w) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => (oh, ow),
            _ => {
                return Err(CoadError::Config(format!(
                    "conv_transpose2d output extent for input {h}x{wd}, k={k}, stride={stride}, padding={padding} is not positive"
                )))
            }
        };
        // Forward pass is the input-gradient of a conv mapping the output
        // image back to the input image.
        let geom = ConvGeom {
            cin: cout,
            h: out_h,
            w: out_w,
            k,
            stride,
            padding,
            dilation: 1,
            out_h: h,
            out_w: wd,
        };
        // cols[(Cout*k*k) x (H*W)] = Wmat^T [(Cout*k*k) x Cin] * x [Cin x (H*W)]
        let ckk = cout * k * k;
        let wt = {
            let wdat = w.data();
            let mut wt = vec![T::zero(); ckk * cin];
            for ci in 0..cin {
                for r in 0..ckk {
                    wt[r * cin + ci] = wdat[ci * ckk + r];
                }
            }
            wt
        };
        let mut cols = vec![T::zero(); ckk * h * wd];
        gemm_acc(ckk, cin, h * wd, &wt, &self.data(), &mut cols);
        let mut out = vec![T::zero(); cout * out_h * out_w];
        col2im_add(&cols, &geom, &mut out);
        {
            let bias = b.data();
            for co in 0..cout {
                let bv = bias[co];
                for o in &mut out[co * out_h * out_w..(co + 1) * out_h * out_w] {
                    *o += bv;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![cout, out_h, out_w],
            out,
            Op::ConvTranspose2d {
                x: self.clone(),
                w: w.clone(),
                b: b.clone(),
                stride,
                padding,
            },
        ))
    }

    /// Bilinear interpolation to `target_h x target_w` (align-corners=false,
    /// edge replication at the borders).
    pub fn bilinear_resize(&self, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
        let (c, h, w) = self.dims3("bilinear_resize")?;
        if target_h == 0 || target_w == 0 {
            return Err(CoadError::Config("bilinear_resize targets must be >= 1".into()));
        }
        let src = self.data();
        let mut out = vec![T::zero(); c * target_h * target_w];
        let half = T::of_f64(0.5);
        let sy = T::from_count(h) / T::from_count(target_h);
        let sx = T::from_count(w) / T::from_count(target_w);
        for oy in 0..target_h {
            let fy = (T::from_count(oy) + half) * sy - half;
            let (y0, y1, wy) = interp_axis(fy, h);
            for ox in 0..target_w {
                let fx = (T::from_count(ox) + half) * sx - half;
                let (x0, x1, wx) = interp_axis(fx, w);
                for ch in 0..c {
                    let plane = &src[ch * h * w..(ch + 1) * h * w];
                    let one = T::one();
                    let v = plane[y0 * w + x0] * (one - wy) * (one - wx)
                        + plane[y0 * w + x1] * (one - wy) * wx
                        + plane[y1 * w + x0] * wy * (one - wx)
                        + plane[y1 * w + x1] * wy * wx;
                    out[ch * target_h * target_w + oy * target_w + ox] = v;
                }
            }
        }
        drop(src);
        Ok(Tensor::from_op(
            vec![c, target_h, target_w],
            out,
            Op::BilinearResize(self.clone()),
        ))
    }
}

/// Source coordinate -> (low index, high index, high weight), clamped to the
/// valid range.
pub(crate) fn interp_axis<T: Scalar>(f: T, extent: usize) -> (usize, usize, T) {
    let zero = T::zero();
    let f = if f < zero { zero } else { f };
    let max_i = extent - 1;
    let fmax = T::from_count(max_i);
    let f = if f > fmax { fmax } else { f };
    let i0 = f.floor();
    let w = f - i0;
    let i0 = i0.as_f64() as usize;
    let i1 = (i0 + 1).min(max_i);
    (i0, i1, w)
}
