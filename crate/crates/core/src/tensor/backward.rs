//! Reverse-mode pass: walks the lineage DAG from a scalar loss and
//! accumulates d(loss)/d(input) into every tensor that needs a gradient.

use std::collections::HashSet;

use crate::error::{CoadError, Result};

use super::gemm::{col2im_add, gemm_acc, im2col, ConvGeom};
use super::ops::{axis_split, interp_axis, Op};
use super::{canonical_sum, Scalar, Tensor};

fn transpose_mat<T: Scalar>(m: usize, n: usize, src: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Accumulates d(self)/d(p) into the grad slot of every tensor reachable
    /// through lineage that requires a gradient. `self` must be scalar.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(CoadError::Data(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.needs_grad() {
            return Ok(());
        }

        // Reachable needs-grad subgraph; ids are assigned in creation order,
        // so descending id is a valid reverse topological order.
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(t) = stack.pop() {
            if let Some(op) = t.op() {
                for input in op.inputs() {
                    if input.needs_grad() && seen.insert(input.id()) {
                        stack.push(input.clone());
                    }
                }
            }
            nodes.push(t);
        }
        nodes.sort_by(|a, b| b.id().cmp(&a.id()));

        self.accumulate_grad(&[T::one()]);
        for node in &nodes {
            let Some(op) = node.op() else { continue };
            let grad = match node.inner.grad.borrow().clone() {
                Some(g) => g,
                None => continue,
            };
            propagate(op, node, &grad);
        }
        Ok(())
    }
}

fn propagate<T: Scalar>(op: &Op<T>, node: &Tensor<T>, g: &[T]) {
    match op {
        Op::Add(a, b) => {
            if a.needs_grad() {
                a.accumulate_grad(g);
            }
            if b.needs_grad() {
                b.accumulate_grad(g);
            }
        }
        Op::Mul(a, b) => {
            if a.needs_grad() {
                let bd = b.data();
                let ga: Vec<T> = g.iter().zip(bd.iter()).map(|(&gv, &bv)| gv * bv).collect();
                drop(bd);
                a.accumulate_grad(&ga);
            }
            if b.needs_grad() {
                let ad = a.data();
                let gb: Vec<T> = g.iter().zip(ad.iter()).map(|(&gv, &av)| gv * av).collect();
                drop(ad);
                b.accumulate_grad(&gb);
            }
        }
        Op::Affine { x, scale } => {
            if x.needs_grad() {
                let gx: Vec<T> = g.iter().map(|&gv| gv * *scale).collect();
                x.accumulate_grad(&gx);
            }
        }
        Op::Relu(x) => {
            if x.needs_grad() {
                let xd = x.data();
                let gx: Vec<T> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                drop(xd);
                x.accumulate_grad(&gx);
            }
        }
        Op::Sigmoid(x) => {
            if x.needs_grad() {
                let y = node.data();
                let gx: Vec<T> = g
                    .iter()
                    .zip(y.iter())
                    .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                    .collect();
                drop(y);
                x.accumulate_grad(&gx);
            }
        }
        Op::Ln(x) => {
            if x.needs_grad() {
                let xd = x.data();
                let gx: Vec<T> = g.iter().zip(xd.iter()).map(|(&gv, &xv)| gv / xv).collect();
                drop(xd);
                x.accumulate_grad(&gx);
            }
        }
        Op::Clamp { x, lo, hi } => {
            if x.needs_grad() {
                let xd = x.data();
                let gx: Vec<T> = g
                    .iter()
                    .zip(xd.iter())
                    .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { T::zero() })
                    .collect();
                drop(xd);
                x.accumulate_grad(&gx);
            }
        }
        Op::Matmul(a, b) => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.needs_grad() {
                // dA = g * B^T
                let bt = transpose_mat(k, n, &b.data());
                let mut ga = vec![T::zero(); m * k];
                gemm_acc(m, n, k, g, &bt, &mut ga);
                a.accumulate_grad(&ga);
            }
            if b.needs_grad() {
                // dB = A^T * g
                let at = transpose_mat(m, k, &a.data());
                let mut gb = vec![T::zero(); k * n];
                gemm_acc(k, m, n, &at, g, &mut gb);
                b.accumulate_grad(&gb);
            }
        }
        Op::Transpose2d(x) => {
            if x.needs_grad() {
                let (n, m) = (node.shape()[0], node.shape()[1]);
                x.accumulate_grad(&transpose_mat(n, m, g));
            }
        }
        Op::Reshape(x) => {
            if x.needs_grad() {
                x.accumulate_grad(g);
            }
        }
        Op::Concat0(parts) => {
            let mut offset = 0usize;
            for p in parts {
                let len = p.numel();
                if p.needs_grad() {
                    p.accumulate_grad(&g[offset..offset + len]);
                }
                offset += len;
            }
        }
        Op::Slice0 { x, start } => {
            if x.needs_grad() {
                let inner: usize = x.shape()[1..].iter().product();
                let mut gx = vec![T::zero(); x.numel()];
                gx[start * inner..start * inner + g.len()].copy_from_slice(g);
                x.accumulate_grad(&gx);
            }
        }
        Op::SoftmaxAlong { x, axis } => {
            if x.needs_grad() {
                let y = node.data();
                let (outer, len, inner) = axis_split(x.shape(), *axis);
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mut dot = T::zero();
                        for l in 0..len {
                            dot += g[idx(l)] * y[idx(l)];
                        }
                        for l in 0..len {
                            gx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
                drop(y);
                x.accumulate_grad(&gx);
            }
        }
        Op::SoftmaxWeightedSum0(x) => {
            if x.needs_grad() {
                // d/ds_i (sum_n w_n s_n) = w_i * (1 + s_i - y), with w the
                // softmax over axis 0. Weights are recomputed with the same
                // canonical summation as the forward pass.
                let s = x.data();
                let y = node.data();
                let n = x.shape()[0];
                let m: usize = x.shape()[1..].iter().product();
                let mut gx = vec![T::zero(); s.len()];
                let mut exps = vec![T::zero(); n];
                let mut buf = vec![T::zero(); n];
                for j in 0..m {
                    let mut mx = s[j];
                    for i in 1..n {
                        mx = mx.max(s[i * m + j]);
                    }
                    for i in 0..n {
                        exps[i] = (s[i * m + j] - mx).exp();
                    }
                    buf.copy_from_slice(&exps);
                    let denom = canonical_sum(&mut buf);
                    for i in 0..n {
                        let w = exps[i] / denom;
                        gx[i * m + j] = g[j] * w * (T::one() + s[i * m + j] - y[j]);
                    }
                }
                drop(s);
                drop(y);
                x.accumulate_grad(&gx);
            }
        }
        Op::SumAll(x) => {
            if x.needs_grad() {
                x.accumulate_grad(&vec![g[0]; x.numel()]);
            }
        }
        Op::ChannelMean(x) => {
            if x.needs_grad() {
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let inv = T::one() / T::from_count(c);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for (o, &gv) in gx[ch * h * w..(ch + 1) * h * w].iter_mut().zip(g) {
                        *o = gv * inv;
                    }
                }
                x.accumulate_grad(&gx);
            }
        }
        Op::ChannelMax { x, argmax } => {
            if x.needs_grad() {
                let mut gx = vec![T::zero(); x.numel()];
                for (p, &src) in argmax.iter().enumerate() {
                    gx[src] += g[p];
                }
                x.accumulate_grad(&gx);
            }
        }
        Op::SpatialGlobalMean(x) => {
            if x.needs_grad() {
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let inv = T::one() / T::from_count(h * w);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let gv = g[ch] * inv;
                    for o in &mut gx[ch * h * w..(ch + 1) * h * w] {
                        *o = gv;
                    }
                }
                x.accumulate_grad(&gx);
            }
        }
        Op::SpatialMaxPool { x, argmax } => {
            if x.needs_grad() {
                let mut gx = vec![T::zero(); x.numel()];
                for (o, &src) in argmax.iter().enumerate() {
                    gx[src] += g[o];
                }
                x.accumulate_grad(&gx);
            }
        }
        Op::BroadcastMulChannelVec { x, v } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if x.needs_grad() {
                let vd = v.data();
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    let s = vd[ch];
                    for (o, &gv) in gx[ch * h * w..(ch + 1) * h * w]
                        .iter_mut()
                        .zip(&g[ch * h * w..(ch + 1) * h * w])
                    {
                        *o = gv * s;
                    }
                }
                drop(vd);
                x.accumulate_grad(&gx);
            }
            if v.needs_grad() {
                let xd = x.data();
                let mut gv = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for (&gq, &xq) in g[ch * h * w..(ch + 1) * h * w]
                        .iter()
                        .zip(&xd[ch * h * w..(ch + 1) * h * w])
                    {
                        acc += gq * xq;
                    }
                    gv[ch] = acc;
                }
                drop(xd);
                v.accumulate_grad(&gv);
            }
        }
        Op::BroadcastMulPlane { x, p } => {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            if x.needs_grad() {
                let pd = p.data();
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for ((o, &gv), &pv) in gx[ch * h * w..(ch + 1) * h * w]
                        .iter_mut()
                        .zip(&g[ch * h * w..(ch + 1) * h * w])
                        .zip(pd.iter())
                    {
                        *o = gv * pv;
                    }
                }
                drop(pd);
                x.accumulate_grad(&gx);
            }
            if p.needs_grad() {
                let xd = x.data();
                let mut gp = vec![T::zero(); h * w];
                for ch in 0..c {
                    for ((o, &gv), &xv) in gp
                        .iter_mut()
                        .zip(&g[ch * h * w..(ch + 1) * h * w])
                        .zip(&xd[ch * h * w..(ch + 1) * h * w])
                    {
                        *o += gv * xv;
                    }
                }
                drop(xd);
                p.accumulate_grad(&gp);
            }
        }
        Op::Conv2d {
            x,
            w,
            b,
            stride,
            padding,
            dilation,
        } => {
            let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (cout, k) = (w.shape()[0], w.shape()[2]);
            let (out_h, out_w) = (node.shape()[1], node.shape()[2]);
            let geom = ConvGeom {
                cin,
                h,
                w: wd,
                k,
                stride: *stride,
                padding: *padding,
                dilation: *dilation,
                out_h,
                out_w,
            };
            let ckk = cin * k * k;
            let spatial = out_h * out_w;
            if x.needs_grad() {
                // dX = col2im(W^T * gY)
                let wt = transpose_mat(cout, ckk, &w.data());
                let mut cols = vec![T::zero(); ckk * spatial];
                gemm_acc(ckk, cout, spatial, &wt, g, &mut cols);
                let mut gx = vec![T::zero(); cin * h * wd];
                col2im_add(&cols, &geom, &mut gx);
                x.accumulate_grad(&gx);
            }
            if w.needs_grad() {
                // dW = gY * im2col(x)^T
                let cols = im2col(&x.data(), &geom);
                let cols_t = transpose_mat(ckk, spatial, &cols);
                let mut gw = vec![T::zero(); cout * ckk];
                gemm_acc(cout, spatial, ckk, g, &cols_t, &mut gw);
                w.accumulate_grad(&gw);
            }
            if b.needs_grad() {
                let mut gb = vec![T::zero(); cout];
                for co in 0..cout {
                    let mut acc = T::zero();
                    for &gv in &g[co * spatial..(co + 1) * spatial] {
                        acc += gv;
                    }
                    gb[co] = acc;
                }
                b.accumulate_grad(&gb);
            }
        }
        Op::ConvTranspose2d {
            x,
            w,
            b,
            stride,
            padding,
        } => {
            let (cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (cout, k) = (w.shape()[1], w.shape()[2]);
            let (out_h, out_w) = (node.shape()[1], node.shape()[2]);
            // Same hypothetical conv geometry as the forward pass.
            let geom = ConvGeom {
                cin: cout,
                h: out_h,
                w: out_w,
                k,
                stride: *stride,
                padding: *padding,
                dilation: 1,
                out_h: h,
                out_w: wd,
            };
            let ckk = cout * k * k;
            if x.needs_grad() || w.needs_grad() {
                let cols = im2col(g, &geom); // (Cout*k*k) x (H*W)
                if x.needs_grad() {
                    // dX = Wmat (Cin x Cout*k*k) * cols
                    let mut gx = vec![T::zero(); cin * h * wd];
                    gemm_acc(cin, ckk, h * wd, &w.data(), &cols, &mut gx);
                    x.accumulate_grad(&gx);
                }
                if w.needs_grad() {
                    // dW = x (Cin x H*W) * cols^T
                    let cols_t = transpose_mat(ckk, h * wd, &cols);
                    let mut gw = vec![T::zero(); cin * ckk];
                    gemm_acc(cin, h * wd, ckk, &x.data(), &cols_t, &mut gw);
                    w.accumulate_grad(&gw);
                }
            }
            if b.needs_grad() {
                let spatial = out_h * out_w;
                let mut gb = vec![T::zero(); cout];
                for co in 0..cout {
                    let mut acc = T::zero();
                    for &gv in &g[co * spatial..(co + 1) * spatial] {
                        acc += gv;
                    }
                    gb[co] = acc;
                }
                b.accumulate_grad(&gb);
            }
        }
        Op::BilinearResize(x) => {
            if x.needs_grad() {
                let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (th, tw) = (node.shape()[1], node.shape()[2]);
                let mut gx = vec![T::zero(); c * h * w];
                let half = T::of_f64(0.5);
                let sy = T::from_count(h) / T::from_count(th);
                let sx = T::from_count(w) / T::from_count(tw);
                let one = T::one();
                for oy in 0..th {
                    let fy = (T::from_count(oy) + half) * sy - half;
                    let (y0, y1, wy) = interp_axis(fy, h);
                    for ox in 0..tw {
                        let fx = (T::from_count(ox) + half) * sx - half;
                        let (x0, x1, wx) = interp_axis(fx, w);
                        for ch in 0..c {
                            let gv = g[ch * th * tw + oy * tw + ox];
                            let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                            plane[y0 * w + x0] += gv * (one - wy) * (one - wx);
                            plane[y0 * w + x1] += gv * (one - wy) * wx;
                            plane[y1 * w + x0] += gv * wy * (one - wx);
                            plane[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                x.accumulate_grad(&gx);
            }
        }
    }
}
