//! Brute-force reference implementations used to verify the tensor engine.
//! These deliberately avoid the engine's im2col/gemm path: convolutions are
//! direct nested-loop summations and reductions are plain scans.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Conv2dSpec {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

/// Direct quadruple-loop cross-correlation with zero padding.
pub fn conv2d_oracle(x: &[f64], wgt: &[f64], bias: &[f64], s: &Conv2dSpec) -> (Vec<f64>, usize, usize) {
    let oh = (s.h + 2 * s.padding - s.dilation * (s.k - 1) - 1) / s.stride + 1;
    let ow = (s.w + 2 * s.padding - s.dilation * (s.k - 1) - 1) / s.stride + 1;
    let mut out = vec![0.0; s.cout * oh * ow];
    for co in 0..s.cout {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = bias[co];
                for ci in 0..s.cin {
                    for ky in 0..s.k {
                        for kx in 0..s.k {
                            let iy = (y * s.stride + ky * s.dilation) as isize - s.padding as isize;
                            let ix = (xo * s.stride + kx * s.dilation) as isize - s.padding as isize;
                            if iy < 0 || iy >= s.h as isize || ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let xv = x[ci * s.h * s.w + iy as usize * s.w + ix as usize];
                            let wv = wgt[((co * s.cin + ci) * s.k + ky) * s.k + kx];
                            acc += xv * wv;
                        }
                    }
                }
                out[co * oh * ow + y * ow + xo] = acc;
            }
        }
    }
    (out, oh, ow)
}

/// Scatter-add transposed convolution: every input pixel distributes its
/// value through the kernel into the (larger) output plane.
pub fn conv_transpose2d_oracle(
    x: &[f64],
    wgt: &[f64], // cin x cout x k x k
    bias: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + k - 2 * padding;
    let ow = (w - 1) * stride + k - 2 * padding;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for p in out[co * oh * ow..(co + 1) * oh * ow].iter_mut() {
            *p = bias[co];
        }
    }
    for ci in 0..cin {
        for y in 0..h {
            for xi in 0..w {
                let v = x[ci * h * w + y * w + xi];
                for ky in 0..k {
                    for kx in 0..k {
                        let oy = (y * stride + ky) as isize - padding as isize;
                        let ox = (xi * stride + kx) as isize - padding as isize;
                        if oy < 0 || oy >= oh as isize || ox < 0 || ox >= ow as isize {
                            continue;
                        }
                        for co in 0..cout {
                            let wv = wgt[((ci * cout + co) * k + ky) * k + kx];
                            out[co * oh * ow + oy as usize * ow + ox as usize] += v * wv;
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Plain softmax with max subtraction, summed left to right.
pub fn softmax_oracle(v: &[f64]) -> Vec<f64> {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.iter().map(|e| e / denom).collect()
}

pub fn matmul_oracle(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for l in 0..k {
                acc += a[i * k + l] * b[l * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

pub fn channel_mean_oracle(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    (0..hw)
        .map(|p| (0..c).map(|ch| x[ch * hw + p]).sum::<f64>() / c as f64)
        .collect()
}

pub fn channel_max_oracle(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    (0..hw)
        .map(|p| (0..c).map(|ch| x[ch * hw + p]).fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

pub fn gap_oracle(x: &[f64], c: usize, hw: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| x[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect()
}

pub fn max_pool_oracle(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        best = best.max(x[ch * h * w + (i * stride + dy) * w + (j * stride + dx)]);
                    }
                }
                out[ch * oh * ow + i * ow + j] = best;
            }
        }
    }
    (out, oh, ow)
}

/// Scalar bilinear interpolation, align-corners=false with edge clamping.
pub fn bilinear_oracle(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c * th * tw];
    let clamp = |f: f64, max: usize| f.max(0.0).min((max - 1) as f64);
    for oy in 0..th {
        let fy = clamp((oy as f64 + 0.5) * h as f64 / th as f64 - 0.5, h);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..tw {
            let fx = clamp((ox as f64 + 0.5) * w as f64 / tw as f64 - 0.5, w);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| x[ch * h * w + yy * w + xx];
                out[ch * th * tw + oy * tw + ox] = at(y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + at(y0, x1) * (1.0 - wy) * wx
                    + at(y1, x0) * wy * (1.0 - wx)
                    + at(y1, x1) * wy * wx;
            }
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(g.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = vec![];
    for p in all_permutations(n - 1) {
        for pos in 0..n {
            let mut q: Vec<usize> = p.iter().map(|&x| x + 1).collect();
            q.insert(pos, 0);
            out.push(q);
        }
    }
    out
}
