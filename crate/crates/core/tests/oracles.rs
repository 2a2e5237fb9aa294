//! Engine ops versus independent brute-force oracles, and per-op
//! finite-difference gradient checks.

mod common;

use coadnet::gradcheck::{check_gradients, GradCheckOptions};
use coadnet::nn::{Param, Parameter};
use coadnet::tensor::Tensor;
use common::*;

fn tol(h: f64) -> GradCheckOptions {
    GradCheckOptions {
        h,
        ..GradCheckOptions::default()
    }
}

#[test]
fn conv2d_matches_direct_loops_across_shapes_and_dilations() {
    let mut r = rng(100);
    for (cin, h, w, cout, k, stride, padding, dilation) in [
        (3usize, 5usize, 5usize, 2usize, 3usize, 1usize, 2usize, 2usize),
        (1, 7, 9, 4, 1, 1, 0, 1),
        (4, 16, 16, 8, 3, 1, 1, 1),
        (2, 11, 11, 3, 3, 1, 3, 3),
        (2, 15, 15, 3, 3, 1, 5, 5),
        (2, 15, 15, 3, 3, 1, 7, 7),
        (3, 16, 16, 4, 4, 2, 1, 1),
    ] {
        let spec = Conv2dSpec {
            cin,
            h,
            w,
            cout,
            k,
            stride,
            padding,
            dilation,
        };
        let x = random_vec(&mut r, cin * h * w, -1.0, 1.0);
        let wgt = random_vec(&mut r, cout * cin * k * k, -0.5, 0.5);
        let bias = random_vec(&mut r, cout, -0.2, 0.2);
        let (want, oh, ow) = conv2d_oracle(&x, &wgt, &bias, &spec);

        let xt = Tensor::new(&[cin, h, w], x).unwrap();
        let wt = Tensor::new(&[cout, cin, k, k], wgt).unwrap();
        let bt = Tensor::new(&[cout], bias).unwrap();
        let got = xt.conv2d(&wt, &bt, stride, padding, dilation).unwrap();
        assert_eq!(got.shape(), &[cout, oh, ow]);
        let err = max_rel_err(&got.to_vec(), &want);
        assert!(err < 1e-6, "conv2d rel err {err} at k={k} d={dilation}");
    }
}

#[test]
fn four_parallel_dilated_branches_each_match_oracle() {
    // the multi-dilation local-context configuration: 3x3, padding = rate
    let mut r = rng(101);
    let d = 8usize;
    let hw = 8usize;
    let x = random_vec(&mut r, d * hw * hw, -1.0, 1.0);
    let xt = Tensor::new(&[d, hw, hw], x.clone()).unwrap();
    for rate in [1usize, 3, 5, 7] {
        let wgt = random_vec(&mut r, (d / 4) * d * 9, -0.3, 0.3);
        let bias = random_vec(&mut r, d / 4, -0.1, 0.1);
        let spec = Conv2dSpec {
            cin: d,
            h: hw,
            w: hw,
            cout: d / 4,
            k: 3,
            stride: 1,
            padding: rate,
            dilation: rate,
        };
        let (want, oh, ow) = conv2d_oracle(&x, &wgt, &bias, &spec);
        assert_eq!((oh, ow), (hw, hw), "dilated conv must keep extent");
        let wt = Tensor::new(&[d / 4, d, 3, 3], wgt).unwrap();
        let bt = Tensor::new(&[d / 4], bias).unwrap();
        let got = xt.conv2d(&wt, &bt, 1, rate, rate).unwrap();
        let err = max_rel_err(&got.to_vec(), &want);
        assert!(err < 1e-6, "dilation {rate} rel err {err}");
    }
}

#[test]
fn conv_transpose_matches_scatter_oracle() {
    let mut r = rng(102);
    for (cin, h, w, cout, k, stride, padding) in [
        (1usize, 2usize, 2usize, 1usize, 4usize, 2usize, 1usize),
        (3, 5, 4, 2, 4, 2, 1),
        (2, 8, 8, 2, 3, 1, 1),
        (4, 6, 6, 1, 2, 2, 0),
    ] {
        let x = random_vec(&mut r, cin * h * w, -1.0, 1.0);
        let wgt = random_vec(&mut r, cin * cout * k * k, -0.5, 0.5);
        let bias = random_vec(&mut r, cout, -0.2, 0.2);
        let (want, oh, ow) =
            conv_transpose2d_oracle(&x, &wgt, &bias, cin, h, w, cout, k, stride, padding);

        let xt = Tensor::new(&[cin, h, w], x).unwrap();
        let wt = Tensor::new(&[cin, cout, k, k], wgt).unwrap();
        let bt = Tensor::new(&[cout], bias).unwrap();
        let got = xt.conv_transpose2d(&wt, &bt, stride, padding).unwrap();
        assert_eq!(got.shape(), &[cout, oh, ow]);
        let err = max_rel_err(&got.to_vec(), &want);
        assert!(err < 1e-6, "conv_transpose rel err {err}");
    }
}

#[test]
fn all_ones_2x2_transposed_kernel_hand_case() {
    // 2x2 input, k4/s2/p1, all-ones kernel: overlapped scatter sums
    let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Tensor::new(&[1, 1, 4, 4], vec![1.0; 16]).unwrap();
    let b = Tensor::new(&[1], vec![0.0]).unwrap();
    let got = x.conv_transpose2d(&w, &b, 2, 1).unwrap();
    let (want, oh, ow) = conv_transpose2d_oracle(
        &[1.0, 2.0, 3.0, 4.0],
        &[1.0; 16],
        &[0.0],
        1,
        2,
        2,
        1,
        4,
        2,
        1,
    );
    assert_eq!((oh, ow), (4, 4));
    assert_eq!(got.to_vec(), want);
    // every input contributes to the center 2x2 through the 4x4 kernel
    assert_eq!(got.to_vec()[5], 1.0 + 2.0 + 3.0 + 4.0);
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, convT(y)> with the shared weight tensor
    let mut r = rng(103);
    let x = random_vec(&mut r, 3 * 6 * 6, -1.0, 1.0);
    let wgt = random_vec(&mut r, 2 * 3 * 9, -0.5, 0.5);
    let y = random_vec(&mut r, 2 * 6 * 6, -1.0, 1.0);

    let xt = Tensor::new(&[3, 6, 6], x.clone()).unwrap();
    let wt = Tensor::new(&[2, 3, 3, 3], wgt).unwrap();
    let yt = Tensor::new(&[2, 6, 6], y.clone()).unwrap();
    let conv = xt.conv2d(&wt, &Tensor::zeros(&[2]), 1, 1, 1).unwrap();
    let lhs: f64 = conv.to_vec().iter().zip(&y).map(|(a, b)| a * b).sum();
    let back = yt.conv_transpose2d(&wt, &Tensor::zeros(&[3]), 1, 1).unwrap();
    let rhs: f64 = back.to_vec().iter().zip(&x).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-9);
}

#[test]
fn softmax_matches_high_precision_oracle() {
    let mut r = rng(104);
    for _ in 0..10 {
        let v = random_vec(&mut r, 7, -6.0, 6.0);
        let t = Tensor::new(&[7], v.clone()).unwrap();
        let got = t.softmax_along(0).unwrap().to_vec();
        let want = softmax_oracle(&v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() / w <= 1e-12, "{g} vs {w}");
        }
        let sum: f64 = got.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(got.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn softmax_axis_slices_match_oracle_on_rank3() {
    let mut r = rng(105);
    let (a, b, c) = (3usize, 4usize, 5usize);
    let v = random_vec(&mut r, a * b * c, -3.0, 3.0);
    let t = Tensor::new(&[a, b, c], v.clone()).unwrap();
    for axis in 0..3 {
        let got = t.softmax_along(axis).unwrap().to_vec();
        let dims = [a, b, c];
        let len = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        for o in 0..outer {
            for i in 0..inner {
                let slice: Vec<f64> = (0..len).map(|l| v[(o * len + l) * inner + i]).collect();
                let want = softmax_oracle(&slice);
                for (l, wv) in want.iter().enumerate() {
                    let gv = got[(o * len + l) * inner + i];
                    assert!((gv - wv).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(106);
    for (m, k, n) in [(3usize, 4usize, 2usize), (1, 7, 5), (6, 6, 6), (2, 1, 9)] {
        let a = random_vec(&mut r, m * k, -2.0, 2.0);
        let b = random_vec(&mut r, k * n, -2.0, 2.0);
        let got = Tensor::new(&[m, k], a.clone())
            .unwrap()
            .matmul(&Tensor::new(&[k, n], b.clone()).unwrap())
            .unwrap();
        let want = matmul_oracle(&a, m, k, &b, n);
        let err = max_rel_err(&got.to_vec(), &want);
        assert!(err < 1e-6, "matmul rel err {err}");
    }
}

#[test]
fn reductions_match_loop_oracles() {
    let mut r = rng(107);
    let (c, h, w) = (4usize, 8usize, 16usize);
    let v = random_vec(&mut r, c * h * w, -2.0, 2.0);
    let t = Tensor::new(&[c, h, w], v.clone()).unwrap();

    let got = t.channel_mean().unwrap().to_vec();
    let want = channel_mean_oracle(&v, c, h * w);
    assert!(max_rel_err(&got, &want) < 1e-12);

    let got = t.channel_max().unwrap().to_vec();
    let want = channel_max_oracle(&v, c, h * w);
    assert_eq!(got, want);

    let got = t.global_avg_pool().unwrap().to_vec();
    let want = gap_oracle(&v, c, h * w);
    assert!(max_rel_err(&got, &want) < 1e-12);

    for (win, stride) in [(2usize, 2usize), (3, 1), (4, 4)] {
        let got = t.max_pool2d(win, stride).unwrap();
        let (want, oh, ow) = max_pool_oracle(&v, c, h, w, win, stride);
        assert_eq!(got.shape(), &[c, oh, ow]);
        assert_eq!(got.to_vec(), want);
    }
}

#[test]
fn bilinear_resize_matches_scalar_oracle() {
    let mut r = rng(108);
    let (c, h, w) = (2usize, 2usize, 2usize);
    let v = random_vec(&mut r, c * h * w, 0.0, 1.0);
    let t = Tensor::new(&[c, h, w], v.clone()).unwrap();
    let got = t.bilinear_resize(4, 4).unwrap().to_vec();
    let want = bilinear_oracle(&v, c, h, w, 4, 4);
    assert!(max_rel_err(&got, &want) < 1e-6);

    let v = random_vec(&mut r, 3 * 5 * 7, -1.0, 1.0);
    let t = Tensor::new(&[3, 5, 7], v.clone()).unwrap();
    let got = t.bilinear_resize(11, 4).unwrap().to_vec();
    let want = bilinear_oracle(&v, 3, 5, 7, 11, 4);
    assert!(max_rel_err(&got, &want) < 1e-9);
}

// --- per-op gradient checks -------------------------------------------------

fn param(r: &mut rand_chacha::ChaCha8Rng, name: &str, shape: &[usize]) -> Param<f64> {
    let n = shape.iter().product();
    Parameter::new(name, shape, random_vec(r, n, -1.0, 1.0)).unwrap()
}

/// Random linear functional of the output makes every gradient path
/// nontrivial.
fn weighted_sum(t: &Tensor<f64>, weights: &Tensor<f64>) -> coadnet::Result<Tensor<f64>> {
    Ok(t.mul(weights)?.sum_all())
}

#[test]
fn conv_ops_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(200 + seed);
        let x = param(&mut r, "x", &[2, 5, 5]);
        let w = param(&mut r, "w", &[3, 2, 3, 3]);
        let b = param(&mut r, "b", &[3]);
        let probe = Tensor::new(&[3, 5, 5], random_vec(&mut r, 75, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[x.clone(), w.clone(), b.clone()],
            || weighted_sum(&x.tensor().conv2d(w.tensor(), b.tensor(), 1, 2, 2)?, &probe),
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "conv2d seed {seed}: {:?}", report.failures);

        let xt = param(&mut r, "xt", &[2, 3, 3]);
        let wt = param(&mut r, "wt", &[2, 2, 4, 4]);
        let bt = param(&mut r, "bt", &[2]);
        let probe = Tensor::new(&[2, 6, 6], random_vec(&mut r, 72, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[xt.clone(), wt.clone(), bt.clone()],
            || {
                weighted_sum(
                    &xt.tensor().conv_transpose2d(wt.tensor(), bt.tensor(), 2, 1)?,
                    &probe,
                )
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "convT seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn elementwise_and_structural_ops_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(300 + seed);
        let a = param(&mut r, "a", &[3, 4]);
        let b = param(&mut r, "b", &[3, 4]);
        let probe = Tensor::new(&[3, 4], random_vec(&mut r, 12, -1.0, 1.0)).unwrap();
        let probe2 = Tensor::new(&[6, 2], random_vec(&mut r, 12, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[a.clone(), b.clone()],
            || {
                let sum = a.tensor().add(b.tensor())?;
                let prod = sum.mul(&a.tensor().sigmoid())?;
                let mix = prod.relu().add(&a.tensor().affine(0.3, 0.1))?;
                let reshaped = mix.reshape(&[6, 2])?;
                let part1 = weighted_sum(&mix, &probe)?;
                let part2 = weighted_sum(&reshaped.transpose2d()?.transpose2d()?, &probe2)?;
                part1.add(&part2)
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "ew seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn softmax_matmul_and_pool_ops_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(400 + seed);
        let q = param(&mut r, "q", &[3, 4]);
        let k = param(&mut r, "k", &[3, 4]);
        let probe = Tensor::new(&[4, 4], random_vec(&mut r, 16, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[q.clone(), k.clone()],
            || {
                let aff = q.tensor().transpose2d()?.matmul(k.tensor())?.scale(0.5);
                weighted_sum(&aff.softmax_along(0)?, &probe)
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "attn seed {seed}: {:?}", report.failures);

        let x = param(&mut r, "x", &[3, 4, 4]);
        let v = param(&mut r, "v", &[3]);
        let plane = param(&mut r, "p", &[1, 4, 4]);
        let probe_map = Tensor::new(&[3, 4, 4], random_vec(&mut r, 48, -1.0, 1.0)).unwrap();
        let probe_vec = Tensor::new(&[3], random_vec(&mut r, 3, -1.0, 1.0)).unwrap();
        let probe_plane = Tensor::new(&[1, 4, 4], random_vec(&mut r, 16, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[x.clone(), v.clone(), plane.clone()],
            || {
                let scaled = x.tensor().broadcast_mul_channel_vec(v.tensor())?;
                let gated = scaled.broadcast_mul_plane(plane.tensor())?;
                let l1 = weighted_sum(&gated, &probe_map)?;
                let l2 = weighted_sum(&gated.global_avg_pool()?, &probe_vec)?;
                let l3 = weighted_sum(&gated.channel_mean()?, &probe_plane)?;
                l1.add(&l2)?.add(&l3)
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "pool seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn max_routing_ln_clamp_and_resize_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(500 + seed);
        // keep values away from max ties and clamp edges
        let x = Parameter::new(
            "x",
            &[2, 4, 4],
            (0..32).map(|i| 0.05 + 0.03 * i as f64 + (seed as f64) * 0.011).collect(),
        )
        .unwrap();
        let probe_a = Tensor::new(&[1, 4, 4], random_vec(&mut r, 16, -1.0, 1.0)).unwrap();
        let probe_b = Tensor::new(&[2, 2, 2], random_vec(&mut r, 8, -1.0, 1.0)).unwrap();
        let probe_c = Tensor::new(&[2, 8, 8], random_vec(&mut r, 128, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[x.clone()],
            || {
                let cm = x.tensor().channel_max()?;
                let l1 = weighted_sum(&cm, &probe_a)?;
                let mp = x.tensor().max_pool2d(2, 2)?;
                let l2 = weighted_sum(&mp, &probe_b)?;
                let ln = x.tensor().clamp(0.01, 10.0).ln();
                let l3 = weighted_sum(&ln.bilinear_resize(8, 8)?, &probe_c)?;
                l1.add(&l2)?.add(&l3)
            },
            &tol(1e-5),
        )
        .unwrap();
        assert!(report.passed(), "routing seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn set_aggregation_ops_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(600 + seed);
        let members: Vec<Param<f64>> = (0..3)
            .map(|i| param(&mut r, &format!("m{i}"), &[4, 2, 2]))
            .collect();
        let probe = Tensor::new(&[4, 2, 2], random_vec(&mut r, 16, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &members,
            || {
                let stacked =
                    Tensor::stack0(&members.iter().map(|p| p.tensor().clone()).collect::<Vec<_>>())?;
                weighted_sum(&stacked.softmax_weighted_sum0()?, &probe)
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "agg seed {seed}: {:?}", report.failures);

        let y = param(&mut r, "y", &[3, 5]);
        let probe = Tensor::new(&[5], random_vec(&mut r, 5, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[y.clone()],
            || weighted_sum(&coadnet::gcpd::group_vector(y.tensor())?, &probe),
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "group_vector seed {seed}: {:?}", report.failures);
    }
}

#[test]
fn slice_and_concat_pass_finite_difference_checks() {
    for seed in 0..5u64 {
        let mut r = rng(700 + seed);
        let x = param(&mut r, "x", &[6, 3, 3]);
        let probe = Tensor::new(&[4, 3, 3], random_vec(&mut r, 36, -1.0, 1.0)).unwrap();
        let report = check_gradients(
            &[x.clone()],
            || {
                let lo = x.tensor().slice0(0, 2)?;
                let hi = x.tensor().slice0(4, 2)?;
                weighted_sum(&Tensor::concat0(&[lo, hi])?, &probe)
            },
            &tol(1e-4),
        )
        .unwrap();
        assert!(report.passed(), "slice seed {seed}: {:?}", report.failures);
    }
}

// --- engine-wide invariants -------------------------------------------------

#[test]
fn softmax_weighted_sum_is_bit_exact_under_permutation() {
    let mut r = rng(900);
    let n = 5usize;
    let m = 64usize;
    let base: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut r, m, -2.0, 2.0)).collect();
    let run = |order: &[usize]| -> Vec<f64> {
        let rows: Vec<Tensor<f64>> = order
            .iter()
            .map(|&i| Tensor::new(&[m], base[i].clone()).unwrap())
            .collect();
        Tensor::stack0(&rows).unwrap().softmax_weighted_sum0().unwrap().to_vec()
    };
    let reference = run(&(0..n).collect::<Vec<_>>());
    for perm in all_permutations(n) {
        let out = run(&perm);
        for (a, b) in out.iter().zip(&reference) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
