//! Property tests for the engine's structural invariants.

use coadnet::ggd::gated_combine;
use coadnet::Tensor;
use proptest::prelude::*;

fn finite_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_positive_and_normalized(v in finite_vec(9)) {
        let t = Tensor::new(&[9], v).unwrap();
        let s = t.softmax_along(0).unwrap().to_vec();
        prop_assert!(s.iter().all(|&p| p > 0.0));
        let sum: f64 = s.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn softmax_is_shift_invariant(v in finite_vec(6), c in -30.0f64..30.0) {
        let a = Tensor::new(&[6], v.clone()).unwrap();
        let b = a.affine(1.0, c);
        let sa = a.softmax_along(0).unwrap().to_vec();
        let sb = b.softmax_along(0).unwrap().to_vec();
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn reshape_and_transpose_round_trips_are_bit_exact(v in finite_vec(24)) {
        let t = Tensor::new(&[2, 3, 4], v.clone()).unwrap();
        let r = t.reshape(&[6, 4]).unwrap().reshape(&[2, 3, 4]).unwrap();
        prop_assert_eq!(r.to_vec(), v.clone());
        let tt = t
            .reshape(&[4, 6])
            .unwrap()
            .transpose2d()
            .unwrap()
            .transpose2d()
            .unwrap();
        prop_assert_eq!(tt.to_vec(), v);
    }

    #[test]
    fn gated_combination_stays_in_the_envelope(
        logits in finite_vec(16),
        g in finite_vec(16),
        u in finite_vec(16),
    ) {
        let p = Tensor::new(&[16], logits).unwrap().sigmoid();
        let x = gated_combine(
            &p,
            &Tensor::new(&[16], g.clone()).unwrap(),
            &Tensor::new(&[16], u.clone()).unwrap(),
        )
        .unwrap();
        for ((xv, gv), uv) in x.to_vec().iter().zip(&g).zip(&u) {
            prop_assert!(*xv >= gv.min(*uv) && *xv <= gv.max(*uv));
        }
    }

    #[test]
    fn set_pooling_is_permutation_invariant_and_convex(
        rows in prop::collection::vec(finite_vec(5), 2..6),
        swap_a in 0usize..6,
        swap_b in 0usize..6,
    ) {
        let n = rows.len();
        let m = rows[0].len();
        let make = |order: &[usize]| {
            let flat: Vec<f64> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            Tensor::new(&[n, m], flat).unwrap().softmax_weighted_sum0().unwrap().to_vec()
        };
        let ident: Vec<usize> = (0..n).collect();
        let mut perm = ident.clone();
        perm.swap(swap_a % n, swap_b % n);
        let a = make(&ident);
        let b = make(&perm);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
        // convex combination per column
        for j in 0..m {
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a[j] >= lo - 1e-9 && a[j] <= hi + 1e-9);
        }
    }

    #[test]
    fn mae_complement_sums_to_one_on_binary_masks(
        map in prop::collection::vec(0.0f64..1.0, 25),
        gt in prop::collection::vec(any::<bool>(), 25),
    ) {
        let inv: Vec<f64> = map.iter().map(|m| 1.0 - m).collect();
        let a = coadnet::metrics::mae(&map, &gt).unwrap();
        let b = coadnet::metrics::mae(&inv, &gt).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn f_measure_is_invariant_to_threshold_preserving_rescaling(
        gt_bits in prop::collection::vec(any::<bool>(), 16),
    ) {
        // construct a map whose binarization provably survives the rescale:
        // positives at 0.9, negatives at 0.1, rescaled by x -> x/2 keeps
        // tau = min(2*mean, 1) strictly between the two levels in both maps
        prop_assume!(gt_bits.iter().any(|&t| t));
        let map: Vec<f64> = gt_bits.iter().map(|&t| if t { 0.9 } else { 0.1 }).collect();
        let half: Vec<f64> = map.iter().map(|m| m / 2.0).collect();
        let f1 = coadnet::metrics::f_measure(&map, &gt_bits).unwrap();
        let f2 = coadnet::metrics::f_measure(&half, &gt_bits).unwrap();
        prop_assert_eq!(f1, f2);
    }
}
