//! Saliency evaluation suite: MAE, adaptive-threshold F-measure, P-R curve
//! and the structure measure (object + region similarity).

use crate::error::{CoadError, Result};

pub const F_BETA_SQ: f64 = 0.3;
pub const PR_LEVELS: usize = 256;
const S_ALPHA: f64 = 0.5;

/// One evaluated image: a continuous map in [0,1] and a binary mask, both
/// row-major at the same extents.
pub struct MetricSample {
    pub map: Vec<f64>,
    pub gt: Vec<bool>,
    pub height: usize,
    pub width: usize,
}

impl MetricSample {
    pub fn new(map: Vec<f64>, gt: Vec<bool>, height: usize, width: usize) -> Result<Self> {
        if map.len() != height * width || gt.len() != height * width {
            return Err(CoadError::ShapeMismatch {
                op: "metrics",
                detail: format!(
                    "map {} / gt {} vs extents {height}x{width}",
                    map.len(),
                    gt.len()
                ),
            });
        }
        Ok(MetricSample {
            map,
            gt,
            height,
            width,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Adaptive-threshold F-measure (beta^2 = 0.3), averaged over images.
    pub f_measure: f64,
    /// Best F over the aggregated P-R curve, for comparison.
    pub f_max: f64,
    pub mae: f64,
    pub s_measure: f64,
    /// 256 (precision, recall) pairs, threshold ascending 0..=255 / 255.
    pub pr_curve: Vec<(f64, f64)>,
    pub n_images: usize,
    /// Images excluded from F / P-R because their ground truth was empty.
    pub skipped_empty_gt: usize,
}

/// Mean absolute difference between a continuous map and a binary mask.
pub fn mae(map: &[f64], gt: &[bool]) -> Result<f64> {
    if map.len() != gt.len() || map.is_empty() {
        return Err(CoadError::ShapeMismatch {
            op: "mae",
            detail: format!("{} vs {}", map.len(), gt.len()),
        });
    }
    let sum: f64 = map
        .iter()
        .zip(gt)
        .map(|(&m, &t)| (m - if t { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / map.len() as f64)
}

fn f_beta(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        return 0.0;
    }
    (1.0 + F_BETA_SQ) * precision * recall / (F_BETA_SQ * precision + recall)
}

fn counts_at(map: &[f64], gt: &[bool], threshold: f64) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&m, &t) in map.iter().zip(gt) {
        let pred = m >= threshold;
        match (pred, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    (tp, fp, fn_)
}

fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    (precision, recall)
}

/// F-measure after binarizing at the adaptive threshold
/// `min(2 * mean(map), 1)`. `None` when the ground truth has no positives.
pub fn f_measure(map: &[f64], gt: &[bool]) -> Result<Option<f64>> {
    if map.len() != gt.len() || map.is_empty() {
        return Err(CoadError::ShapeMismatch {
            op: "f_measure",
            detail: format!("{} vs {}", map.len(), gt.len()),
        });
    }
    if !gt.iter().any(|&t| t) {
        return Ok(None);
    }
    let mean: f64 = map.iter().sum::<f64>() / map.len() as f64;
    let tau = (2.0 * mean).min(1.0);
    let (tp, fp, fn_) = counts_at(map, gt, tau);
    if tp + fp == 0 {
        return Ok(Some(0.0));
    }
    let (p, r) = precision_recall(tp, fp, fn_);
    Ok(Some(f_beta(p, r)))
}

/// Per-threshold precision/recall at 256 levels, averaged over all images
/// with nonempty ground truth. Recall is nonincreasing in the threshold.
pub fn pr_curve(samples: &[MetricSample]) -> Result<Vec<(f64, f64)>> {
    let usable: Vec<&MetricSample> = samples
        .iter()
        .filter(|s| s.gt.iter().any(|&t| t))
        .collect();
    if usable.is_empty() {
        return Err(CoadError::Data(
            "P-R curve needs at least one image with positive ground truth".into(),
        ));
    }
    let mut out = Vec::with_capacity(PR_LEVELS);
    for level in 0..PR_LEVELS {
        let tau = level as f64 / (PR_LEVELS - 1) as f64;
        let mut p_acc = 0.0;
        let mut r_acc = 0.0;
        for s in &usable {
            let (tp, fp, fn_) = counts_at(&s.map, &s.gt, tau);
            let (p, r) = precision_recall(tp, fp, fn_);
            p_acc += p;
            r_acc += r;
        }
        out.push((p_acc / usable.len() as f64, r_acc / usable.len() as f64));
    }
    Ok(out)
}

fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len() as f64;
    let eps = f64::EPSILON;
    let x: f64 = pred.iter().sum::<f64>() / n;
    let y: f64 = gt.iter().sum::<f64>() / n;
    let sigma_x: f64 = pred.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1.0 + eps);
    let sigma_y: f64 = gt.iter().map(|v| (v - y) * (v - y)).sum::<f64>() / (n - 1.0 + eps);
    let sigma_xy: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (p - x) * (g - y))
        .sum::<f64>()
        / (n - 1.0 + eps);
    let alpha = 4.0 * x * y * sigma_xy;
    let beta = (x * x + y * y) * (sigma_x + sigma_y);
    if alpha != 0.0 {
        alpha / (beta + eps)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn object_score(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean: f64 = values.iter().sum::<f64>() / n;
    let sigma = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + sigma + f64::EPSILON)
}

fn s_object(map: &[f64], gt: &[bool]) -> f64 {
    let fg: Vec<f64> = map
        .iter()
        .zip(gt)
        .filter(|(_, &t)| t)
        .map(|(&m, _)| m)
        .collect();
    let bg: Vec<f64> = map
        .iter()
        .zip(gt)
        .filter(|(_, &t)| !t)
        .map(|(&m, _)| 1.0 - m)
        .collect();
    let u = gt.iter().filter(|&&t| t).count() as f64 / gt.len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Foreground centroid (1-based, rounded), canvas center for empty masks.
fn centroid(gt: &[bool], h: usize, w: usize) -> (usize, usize) {
    let total: usize = gt.iter().filter(|&&t| t).count();
    if total == 0 {
        return ((w as f64 / 2.0).round() as usize, (h as f64 / 2.0).round() as usize);
    }
    let mut sx = 0usize;
    let mut sy = 0usize;
    for y in 0..h {
        for x in 0..w {
            if gt[y * w + x] {
                sx += x + 1;
                sy += y + 1;
            }
        }
    }
    (
        (sx as f64 / total as f64).round() as usize,
        (sy as f64 / total as f64).round() as usize,
    )
}

fn quadrant<T: Copy>(data: &[T], h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Vec<T> {
    let _ = h;
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for y in rows {
        for x in cols.clone() {
            out.push(data[y * w + x]);
        }
    }
    out
}

fn s_region(map: &[f64], gt: &[bool], h: usize, w: usize) -> f64 {
    let (cx, cy) = centroid(gt, h, w);
    let gt_f: Vec<f64> = gt.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let area = (h * w) as f64;
    // (rows, cols, weight) per quadrant around the centroid
    let parts: [(std::ops::Range<usize>, std::ops::Range<usize>); 4] = [
        (0..cy, 0..cx),
        (0..cy, cx..w),
        (cy..h, 0..cx),
        (cy..h, cx..w),
    ];
    let mut score = 0.0;
    for (rows, cols) in parts {
        let n = rows.len() * cols.len();
        if n == 0 {
            continue;
        }
        let weight = n as f64 / area;
        let p = quadrant(map, h, w, rows.clone(), cols.clone());
        let g = quadrant(&gt_f, h, w, rows, cols);
        score += weight * region_ssim(&p, &g);
    }
    score
}

/// Structure measure `0.5 * S_object + 0.5 * S_region`, with the standard
/// special cases for empty and full masks; clamped to [0,1].
pub fn s_measure(map: &[f64], gt: &[bool], h: usize, w: usize) -> Result<f64> {
    if map.len() != h * w || gt.len() != h * w {
        return Err(CoadError::ShapeMismatch {
            op: "s_measure",
            detail: format!("{} / {} vs {h}x{w}", map.len(), gt.len()),
        });
    }
    let y: f64 = gt.iter().filter(|&&t| t).count() as f64 / gt.len() as f64;
    let mean_map: f64 = map.iter().sum::<f64>() / map.len() as f64;
    let q = if y == 0.0 {
        1.0 - mean_map
    } else if y == 1.0 {
        mean_map
    } else {
        S_ALPHA * s_object(map, gt) + (1.0 - S_ALPHA) * s_region(map, gt, h, w)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Aggregate per-image metrics into a report; images with empty ground
/// truth are excluded from F / P-R and counted.
pub fn evaluate(samples: &[MetricSample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(CoadError::Data("no samples to evaluate".into()));
    }
    let mut mae_acc = 0.0;
    let mut s_acc = 0.0;
    let mut f_acc = 0.0;
    let mut f_count = 0usize;
    let mut skipped = 0usize;
    for s in samples {
        mae_acc += mae(&s.map, &s.gt)?;
        s_acc += s_measure(&s.map, &s.gt, s.height, s.width)?;
        match f_measure(&s.map, &s.gt)? {
            Some(f) => {
                f_acc += f;
                f_count += 1;
            }
            None => skipped += 1,
        }
    }
    let pr = pr_curve(samples)?;
    let f_max = pr
        .iter()
        .map(|&(p, r)| f_beta(p, r))
        .fold(0.0f64, f64::max);
    Ok(MetricsReport {
        f_measure: if f_count > 0 { f_acc / f_count as f64 } else { 0.0 },
        f_max,
        mae: mae_acc / samples.len() as f64,
        s_measure: s_acc / samples.len() as f64,
        pr_curve: pr,
        n_images: samples.len(),
        skipped_empty_gt: skipped,
    })
}

impl MetricsReport {
    /// Machine-readable lines: `name<TAB>value`.
    pub fn to_tsv(&self) -> String {
        format!(
            "f_measure\t{:.6}\nf_max\t{:.6}\nmae\t{:.6}\ns_measure\t{:.6}\nn_images\t{}\nskipped_empty_gt\t{}\n",
            self.f_measure, self.f_max, self.mae, self.s_measure, self.n_images, self.skipped_empty_gt
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("metric       value\n");
        s.push_str("-----------  --------\n");
        s.push_str(&format!("F-measure    {:.4}\n", self.f_measure));
        s.push_str(&format!("max F        {:.4}\n", self.f_max));
        s.push_str(&format!("MAE          {:.4}\n", self.mae));
        s.push_str(&format!("S-measure    {:.4}\n", self.s_measure));
        s.push_str(&format!("images       {}\n", self.n_images));
        if self.skipped_empty_gt > 0 {
            s.push_str(&format!(
                "warning: {} image(s) with empty ground truth excluded from F/P-R\n",
                self.skipped_empty_gt
            ));
        }
        s
    }

    /// 256-line CSV `threshold,precision,recall`.
    pub fn pr_to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for (i, (p, r)) in self.pr_curve.iter().enumerate() {
            s.push_str(&format!(
                "{:.6},{:.6},{:.6}\n",
                i as f64 / (PR_LEVELS - 1) as f64,
                p,
                r
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_hand_cases() {
        assert_eq!(mae(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        let m = mae(&[1.0, 0.0, 0.5, 0.0], &[true, false, false, false]).unwrap();
        assert!((m - 0.125).abs() < 1e-12);
        let gt = [true, false, true, false];
        let half = mae(&[0.5; 4], &gt).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mae_complement_identity_for_binary_gt() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gt: Vec<bool> = (0..32).map(|_| rng.gen_bool(0.4)).collect();
        let inv: Vec<f64> = map.iter().map(|m| 1.0 - m).collect();
        let total = mae(&map, &gt).unwrap() + mae(&inv, &gt).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_measure_hand_cases() {
        // perfect binary prediction
        let gt = [true, true, false, false];
        let f = f_measure(&[1.0, 1.0, 0.0, 0.0], &gt).unwrap().unwrap();
        assert!((f - 1.0).abs() < 1e-12);

        // all-ones prediction over half-covering gt: P = 0.5, R = 1
        let f = f_measure(&[1.0; 4], &gt).unwrap().unwrap();
        assert!((f - 1.3 * 0.5 / (0.3 * 0.5 + 1.0)).abs() < 1e-12);
        assert!((f - 0.5652173913043478).abs() < 1e-10);

        // uniform low map thresholds to empty prediction
        let f = f_measure(&[0.3; 4], &gt).unwrap().unwrap();
        assert_eq!(f, 0.0);

        // empty gt is excluded, not scored
        assert!(f_measure(&[0.5; 4], &[false; 4]).unwrap().is_none());
    }

    #[test]
    fn pr_curve_boundary_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<MetricSample> = (0..3)
            .map(|_| {
                let map: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
                let gt: Vec<bool> = (0..16).map(|_| rng.gen_bool(0.5)).collect();
                MetricSample::new(map, gt, 4, 4).unwrap()
            })
            .collect();
        let curve = pr_curve(&samples).unwrap();
        assert_eq!(curve.len(), 256);
        assert_eq!(curve[0].1, 1.0); // threshold 0 binarizes everything positive
        for w in curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-12, "recall increased");
        }
    }

    #[test]
    fn pr_matches_counting_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let map: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
        let gt: Vec<bool> = (0..16).map(|_| rng.gen_bool(0.5)).collect();
        let samples = vec![MetricSample::new(map.clone(), gt.clone(), 4, 4).unwrap()];
        let curve = pr_curve(&samples).unwrap();
        for (level, &(p, r)) in curve.iter().enumerate() {
            let tau = level as f64 / 255.0;
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (m, t) in map.iter().zip(&gt) {
                let pred = *m >= tau;
                if pred && *t {
                    tp += 1.0;
                } else if pred {
                    fp += 1.0;
                } else if *t {
                    fn_ += 1.0;
                }
            }
            let expect_p = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
            let expect_r = tp / (tp + fn_);
            assert_eq!(p, expect_p);
            assert_eq!(r, expect_r);
        }
    }

    #[test]
    fn s_measure_self_similarity_and_ordering() {
        let gt: Vec<bool> = (0..64).map(|i| (i / 8 + i % 8) % 3 == 0).collect();
        let map: Vec<f64> = gt.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let perfect = s_measure(&map, &gt, 8, 8).unwrap();
        assert!((perfect - 1.0).abs() < 1e-6);

        let inverted: Vec<f64> = map.iter().map(|m| 1.0 - m).collect();
        let bad = s_measure(&inverted, &gt, 8, 8).unwrap();
        assert!(bad < perfect);
    }

    #[test]
    fn s_measure_special_cases() {
        // empty mask: 1 - mean(map); full mask: mean(map)
        let map = vec![0.25; 16];
        assert!((s_measure(&map, &[false; 16], 4, 4).unwrap() - 0.75).abs() < 1e-12);
        assert!((s_measure(&map, &[true; 16], 4, 4).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn report_serializations_have_expected_shape() {
        let gt: Vec<bool> = (0..16).map(|i| i % 4 == 0).collect();
        let map: Vec<f64> = gt.iter().map(|&t| if t { 0.9 } else { 0.05 }).collect();
        let report = evaluate(&[MetricSample::new(map, gt, 4, 4).unwrap()]).unwrap();
        assert!(report.f_measure > 0.9);
        assert!(report.mae < 0.2);
        let tsv = report.to_tsv();
        assert!(tsv.contains("f_measure\t"));
        assert_eq!(report.pr_to_csv().lines().count(), 257);
        for &(p, r) in &report.pr_curve {
            assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
        }
    }
}
