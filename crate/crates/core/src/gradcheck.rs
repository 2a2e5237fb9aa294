//! Central finite-difference verification of the analytic gradients.
//!
//! Runs in double precision only; single-precision finite differences are
//! too noisy to separate implementation bugs from roundoff.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::Param;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Cap on checked coordinates per parameter tensor; 0 checks all.
    pub max_coords_per_tensor: usize,
    pub sample_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-4,
            rtol: 1e-3,
            atol: 1e-6,
            max_coords_per_tensor: 0,
            sample_seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckFailure {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Default)]
pub struct GradCheckReport {
    pub checked_coords: usize,
    pub max_rel: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares the analytic gradient of `forward`'s scalar output against
/// central finite differences for every (or a sampled subset of) parameter
/// coordinate. `forward` must be a pure function of the parameter values.
pub fn check_gradients<F>(
    params: &[Param<f64>],
    forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in params {
        p.tensor().zero_grad();
    }
    let loss = forward()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.tensor().grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    for p in params {
        p.tensor().zero_grad();
    }

    let mut report = GradCheckReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sample_seed);
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> =
            if opts.max_coords_per_tensor == 0 || n <= opts.max_coords_per_tensor {
                (0..n).collect()
            } else {
                let mut picked = std::collections::BTreeSet::new();
                while picked.len() < opts.max_coords_per_tensor {
                    picked.insert(rng.gen_range(0..n));
                }
                picked.into_iter().collect()
            };
        for i in coords {
            let a = analytic[pi][i];
            report.checked_coords += 1;
            // A coordinate whose +-h interval straddles a relu kink or a
            // max-pool argmax flip disagrees by the (h-independent) slope
            // gap, while a wrong gradient disagrees at every step size.
            // Refining the step moves the interval off the kink, so only
            // coordinates that fail at h, h/10 and h/100 count as failures.
            let mut last_numeric = 0.0;
            let mut ok = false;
            for refine in 0..3 {
                let h = opts.h / 10f64.powi(refine);
                let orig = p.tensor().data()[i];
                p.tensor().data_mut()[i] = orig + h;
                let plus = forward()?.item();
                p.tensor().data_mut()[i] = orig - h;
                let minus = forward()?.item();
                p.tensor().data_mut()[i] = orig;

                let numeric = (plus - minus) / (2.0 * h);
                last_numeric = numeric;
                let diff = (a - numeric).abs();
                let scale = a.abs().max(numeric.abs());
                if diff <= opts.atol + opts.rtol * scale {
                    if refine == 0 && scale > 10.0 * opts.atol {
                        report.max_rel = report.max_rel.max(diff / scale);
                    }
                    ok = true;
                    break;
                }
            }
            if !ok {
                report.failures.push(GradCheckFailure {
                    param: p.name().to_string(),
                    coord: i,
                    analytic: a,
                    numeric: last_numeric,
                });
            }
        }
    }
    for p in params {
        p.tensor().zero_grad();
    }
    Ok(report)
}

pub struct SuiteResult {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Finite-difference suites for every module composite plus the joint-loss
/// path, at tiny shapes (N=2, C=8, H=W=4; decoder at C=16, H=W=2). The
/// joint-loss path samples coordinates per tensor; module composites check
/// every coordinate.
pub fn run_model_suites(n_seeds: u64, loss_coords_per_tensor: usize) -> Result<Vec<SuiteResult>> {
    use crate::backbone::BackboneConfig;
    use crate::gasa::Gasa;
    use crate::gcpd::Gcpd;
    use crate::ggd::Ggd;
    use crate::model::{joint_loss, CoadNet, ModelConfig};
    use crate::nn::Init;
    use crate::oiasg::Oiasg;

    let mut out = Vec::new();
    let exhaustive = GradCheckOptions::default();

    fn rand_param(rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Result<Param<f64>> {
        use crate::nn::Parameter;
        let n: usize = shape.iter().product();
        Parameter::new(name, shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }
    fn probe(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    for seed in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0AD + seed);

        // intra-saliency guidance composite
        {
            let mut init = Init::new(seed * 31 + 1);
            let module: Oiasg<f64> = Oiasg::new(8, &mut init)?;
            let f = rand_param(&mut rng, "input.f", &[8, 4, 4])?;
            let mut params = vec![f.clone()];
            module.collect_params(&mut params);
            let r = probe(&mut rng, &[8, 4, 4]);
            let report = check_gradients(
                &params,
                || {
                    let o = module.forward(f.tensor())?;
                    Ok(o.u.mul(&r)?.sum_all())
                },
                &exhaustive,
            )?;
            out.push(SuiteResult {
                name: "oiasg",
                seed,
                report,
            });
        }

        // group aggregation composite
        {
            let mut init = Init::new(seed * 31 + 2);
            let module: Gasa<f64> = Gasa::new(8, 2, &mut init)?;
            let u0 = rand_param(&mut rng, "input.u0", &[8, 4, 4])?;
            let u1 = rand_param(&mut rng, "input.u1", &[8, 4, 4])?;
            let mut params = vec![u0.clone(), u1.clone()];
            module.collect_params(&mut params);
            let r = probe(&mut rng, &[8, 4, 4]);
            let report = check_gradients(
                &params,
                || {
                    let g = module.forward(&[u0.tensor().clone(), u1.tensor().clone()])?;
                    Ok(g.mul(&r)?.sum_all())
                },
                &exhaustive,
            )?;
            out.push(SuiteResult {
                name: "gasa",
                seed,
                report,
            });
        }

        // gated distribution composite
        {
            let mut init = Init::new(seed * 31 + 3);
            let module: Ggd<f64> = Ggd::new(8, 4, &mut init)?;
            let u = rand_param(&mut rng, "input.u", &[8, 4, 4])?;
            let g = rand_param(&mut rng, "input.g", &[8, 4, 4])?;
            let mut params = vec![u.clone(), g.clone()];
            module.collect_params(&mut params);
            let r = probe(&mut rng, &[8, 4, 4]);
            let report = check_gradients(
                &params,
                || {
                    let state = module.forward(u.tensor(), g.tensor())?;
                    Ok(state.x.mul(&r)?.sum_all())
                },
                &exhaustive,
            )?;
            out.push(SuiteResult {
                name: "ggd",
                seed,
                report,
            });
        }

        // decoder composite
        {
            let mut init = Init::new(seed * 31 + 4);
            let module: Gcpd<f64> = Gcpd::new(16, &mut init)?;
            let x0 = rand_param(&mut rng, "input.x0", &[16, 2, 2])?;
            let x1 = rand_param(&mut rng, "input.x1", &[16, 2, 2])?;
            let mut params = vec![x0.clone(), x1.clone()];
            module.collect_params(&mut params);
            let r0 = probe(&mut rng, &[2, 16, 16]);
            let r1 = probe(&mut rng, &[2, 16, 16]);
            let report = check_gradients(
                &params,
                || {
                    let zs = module.forward(&[x0.tensor().clone(), x1.tensor().clone()])?;
                    zs[0].mul(&r0)?.sum_all().add(&zs[1].mul(&r1)?.sum_all())
                },
                &exhaustive,
            )?;
            out.push(SuiteResult {
                name: "gcpd",
                seed,
                report,
            });
        }

        // whole pipeline through the joint objective
        {
            let config = ModelConfig {
                backbone: BackboneConfig {
                    input_size: 32,
                    stem_channels: 2,
                    out_channels: 8,
                },
                blocks: 2,
                group_size: 2,
                seed: seed * 31 + 5,
                ..ModelConfig::default()
            };
            let model: CoadNet<f64> = CoadNet::new(config)?;
            let mk_img = |rng: &mut ChaCha8Rng| {
                Tensor::new(
                    &[3, 32, 32],
                    (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
                .unwrap()
            };
            let mk_mask = |rng: &mut ChaCha8Rng| {
                Tensor::new(
                    &[1, 32, 32],
                    (0..32 * 32)
                        .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
                        .collect(),
                )
                .unwrap()
            };
            let images = vec![mk_img(&mut rng), mk_img(&mut rng)];
            let masks = vec![mk_mask(&mut rng), mk_mask(&mut rng)];
            let aux_img = mk_img(&mut rng);
            let aux_mask = mk_mask(&mut rng);
            // the deep composition needs a smaller step: at h=1e-4 the
            // O(h^2 f''') truncation error and relu kink crossings exceed
            // the 1e-3 relative tolerance on a few coordinates
            let opts = GradCheckOptions {
                h: 1e-5,
                max_coords_per_tensor: loss_coords_per_tensor,
                sample_seed: seed,
                ..GradCheckOptions::default()
            };
            let report = check_gradients(
                model.parameters(),
                || {
                    let fwd = model.forward_group(&images)?;
                    let aux = model.aux_forward(&aux_img)?;
                    joint_loss(
                        &fwd.maps,
                        &masks,
                        &[aux.clone()],
                        std::slice::from_ref(&aux_mask),
                        0.7,
                        0.3,
                    )
                },
                &opts,
            )?;
            out.push(SuiteResult {
                name: "joint-loss",
                seed,
                report,
            });
        }
    }
    Ok(out)
}
