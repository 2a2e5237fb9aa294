// Scratch: bisect the joint-loss finite-difference mismatch at seed 3.

use coadnet::backbone::BackboneConfig;
use coadnet::model::{joint_loss, CoadNet, ModelConfig};
use coadnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let seed = 3u64;
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
    let model: CoadNet<f64> = CoadNet::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0AD + seed);
    // replicate the suite's rng consumption by the four module composites
    for _ in 0..2176 {
        let _: f64 = rng.gen_range(-1.0..1.0);
    }
    fn mk_img(rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(
            &[3, 32, 32],
            (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }
    fn mk_mask(rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::new(
            &[1, 32, 32],
            (0..1024)
                .map(|_| if rng.gen_bool(0.3) { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap()
    }
    let images = vec![mk_img(&mut rng), mk_img(&mut rng)];
    let masks = vec![mk_mask(&mut rng), mk_mask(&mut rng)];
    let aux_img = mk_img(&mut rng);
    let aux_mask = mk_mask(&mut rng);

    let param = model
        .parameters()
        .iter()
        .find(|p| p.name() == "backbone.stage1.conv.bias")
        .unwrap()
        .clone();

    let probe = Tensor::new(&[1, 32, 32], (0..1024).map(|i| ((i * 37) % 101) as f64 / 101.0 - 0.5).collect()).unwrap();

    type LossFn<'a> = Box<dyn Fn() -> coadnet::Result<Tensor<f64>> + 'a>;
    let losses: Vec<(&str, LossFn)> = vec![
        (
            "maps-sum",
            Box::new(|| {
                let fwd = model.forward_group(&images)?;
                let mut acc = fwd.maps[0].mul(&probe)?.sum_all();
                acc = acc.add(&fwd.maps[1].mul(&probe)?.sum_all())?;
                Ok(acc)
            }),
        ),
        (
            "aux-only",
            Box::new(|| {
                let aux = model.aux_forward(&aux_img)?;
                Ok(aux.mul(&probe)?.sum_all())
            }),
        ),
        (
            "joint",
            Box::new(|| {
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
            }),
        ),
    ];

    for (name, f) in &losses {
        param.tensor().zero_grad();
        for p in model.parameters() {
            p.tensor().zero_grad();
        }
        let loss = f().unwrap();
        loss.backward().unwrap();
        let g = param.tensor().grad().unwrap();
        for coord in [0usize, 3] {
            print!("{name:<10} bias[{coord}] analytic {:+.9e}  fd:", g[coord]);
            for h in [1e-4, 1e-5, 1e-6, 1e-7] {
                let orig = param.tensor().data()[coord];
                let mut d = param.tensor().to_vec();
                d[coord] = orig + h;
                param.tensor().set_data(&d);
                let plus = f().unwrap().item();
                d[coord] = orig - h;
                param.tensor().set_data(&d);
                let minus = f().unwrap().item();
                d[coord] = orig;
                param.tensor().set_data(&d);
                print!(" {:+.9e}", (plus - minus) / (2.0 * h));
            }
            println!();
        }
    }
}
