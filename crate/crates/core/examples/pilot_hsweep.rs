// Scratch: finite-difference step-size sweep on the joint-loss composite.

use coadnet::backbone::BackboneConfig;
use coadnet::gradcheck::{check_gradients, GradCheckOptions};
use coadnet::model::{joint_loss, CoadNet, ModelConfig};
use coadnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let config = ModelConfig {
        backbone: BackboneConfig { input_size: 32, stem_channels: 2, out_channels: 8 },
        blocks: 2,
        group_size: 2,
        seed: 5,
        ..ModelConfig::default()
    };
    let model: CoadNet<f64> = CoadNet::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0AD);
    let mut img = || {
        Tensor::new(&[3, 32, 32], (0..3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    };
    let images = vec![img(), img()];
    let aux_img = img();
    let mut rng2 = ChaCha8Rng::seed_from_u64(99);
    let mut mask = || {
        Tensor::new(&[1, 32, 32], (0..1024).map(|_| if rng2.gen_bool(0.3) { 1.0 } else { 0.0 }).collect()).unwrap()
    };
    let masks = vec![mask(), mask()];
    let aux_mask = mask();

    for h in [1e-4, 1e-5, 1e-6] {
        let opts = GradCheckOptions { h, max_coords_per_tensor: 25, sample_seed: 0, ..GradCheckOptions::default() };
        let report = check_gradients(
            model.parameters(),
            || {
                let fwd = model.forward_group(&images)?;
                let aux = model.aux_forward(&aux_img)?;
                joint_loss(&fwd.maps, &masks, &[aux.clone()], std::slice::from_ref(&aux_mask), 0.7, 0.3)
            },
            &opts,
        )
        .unwrap();
        println!("h={h:.0e}: coords={} failures={} max_rel={:.3e}", report.checked_coords, report.failures.len(), report.max_rel);
        for f in report.failures.iter().take(3) {
            println!("   {}[{}]: {:.6e} vs {:.6e}", f.param, f.coord, f.analytic, f.numeric);
        }
    }
}
