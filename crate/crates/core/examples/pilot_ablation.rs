// Scratch driver for sizing the ablation-ordering run.

use coadnet::dataio::{generate, SynthSpec};
use coadnet::model::{AblationFlags, ModelConfig};
use coadnet::train::{evaluate_on_groups, to_train_group, train_variant, TrainGroup, TrainSettings};
use std::time::Instant;

fn main() {
    coadnet::configure_threads_from_env();
    let t0 = Instant::now();
    let spec = SynthSpec {
        canvas: 64,
        n_groups: 250,
        group_size: 5,
        seed: 515,
        ..SynthSpec::default()
    };
    let groups = generate(&spec).unwrap();
    let (train_raw, eval_raw) = groups.split_at(200);
    let dataset: Vec<TrainGroup<f32>> = train_raw.iter().map(to_train_group).collect();
    println!("data ready at {:.0}s", t0.elapsed().as_secs_f64());

    let settings = TrainSettings {
        lr0: 1e-3,
        halve_every: 500,
        max_iters: 500,
        cosal_batch: 2,
        aux_batch: 8,
        ..TrainSettings::default()
    };
    for (name, flags) in [
        ("full", AblationFlags::default()),
        ("baseline", AblationFlags::baseline()),
    ] {
        let t1 = Instant::now();
        let (model, outcome) =
            train_variant::<f32>(ModelConfig::default(), flags, &dataset, &settings).unwrap();
        let train_secs = t1.elapsed().as_secs_f64();
        let rep = evaluate_on_groups(&model, eval_raw).unwrap();
        println!(
            "{name:<9} params={} loss={:.4} F={:.4} maxF={:.4} MAE={:.4} S={:.4}  train {:.0}s eval {:.0}s",
            model.parameter_count(),
            outcome.loss_trace.last().unwrap(),
            rep.f_measure,
            rep.f_max,
            rep.mae,
            rep.s_measure,
            train_secs,
            t1.elapsed().as_secs_f64() - train_secs
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
