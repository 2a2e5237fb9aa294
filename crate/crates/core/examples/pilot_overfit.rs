// Scratch driver for sizing the single-group overfit run.

use coadnet::dataio::{generate, SynthSpec};
use coadnet::model::{CoadNet, ModelConfig};
use coadnet::train::{evaluate_on_groups, to_train_group, train, TrainGroup, TrainSettings};
use std::time::Instant;

fn main() {
    coadnet::configure_threads_from_env();
    let spec = SynthSpec {
        canvas: 64,
        n_groups: 1,
        group_size: 5,
        seed: 2024,
        ..SynthSpec::default()
    };
    let groups = generate(&spec).unwrap();
    let dataset: Vec<TrainGroup<f32>> = groups.iter().map(to_train_group).collect();

    let model: CoadNet<f32> = CoadNet::new(ModelConfig::default()).unwrap();
    let t0 = Instant::now();
    for round in 0..6 {
        let settings = TrainSettings {
            lr0: 1e-3,
            halve_every: 500,
            max_iters: 100,
            cosal_batch: 1,
            aux_batch: 4,
            stop_loss: None,
            ..TrainSettings::default()
        };
        let outcome = train(&model, &dataset, &settings, |_, _| {}).unwrap();
        let report = evaluate_on_groups(&model, &groups).unwrap();
        println!
            ("after {:4} iters: loss {:.5}  F {:.4}  maxF {:.4}  MAE {:.4}  S {:.4}  ({:.0}s)",
            (round + 1) * 100,
            outcome.loss_trace.last().unwrap(),
            report.f_measure,
            report.f_max,
            report.mae,
            report.s_measure,
            t0.elapsed().as_secs_f64()
        );
    }
}
