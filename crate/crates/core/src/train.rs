//! Training loop with sub-group batching and the auxiliary saliency stream,
//! plus model evaluation against the metrics suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{group_image_to_tensor, mask_to_tensor, ImageGroup};
use crate::error::{CoadError, Result};
use crate::metrics::{evaluate, MetricSample, MetricsReport};
use crate::model::{joint_loss, AblationFlags, CoadNet, ModelConfig};
use crate::optim::{adam_step, lr_at, AdamConfig};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub lr0: f64,
    pub halve_every: usize,
    pub max_iters: usize,
    pub weight_decay: f64,
    /// Batch-sampling seed (model init has its own seed).
    pub seed: u64,
    /// Sub-groups per iteration.
    pub cosal_batch: usize,
    /// Auxiliary single-image samples per iteration.
    pub aux_batch: usize,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// 0 disables progress logging.
    pub log_every: usize,
    /// Stop early once the loss falls below this value.
    pub stop_loss: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr0: 1e-4,
            halve_every: 500,
            max_iters: 2000,
            weight_decay: 5e-4,
            seed: 7,
            cosal_batch: 2,
            aux_batch: 8,
            checkpoint_every: 0,
            log_every: 0,
            stop_loss: None,
        }
    }
}

/// A dataset group converted to tensors at model input resolution.
pub struct TrainGroup<T: Scalar> {
    pub images: Vec<Tensor<T>>,
    pub cosal: Vec<Tensor<T>>,
    pub sal: Vec<Tensor<T>>,
}

pub fn to_train_group<T: Scalar>(g: &ImageGroup) -> TrainGroup<T> {
    let n = g.images.len();
    TrainGroup {
        images: (0..n).map(|i| group_image_to_tensor(g, i)).collect(),
        cosal: g
            .cosal_masks
            .iter()
            .map(|m| mask_to_tensor(m, g.size, g.size))
            .collect(),
        sal: g
            .sal_masks
            .iter()
            .map(|m| mask_to_tensor(m, g.size, g.size))
            .collect(),
    }
}

/// Divides `0..len` into non-overlapping chunks of `n`; a short last chunk
/// is padded by sampling (with replacement) from the whole group.
pub fn divide_into_subgroups(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    assert!(n >= 1 && len >= 1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + n).min(len);
        let mut chunk: Vec<usize> = (start..end).collect();
        while chunk.len() < n {
            chunk.push(rng.gen_range(0..len));
        }
        out.push(chunk);
        start = end;
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
}

/// Trains in place; `on_iter(iter, loss)` fires every iteration (logging,
/// periodic checkpointing). Deterministic given the settings seed.
pub fn train<T: Scalar, F: FnMut(usize, f64)>(
    model: &CoadNet<T>,
    dataset: &[TrainGroup<T>],
    settings: &TrainSettings,
    mut on_iter: F,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(CoadError::Data("training dataset is empty".into()));
    }
    let n = model.config.group_size;
    if n < 2 {
        return Err(CoadError::Config(
            "training requires a group size of at least 2".into(),
        ));
    }
    if settings.cosal_batch == 0 {
        return Err(CoadError::Config("train.cosal_batch must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    // fixed sub-group division, padded from the whole query group
    let mut subgroups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (gi, g) in dataset.iter().enumerate() {
        if g.images.is_empty() {
            return Err(CoadError::Data(format!("group {gi} has no images")));
        }
        for chunk in divide_into_subgroups(g.images.len(), n, &mut rng) {
            subgroups.push((gi, chunk));
        }
    }

    // auxiliary stream only exists when the guidance module is present
    let aux_per_iter = if model.config.ablation.use_oiasg {
        settings.aux_batch
    } else {
        0
    };
    let aux_pool: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| (0..g.images.len()).map(move |ii| (gi, ii)))
        .collect();

    let mut trace = Vec::with_capacity(settings.max_iters);
    let mut iterations = 0;
    for iter in 0..settings.max_iters {
        let mut maps = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..settings.cosal_batch {
            let (gi, chunk) = &subgroups[rng.gen_range(0..subgroups.len())];
            let group = &dataset[*gi];
            let images: Vec<Tensor<T>> = chunk.iter().map(|&i| group.images[i].clone()).collect();
            let fwd = model.forward_group(&images)?;
            for (slot, &i) in chunk.iter().enumerate() {
                maps.push(fwd.maps[slot].clone());
                targets.push(group.cosal[i].clone());
            }
        }

        let mut aux_maps = Vec::new();
        let mut aux_targets = Vec::new();
        for _ in 0..aux_per_iter {
            let (gi, ii) = aux_pool[rng.gen_range(0..aux_pool.len())];
            aux_maps.push(model.aux_forward(&dataset[gi].images[ii])?);
            aux_targets.push(dataset[gi].sal[ii].clone());
        }

        let loss = joint_loss(
            &maps,
            &targets,
            &aux_maps,
            &aux_targets,
            model.config.loss_alpha,
            model.config.loss_beta,
        )?;
        let loss_val = loss.item().as_f64();
        loss.backward()?;
        adam_step(
            model.parameters(),
            &AdamConfig {
                lr: lr_at(settings.lr0, settings.halve_every, iter),
                weight_decay: settings.weight_decay,
                ..AdamConfig::default()
            },
        );

        trace.push(loss_val);
        iterations = iter + 1;
        on_iter(iter, loss_val);
        if settings.stop_loss.is_some_and(|t| loss_val < t) {
            break;
        }
    }

    Ok(TrainOutcome {
        loss_trace: trace,
        iterations,
    })
}

/// Builds a model with the given ablation flags and trains it.
pub fn train_variant<T: Scalar>(
    base: ModelConfig,
    flags: AblationFlags,
    dataset: &[TrainGroup<T>],
    settings: &TrainSettings,
) -> Result<(CoadNet<T>, TrainOutcome)> {
    let config = ModelConfig {
        ablation: flags,
        ..base
    };
    let model = CoadNet::new(config)?;
    let outcome = train(&model, dataset, settings, |_, _| {})?;
    Ok((model, outcome))
}

/// Predicts per-image co-saliency maps for a whole group, dividing it into
/// sub-groups the same way training does. Padded duplicates are dropped;
/// each image keeps its first prediction.
pub fn predict_group<T: Scalar>(
    model: &CoadNet<T>,
    images: &[Tensor<T>],
    seed: u64,
) -> Result<Vec<Tensor<T>>> {
    let n = model.config.group_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Option<Tensor<T>>> = vec![None; images.len()];
    for chunk in divide_into_subgroups(images.len(), n, &mut rng) {
        let batch: Vec<Tensor<T>> = chunk.iter().map(|&i| images[i].clone()).collect();
        let fwd = model.forward_group(&batch)?;
        for (slot, &i) in chunk.iter().enumerate() {
            if out[i].is_none() {
                out[i] = Some(fwd.maps[slot].clone());
            }
        }
    }
    Ok(out.into_iter().map(|m| m.expect("all images predicted")).collect())
}

/// Runs the model over synthetic groups and scores predictions against the
/// co-saliency masks.
pub fn evaluate_on_groups<T: Scalar>(
    model: &CoadNet<T>,
    groups: &[ImageGroup],
) -> Result<MetricsReport> {
    let mut samples = Vec::new();
    for g in groups {
        let images: Vec<Tensor<T>> = (0..g.images.len())
            .map(|i| group_image_to_tensor::<T>(g, i))
            .collect();
        let maps = predict_group(model, &images, 0xE7A1)?;
        for (map, gt) in maps.iter().zip(&g.cosal_masks) {
            let vals: Vec<f64> = map.data().iter().map(|v| v.as_f64()).collect();
            samples.push(MetricSample::new(vals, gt.clone(), g.size, g.size)?);
        }
    }
    evaluate(&samples)
}
