//! `coad`: operator entry point for the co-salient object detection stack.
//!
//! Exit codes: 0 ok, 2 usage, 3 i/o, 4 configuration, 5 check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coadnet::checkpoint;
use coadnet::config::{read_model_and_train, read_synth_spec, FlatConfig};
use coadnet::dataio::{
    self, channel_mean_heatmap, generate, image_to_tensor, load_group, map_to_gray_u8,
    read_manifest, write_dataset, write_gray_png, ImageGroup,
};
use coadnet::error::CoadError;
use coadnet::gradcheck::run_model_suites;
use coadnet::metrics::{evaluate, MetricSample};
use coadnet::model::{AblationFlags, CoadNet, ModelConfig};
use coadnet::train::{
    predict_group, to_train_group, train, train_variant, TrainGroup, TrainSettings,
};
use coadnet::Tensor;

#[derive(Parser)]
#[command(name = "coad", version, about = "Co-salient object detection on synthetic image groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides `key=value` (flags win over the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed override (sets model.seed and train.seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic co-saliency dataset.
    GenData {
        /// Flat key=value spec file (synth.* keys).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint against a dataset with ground truth.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Predict co-saliency maps for one image-group directory.
    Infer {
        #[arg(long)]
        group: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and score the module ladder (baseline through full model).
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Semicolon-separated variants, each `+`-joined from
        /// {oiasg,gasa,ggd,gcpd}, or `baseline`/`full`. Default: the ladder.
        #[arg(long)]
        flags: Option<String>,
        /// Groups held out for scoring (taken from the end of the manifest).
        #[arg(long, default_value_t = 5)]
        holdout: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finite-difference gradient checks for every module composite.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Dump checkpoint contents; with a group, render feature heatmaps.
    Inspect {
        #[arg(long)]
        ckpt: PathBuf,
        /// Group directory for U/X channel-mean heatmaps.
        #[arg(long)]
        group: Option<PathBuf>,
        /// Output directory for heatmaps (default: alongside the group).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn exit_code_for(err: &CoadError) -> u8 {
    match err {
        CoadError::Io { .. } | CoadError::Image { .. } | CoadError::Data(_) => 3,
        CoadError::CheckpointBadMagic | CoadError::CheckpointTruncated { .. } => 3,
        CoadError::Config(_)
        | CoadError::AxisOutOfRange { .. }
        | CoadError::ShapeMismatch { .. }
        | CoadError::CheckpointBadVersion { .. }
        | CoadError::CheckpointMismatch { .. } => 4,
        CoadError::CheckFailure(_) => 5,
    }
}

fn main() -> ExitCode {
    // die quietly when stdout is closed mid-pipe (e.g. `coad inspect | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    coadnet::configure_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version on stdout with status 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(cfg: &ConfigArgs) -> coadnet::Result<(ModelConfig, TrainSettings)> {
    let mut fc = match &cfg.config {
        Some(path) => FlatConfig::from_file(path)?,
        None => FlatConfig::default(),
    };
    for kv in &cfg.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(CoadError::Config(format!(
                "--set expects key=value, got `{kv}`"
            )));
        };
        fc.set(k.trim(), v.trim());
    }
    if let Some(seed) = cfg.seed {
        fc.set("model.seed", seed);
        fc.set("train.seed", seed);
    }
    read_model_and_train(fc)
}

fn load_dataset_groups(data: &Path) -> coadnet::Result<Vec<ImageGroup>> {
    let dirs = read_manifest(data)?;
    let mut groups = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let loaded = load_group(&dir, true)?;
        let size = loaded.images[0].width;
        for img in &loaded.images {
            if img.width != size || img.height != size {
                return Err(CoadError::Data(format!(
                    "group {} mixes image sizes; training data must be uniform",
                    loaded.group_id
                )));
            }
        }
        let mut g = ImageGroup {
            group_id: loaded.group_id.clone(),
            size,
            images: loaded.images.iter().map(|i| i.rgb.clone()).collect(),
            cosal_masks: Vec::new(),
            sal_masks: Vec::new(),
            category: dataio::ALL_SHAPES[0],
            seed: 0,
        };
        for (i, m) in loaded.cosal.iter().enumerate() {
            let m = m.as_ref().ok_or_else(|| {
                CoadError::Data(format!("missing ground truth in group {}", g.group_id))
            })?;
            g.cosal_masks.push(m.mask.clone());
            match &loaded.sal[i] {
                Some(s) => g.sal_masks.push(s.mask.clone()),
                None => g.sal_masks.push(m.mask.clone()),
            }
        }
        groups.push(g);
    }
    Ok(groups)
}

fn build_model(
    config: ModelConfig,
    ckpt: &Path,
) -> coadnet::Result<CoadNet<f32>> {
    let model: CoadNet<f32> = CoadNet::new(config)?;
    checkpoint::load_file(ckpt, model.parameters())?;
    Ok(model)
}

fn run(cli: Cli) -> coadnet::Result<()> {
    match cli.command {
        Command::GenData { spec, out, seed } => {
            let mut fc = match spec {
                Some(path) => FlatConfig::from_file(&path)?,
                None => FlatConfig::default(),
            };
            if let Some(seed) = seed {
                fc.set("synth.seed", seed);
            }
            let spec = read_synth_spec(fc)?;
            let groups = generate(&spec)?;
            write_dataset(&groups, &out)?;
            println!(
                "wrote {} groups of {} images ({}x{}) to {}",
                groups.len(),
                spec.group_size,
                spec.canvas,
                spec.canvas,
                out.display()
            );
            Ok(())
        }

        Command::Train { data, out, cfg } => {
            let (config, settings) = load_config(&cfg)?;
            let groups = load_dataset_groups(&data)?;
            if let Some(g) = groups.iter().find(|g| g.size != config.backbone.input_size) {
                return Err(CoadError::Config(format!(
                    "dataset images are {}px but backbone.input_size is {}; regenerate or reconfigure",
                    g.size, config.backbone.input_size
                )));
            }
            let dataset: Vec<TrainGroup<f32>> = groups.iter().map(to_train_group).collect();
            let model: CoadNet<f32> = CoadNet::new(config)?;
            println!(
                "training {} parameters on {} groups ({})",
                model.parameter_count(),
                dataset.len(),
                config.ablation.label()
            );
            let every = if settings.log_every > 0 { settings.log_every } else { 50 };
            let ckpt_every = settings.checkpoint_every;
            let outcome = train(&model, &dataset, &settings, |iter, loss| {
                if iter % every == 0 {
                    println!("iter {iter:5}  loss {loss:.5}");
                }
                if ckpt_every > 0 && (iter + 1) % ckpt_every == 0 {
                    let snap = out.with_extension(format!("iter{}.ckpt", iter + 1));
                    if let Err(e) = checkpoint::save_file(&snap, model.parameters()) {
                        eprintln!("warning: checkpoint snapshot failed: {e}");
                    }
                }
            })?;
            checkpoint::save_file(&out, model.parameters())?;
            println!(
                "done: {} iterations, final loss {:.5}, checkpoint {}",
                outcome.iterations,
                outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }

        Command::Eval { data, ckpt, report, cfg } => {
            let (config, _) = load_config(&cfg)?;
            let model = build_model(config, &ckpt)?;
            let dirs = read_manifest(&data)?;
            let mut samples = Vec::new();
            for dir in dirs {
                let loaded = load_group(&dir, true)?;
                samples.extend(eval_loaded_group(&model, &loaded)?);
            }
            let rep = evaluate(&samples)?;
            print!("{}", rep.to_table());
            std::fs::write(&report, rep.to_tsv())
                .map_err(|e| CoadError::io(report.display().to_string(), e))?;
            let pr_path = report.with_extension("pr.csv");
            std::fs::write(&pr_path, rep.pr_to_csv())
                .map_err(|e| CoadError::io(pr_path.display().to_string(), e))?;
            println!("report: {} (+ {})", report.display(), pr_path.display());
            Ok(())
        }

        Command::Infer { group, ckpt, out, cfg } => {
            let (config, _) = load_config(&cfg)?;
            let model = build_model(config, &ckpt)?;
            let loaded = load_group(&group, false)?;
            let s = model.config.backbone.input_size;
            let inputs: Vec<Tensor<f32>> = loaded
                .images
                .iter()
                .map(|img| image_to_tensor::<f32>(img).bilinear_resize(s, s))
                .collect::<coadnet::Result<_>>()?;
            let maps = predict_group(&model, &inputs, 0xE7A1)?;
            for ((map, img), name) in maps.iter().zip(&loaded.images).zip(&loaded.names) {
                let restored = map.bilinear_resize(img.height, img.width)?;
                let (h, w, bytes) = map_to_gray_u8(&restored);
                let path = out.join(format!("{name}_pred.png"));
                write_gray_png(&path, h, w, &bytes)?;
            }
            println!("wrote {} maps to {}", maps.len(), out.display());
            Ok(())
        }

        Command::Ablate { data, flags, holdout, cfg } => {
            let (config, settings) = load_config(&cfg)?;
            let groups = load_dataset_groups(&data)?;
            if groups.len() <= holdout {
                return Err(CoadError::Config(format!(
                    "need more than {holdout} groups to hold out {holdout}"
                )));
            }
            let split = groups.len() - holdout;
            let train_groups: Vec<TrainGroup<f32>> =
                groups[..split].iter().map(to_train_group).collect();
            let eval_groups = &groups[split..];

            let variants: Vec<(String, AblationFlags)> = match flags {
                None => AblationFlags::ladder()
                    .into_iter()
                    .map(|(n, f)| (n.to_string(), f))
                    .collect(),
                Some(list) => parse_flag_combos(&list)?,
            };

            println!(
                "{:<16} {:>9} {:>9} {:>8} {:>8} {:>8}",
                "variant", "params", "loss", "F", "MAE", "S"
            );
            for (name, ablation) in variants {
                let (model, outcome) =
                    train_variant::<f32>(config, ablation, &train_groups, &settings)?;
                let rep = coadnet::train::evaluate_on_groups(&model, eval_groups)?;
                println!(
                    "{:<16} {:>9} {:>9.5} {:>8.4} {:>8.4} {:>8.4}",
                    name,
                    model.parameter_count(),
                    outcome.loss_trace.last().copied().unwrap_or(f64::NAN),
                    rep.f_measure,
                    rep.mae,
                    rep.s_measure
                );
            }
            Ok(())
        }

        Command::Gradcheck { seeds } => {
            let results = run_model_suites(seeds, 25)?;
            let mut failed = false;
            println!("{:<12} {:>5} {:>8} {:>10}  status", "module", "seed", "coords", "max-rel");
            for r in &results {
                let ok = r.report.passed();
                failed |= !ok;
                println!(
                    "{:<12} {:>5} {:>8} {:>10.2e}  {}",
                    r.name,
                    r.seed,
                    r.report.checked_coords,
                    r.report.max_rel,
                    if ok { "pass" } else { "FAIL" }
                );
                for f in r.report.failures.iter().take(3) {
                    eprintln!(
                        "  {}[{}]: analytic {:+.6e} vs numeric {:+.6e}",
                        f.param, f.coord, f.analytic, f.numeric
                    );
                }
            }
            if failed {
                return Err(CoadError::CheckFailure(
                    "finite-difference gradient checks failed".into(),
                ));
            }
            println!("all gradient checks passed");
            Ok(())
        }

        Command::Inspect { ckpt, group, out, cfg } => {
            let bytes = std::fs::read(&ckpt)
                .map_err(|e| CoadError::io(ckpt.display().to_string(), e))?;
            let entries = checkpoint::list_entries(&bytes)?;
            let total: usize = entries.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
            println!("{:<28} shape", "parameter");
            for (name, shape) in &entries {
                println!("{name:<28} {shape:?}");
            }
            println!("{} parameters, {} values", entries.len(), total);

            if let Some(group_dir) = group {
                let (config, _) = load_config(&cfg)?;
                let model = build_model(config, &ckpt)?;
                let loaded = load_group(&group_dir, false)?;
                let s = model.config.backbone.input_size;
                let inputs: Vec<Tensor<f32>> = loaded
                    .images
                    .iter()
                    .map(|img| image_to_tensor::<f32>(img).bilinear_resize(s, s))
                    .collect::<coadnet::Result<_>>()?;
                let n = model.config.group_size.min(inputs.len());
                let fwd = model.forward_group(&inputs[..n])?;
                let out_dir = out.unwrap_or_else(|| group_dir.join("heatmaps"));
                for (i, name) in loaded.names.iter().take(n).enumerate() {
                    let (h, w, bytes) = channel_mean_heatmap(&fwd.intra_features[i])?;
                    write_gray_png(&out_dir.join(format!("{name}_intra.png")), h, w, &bytes)?;
                    let (h, w, bytes) = channel_mean_heatmap(&fwd.cosal_features[i])?;
                    write_gray_png(&out_dir.join(format!("{name}_cosal.png")), h, w, &bytes)?;
                }
                println!("wrote heatmaps for {n} images to {}", out_dir.display());
            }
            Ok(())
        }
    }
}

/// Renders predictions for one loaded group into metric samples at the
/// ground-truth resolution.
fn eval_loaded_group(
    model: &CoadNet<f32>,
    loaded: &dataio::LoadedGroup,
) -> coadnet::Result<Vec<MetricSample>> {
    let s = model.config.backbone.input_size;
    let inputs: Vec<Tensor<f32>> = loaded
        .images
        .iter()
        .map(|img| image_to_tensor::<f32>(img).bilinear_resize(s, s))
        .collect::<coadnet::Result<_>>()?;
    let maps = predict_group(model, &inputs, 0xE7A1)?;
    let mut samples = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let gt = loaded.cosal[i].as_ref().ok_or_else(|| {
            CoadError::Data(format!("missing ground truth in group {}", loaded.group_id))
        })?;
        let restored = map.bilinear_resize(gt.height, gt.width)?;
        let vals: Vec<f64> = restored.data().iter().map(|v| *v as f64).collect();
        samples.push(MetricSample::new(
            vals,
            gt.mask.clone(),
            gt.height,
            gt.width,
        )?);
    }
    Ok(samples)
}

fn parse_flag_combos(list: &str) -> coadnet::Result<Vec<(String, AblationFlags)>> {
    let mut out = Vec::new();
    for combo in list.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let flags = match combo {
            "baseline" | "none" => AblationFlags::baseline(),
            "full" | "all" => AblationFlags::default(),
            other => {
                let mut f = AblationFlags::baseline();
                for part in other.split('+').map(str::trim) {
                    match part {
                        "oiasg" => f.use_oiasg = true,
                        "gasa" => f.use_gasa = true,
                        "ggd" => f.use_ggd = true,
                        "gcpd" => f.use_gcpd = true,
                        unknown => {
                            return Err(CoadError::Config(format!(
                                "unknown module `{unknown}` in --flags (expected oiasg, gasa, ggd, gcpd)"
                            )))
                        }
                    }
                }
                f
            }
        };
        out.push((combo.to_string(), flags));
    }
    if out.is_empty() {
        return Err(CoadError::Config("--flags produced no variants".into()));
    }
    Ok(out)
}
