//! Flat `key=value` configuration files (namespaced keys, `#` comments).

use std::collections::BTreeMap;
use std::path::Path;

use crate::backbone::BackboneConfig;
use crate::dataio::SynthSpec;
use crate::error::{CoadError, Result};
use crate::model::{AblationFlags, ModelConfig};
use crate::train::TrainSettings;

/// Parsed key=value pairs; readers *take* keys so leftovers can be reported
/// as unknown-key errors.
#[derive(Debug, Default, Clone)]
pub struct FlatConfig {
    map: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CoadError::Config(format!(
                    "line {}: expected key=value, got `{raw}`",
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(FlatConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoadError::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Command-line overrides: flags win over file values.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse_with<V, F: FnOnce(&str) -> Option<V>>(
        &mut self,
        key: &str,
        default: V,
        f: F,
    ) -> Result<V> {
        match self.take(key) {
            None => Ok(default),
            Some(raw) => f(&raw).ok_or_else(|| {
                CoadError::Config(format!("key `{key}`: cannot parse value `{raw}`"))
            }),
        }
    }

    pub fn take_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn take_u64(&mut self, key: &str, default: u64) -> Result<u64> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn take_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.parse_with(key, default, |s| s.parse().ok())
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.parse_with(key, default, |s| match s {
            "true" | "1" | "on" | "yes" => Some(true),
            "false" | "0" | "off" | "no" => Some(false),
            _ => None,
        })
    }

    /// Errors with the full list of unrecognized keys.
    pub fn ensure_empty(&self) -> Result<()> {
        if self.map.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.map.keys().map(|s| s.as_str()).collect();
            Err(CoadError::Config(format!(
                "unknown configuration key(s): {}",
                keys.join(", ")
            )))
        }
    }
}

/// Model + training settings from one flat config.
pub fn read_model_and_train(mut fc: FlatConfig) -> Result<(ModelConfig, TrainSettings)> {
    let defaults = ModelConfig::default();
    let input_size = fc.take_usize("backbone.input_size", defaults.backbone.input_size)?;
    let channels = fc.take_usize("backbone.channels", defaults.backbone.out_channels)?;
    let stem = fc.take_usize("backbone.stem_channels", (channels / 4).max(2))?;
    let model = ModelConfig {
        backbone: BackboneConfig {
            input_size,
            stem_channels: stem,
            out_channels: channels,
        },
        group_size: fc.take_usize("model.group_size", defaults.group_size)?,
        blocks: fc.take_usize("gasa.blocks", default_blocks_for(channels))?,
        se_reduction: fc.take_usize("model.se_reduction", defaults.se_reduction)?,
        ablation: AblationFlags {
            use_oiasg: fc.take_bool("ablation.use_oiasg", true)?,
            use_gasa: fc.take_bool("ablation.use_gasa", true)?,
            use_ggd: fc.take_bool("ablation.use_ggd", true)?,
            use_gcpd: fc.take_bool("ablation.use_gcpd", true)?,
        },
        loss_alpha: fc.take_f64("loss.alpha", defaults.loss_alpha)?,
        loss_beta: fc.take_f64("loss.beta", defaults.loss_beta)?,
        seed: fc.take_u64("model.seed", defaults.seed)?,
    };
    let tdef = TrainSettings::default();
    let train = TrainSettings {
        lr0: fc.take_f64("train.lr0", tdef.lr0)?,
        halve_every: fc.take_usize("train.halve_every", tdef.halve_every)?,
        max_iters: fc.take_usize("train.max_iters", tdef.max_iters)?,
        weight_decay: fc.take_f64("train.weight_decay", tdef.weight_decay)?,
        seed: fc.take_u64("train.seed", tdef.seed)?,
        cosal_batch: fc.take_usize("train.cosal_batch", tdef.cosal_batch)?,
        aux_batch: fc.take_usize("train.aux_batch", tdef.aux_batch)?,
        checkpoint_every: fc.take_usize("train.checkpoint_every", tdef.checkpoint_every)?,
        log_every: fc.take_usize("train.log_every", tdef.log_every)?,
        stop_loss: {
            let v = fc.take_f64("train.stop_loss", -1.0)?;
            if v > 0.0 {
                Some(v)
            } else {
                None
            }
        },
    };
    fc.ensure_empty()?;
    model.validate()?;
    Ok((model, train))
}

/// Default block count scaled to the channel width (8 at C=64, smaller for
/// the small-channel presets).
pub fn default_blocks_for(channels: usize) -> usize {
    match channels {
        c if c >= 64 => 8,
        c if c >= 32 => 4,
        _ => 2,
    }
}

/// Synthetic dataset spec from a flat config.
pub fn read_synth_spec(mut fc: FlatConfig) -> Result<SynthSpec> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        canvas: fc.take_usize("synth.canvas", d.canvas)?,
        n_groups: fc.take_usize("synth.n_groups", d.n_groups)?,
        group_size: fc.take_usize("synth.group_size", d.group_size)?,
        max_distractors: fc.take_usize("synth.distractors", d.max_distractors)?,
        noise_sigma: fc.take_f64("synth.noise_sigma", d.noise_sigma)?,
        seed: fc.take_u64("synth.seed", d.seed)?,
        min_area_frac: fc.take_f64("synth.min_area_frac", d.min_area_frac)?,
        max_area_frac: fc.take_f64("synth.max_area_frac", d.max_area_frac)?,
    };
    fc.ensure_empty()?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults_and_overrides() {
        let fc = FlatConfig::parse(
            "# comment\nbackbone.input_size = 32\nbackbone.channels=32\ngasa.blocks=4\ntrain.lr0=0.001\n",
        )
        .unwrap();
        let (model, train) = read_model_and_train(fc).unwrap();
        assert_eq!(model.backbone.input_size, 32);
        assert_eq!(model.blocks, 4);
        assert_eq!(model.group_size, 5);
        assert_eq!(train.lr0, 0.001);
        assert_eq!(train.weight_decay, 5e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let fc = FlatConfig::parse("backbone.channles=64\n").unwrap();
        let err = read_model_and_train(fc).unwrap_err();
        assert!(err.to_string().contains("backbone.channles"));
    }

    #[test]
    fn malformed_lines_and_values_error() {
        assert!(FlatConfig::parse("no equals sign").is_err());
        let fc = FlatConfig::parse("train.lr0=fast\n").unwrap();
        assert!(read_model_and_train(fc).is_err());
    }

    #[test]
    fn flag_overrides_win() {
        let mut fc = FlatConfig::parse("train.seed=1\n").unwrap();
        fc.set("train.seed", 99u64);
        let (_, train) = read_model_and_train(fc).unwrap();
        assert_eq!(train.seed, 99);
    }

    #[test]
    fn synth_spec_round_trip() {
        let fc = FlatConfig::parse("synth.n_groups=12\nsynth.seed=3\n").unwrap();
        let spec = read_synth_spec(fc).unwrap();
        assert_eq!(spec.n_groups, 12);
        assert_eq!(spec.seed, 3);
        assert_eq!(spec.canvas, 64);
        let bad = FlatConfig::parse("synth.canvas=30\n").unwrap();
        assert!(read_synth_spec(bad).is_err());
    }
}
