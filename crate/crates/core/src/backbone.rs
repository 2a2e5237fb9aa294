//! Shared feature extractor: three conv stages with an overall
//! down-sampling ratio of 8, emitting `C x S/8 x S/8` features.

use crate::error::{CoadError, Result};
use crate::nn::{Conv2dLayer, Init, Param};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackboneConfig {
    /// Square input size in pixels; must be divisible by 8.
    pub input_size: usize,
    /// Channels of the first stage; later stages double toward `out_channels`.
    pub stem_channels: usize,
    /// Output feature channels C.
    pub out_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_size: 64,
            stem_channels: 16,
            out_channels: 64,
        }
    }
}

impl BackboneConfig {
    pub fn with_channels(input_size: usize, out_channels: usize) -> Self {
        BackboneConfig {
            input_size,
            stem_channels: (out_channels / 4).max(2),
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 8 != 0 {
            return Err(CoadError::Config(format!(
                "backbone.input_size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        if self.out_channels == 0 || self.out_channels % 8 != 0 {
            return Err(CoadError::Config(format!(
                "backbone.channels must be a positive multiple of 8, got {}",
                self.out_channels
            )));
        }
        if self.stem_channels == 0 {
            return Err(CoadError::Config("backbone.stem_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial extent of the feature map for this input size.
    pub fn feature_extent(&self) -> usize {
        self.input_size / 8
    }
}

/// One stage: 3x3 conv (stride 1) + relu, then a 4x4 stride-2 halving conv
/// + relu. The 4x4 kernel keeps the strided output extent exactly half on
/// even inputs, which a 3x3 stride-2 conv cannot do under the strict
/// integral-extent rule.
struct Stage<T: Scalar> {
    conv: Conv2dLayer<T>,
    down: Conv2dLayer<T>,
}

pub struct Backbone<T: Scalar> {
    pub config: BackboneConfig,
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(config: BackboneConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let plan = [
            (3, config.stem_channels),
            (config.stem_channels, config.out_channels / 2),
            (config.out_channels / 2, config.out_channels),
        ];
        let mut stages = Vec::with_capacity(3);
        for (i, &(cin, cout)) in plan.iter().enumerate() {
            stages.push(Stage {
                conv: Conv2dLayer::new(
                    &format!("backbone.stage{i}.conv"),
                    cin,
                    cout,
                    3,
                    1,
                    1,
                    1,
                    init,
                )?,
                down: Conv2dLayer::new(
                    &format!("backbone.stage{i}.down"),
                    cout,
                    cout,
                    4,
                    2,
                    1,
                    1,
                    init,
                )?,
            });
        }
        Ok(Backbone { config, stages })
    }

    /// `3 x S x S -> C x S/8 x S/8` for any S divisible by 8.
    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = image.dims3("backbone_forward")?;
        if c != 3 {
            return Err(CoadError::ShapeMismatch {
                op: "backbone_forward",
                detail: format!("expected 3-channel image, got {c}"),
            });
        }
        if h != w || h % 8 != 0 {
            return Err(CoadError::Config(format!(
                "backbone input must be square with size divisible by 8, got {h}x{w}"
            )));
        }
        let mut x = image.clone();
        for stage in &self.stages {
            x = stage.conv.forward(&x)?.relu();
            x = stage.down.forward(&x)?.relu();
        }
        Ok(x)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        for s in &self.stages {
            s.conv.collect_params(out);
            s.down.collect_params(out);
        }
    }
}
