//! Full network assembly: backbone, the four architecture modules (or their
//! baseline replacements), the co-saliency head, and the joint objective.

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{CoadError, Result};
use crate::gasa::Gasa;
use crate::gcpd::{CoSalHead, Gcpd};
use crate::ggd::Ggd;
use crate::nn::{check_unique_names, Conv2dLayer, ConvTranspose2dLayer, Init, Param};
use crate::oiasg::Oiasg;
use crate::tensor::{Scalar, Tensor};

/// Which of the four modules are active; all-false is the baseline variant,
/// all-true the full network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_oiasg: bool,
    pub use_gasa: bool,
    pub use_ggd: bool,
    pub use_gcpd: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_oiasg: true,
            use_gasa: true,
            use_ggd: true,
            use_gcpd: true,
        }
    }
}

impl AblationFlags {
    pub fn baseline() -> Self {
        AblationFlags {
            use_oiasg: false,
            use_gasa: false,
            use_ggd: false,
            use_gcpd: false,
        }
    }

    /// The ablation ladder: baseline, then one module added at a time.
    pub fn ladder() -> [(&'static str, AblationFlags); 5] {
        let mut f = Self::baseline();
        let baseline = ("baseline", f);
        f.use_oiasg = true;
        let a = ("+oiasg", f);
        f.use_gasa = true;
        let b = ("+gasa", f);
        f.use_ggd = true;
        let c = ("+ggd", f);
        f.use_gcpd = true;
        let full = ("+gcpd (full)", f);
        [baseline, a, b, c, full]
    }

    pub fn label(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        format!(
            "oiasg={} gasa={} ggd={} gcpd={}",
            on(self.use_oiasg),
            on(self.use_gasa),
            on(self.use_ggd),
            on(self.use_gcpd)
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// Sub-group size N.
    pub group_size: usize,
    /// Block count B for the group aggregation.
    pub blocks: usize,
    /// Squeeze-and-excitation reduction ratio.
    pub se_reduction: usize,
    pub ablation: AblationFlags,
    pub loss_alpha: f64,
    pub loss_beta: f64,
    /// Weight initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            group_size: 5,
            blocks: 8,
            se_reduction: 4,
            ablation: AblationFlags::default(),
            loss_alpha: 0.7,
            loss_beta: 0.3,
            seed: 7,
        }
    }
}

impl ModelConfig {
    /// Tiny preset for exhaustive tests (16 px input, C=16, B=2).
    pub fn preset_small() -> Self {
        ModelConfig {
            backbone: BackboneConfig::with_channels(16, 16),
            blocks: 2,
            ..ModelConfig::default()
        }
    }

    /// Mid preset (32 px input, C=32, B=4).
    pub fn preset_medium() -> Self {
        ModelConfig {
            backbone: BackboneConfig::with_channels(32, 32),
            blocks: 4,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let c = self.backbone.out_channels;
        if self.blocks == 0 || c % self.blocks != 0 {
            return Err(CoadError::Config(format!(
                "gasa.blocks {} must divide {} channels",
                self.blocks, c
            )));
        }
        if (c / self.blocks) % 4 != 0 {
            return Err(CoadError::Config(format!(
                "channels per block {} must be divisible by 4",
                c / self.blocks
            )));
        }
        if self.se_reduction == 0 || c % self.se_reduction != 0 {
            return Err(CoadError::Config(format!(
                "se reduction {} must divide {} channels",
                self.se_reduction, c
            )));
        }
        if self.group_size == 0 {
            return Err(CoadError::Config("group size must be >= 1".into()));
        }
        if self.loss_alpha <= 0.0 || self.loss_beta <= 0.0 {
            return Err(CoadError::Config(
                "loss weights alpha and beta must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Baseline group aggregation: concatenation of the N member features
/// followed by a 1x1 reduction and a standard 3x3 convolution. Channel plan
/// keeps the overall parameter count close to the full model's.
struct BaselineAggregator<T: Scalar> {
    reduce: Conv2dLayer<T>, // 1x1: N*C -> C/4
    conv: Conv2dLayer<T>,   // 3x3: C/4 -> C
    group_size: usize,
}

impl<T: Scalar> BaselineAggregator<T> {
    fn new(channels: usize, group_size: usize, init: &mut Init) -> Result<Self> {
        let mid = (channels / 4).max(1);
        Ok(BaselineAggregator {
            reduce: Conv2dLayer::new(
                "gasa_repl.reduce",
                group_size * channels,
                mid,
                1,
                1,
                0,
                1,
                init,
            )?,
            conv: Conv2dLayer::new("gasa_repl.conv", mid, channels, 3, 1, 1, 1, init)?,
            group_size,
        })
    }

    fn forward(&self, members: &[Tensor<T>]) -> Result<Tensor<T>> {
        if members.len() != self.group_size {
            return Err(CoadError::Config(format!(
                "baseline aggregation was built for groups of {}, got {}",
                self.group_size,
                members.len()
            )));
        }
        let cat = Tensor::concat0(members)?;
        self.conv.forward(&self.reduce.forward(&cat)?.relu())
    }

    fn collect_params(&self, out: &mut Vec<Param<T>>) {
        self.reduce.collect_params(out);
        self.conv.collect_params(out);
    }
}

enum Aggregator<T: Scalar> {
    Full(Gasa<T>),
    Baseline(BaselineAggregator<T>),
}

/// Baseline distribution: direct concatenation followed by a 1x1 convolution.
struct BaselineDistributor<T: Scalar> {
    conv: Conv2dLayer<T>, // 1x1: 2C -> C
}

enum Distributor<T: Scalar> {
    Full(Ggd<T>),
    Baseline(BaselineDistributor<T>),
}

/// Baseline decoder: three cascaded deconvolution layers.
struct BaselineDecoder<T: Scalar> {
    deconvs: Vec<ConvTranspose2dLayer<T>>,
}

impl<T: Scalar> BaselineDecoder<T> {
    fn new(channels: usize, init: &mut Init) -> Result<Self> {
        let mut deconvs = Vec::with_capacity(3);
        let mut c = channels;
        for i in 0..3 {
            deconvs.push(ConvTranspose2dLayer::new(
                &format!("gcpd_repl.deconv{i}"),
                c,
                c / 2,
                4,
                2,
                1,
                init,
            )?);
            c /= 2;
        }
        Ok(BaselineDecoder { deconvs })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for (i, d) in self.deconvs.iter().enumerate() {
            cur = d.forward(&cur)?;
            if i + 1 < self.deconvs.len() {
                cur = cur.relu();
            }
        }
        Ok(cur)
    }

    fn collect_params(&self, out: &mut Vec<Param<T>>) {
        for d in &self.deconvs {
            d.collect_params(out);
        }
    }
}

enum Decoder<T: Scalar> {
    Full(Gcpd<T>),
    Baseline(BaselineDecoder<T>),
}

pub struct GroupForward<T: Scalar> {
    /// Co-saliency maps M, `1 x S x S`, strictly in (0,1).
    pub maps: Vec<Tensor<T>>,
    /// Online saliency priors E at feature resolution; empty when the
    /// guidance module is ablated away.
    pub priors: Vec<Tensor<T>>,
    /// Intra-saliency features U (equal to the backbone features when the
    /// guidance module is off).
    pub intra_features: Vec<Tensor<T>>,
    /// Co-saliency features X after group distribution.
    pub cosal_features: Vec<Tensor<T>>,
}

pub struct CoadNet<T: Scalar> {
    pub config: ModelConfig,
    backbone: Backbone<T>,
    oiasg: Option<Oiasg<T>>,
    aggregator: Aggregator<T>,
    distributor: Distributor<T>,
    decoder: Decoder<T>,
    head: CoSalHead<T>,
    params: Vec<Param<T>>,
}

impl<T: Scalar> CoadNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(config.seed);
        let c = config.backbone.out_channels;

        let backbone = Backbone::new(config.backbone, &mut init)?;
        let oiasg = if config.ablation.use_oiasg {
            Some(Oiasg::new(c, &mut init)?)
        } else {
            None
        };
        let aggregator = if config.ablation.use_gasa {
            Aggregator::Full(Gasa::new(c, config.blocks, &mut init)?)
        } else {
            Aggregator::Baseline(BaselineAggregator::new(c, config.group_size, &mut init)?)
        };
        let distributor = if config.ablation.use_ggd {
            Distributor::Full(Ggd::new(c, config.se_reduction, &mut init)?)
        } else {
            Distributor::Baseline(BaselineDistributor {
                conv: Conv2dLayer::new("ggd_repl.conv", 2 * c, c, 1, 1, 0, 1, &mut init)?,
            })
        };
        let decoder = if config.ablation.use_gcpd {
            Decoder::Full(Gcpd::new(c, &mut init)?)
        } else {
            Decoder::Baseline(BaselineDecoder::new(c, &mut init)?)
        };
        let head = CoSalHead::new(c / 8, &mut init)?;

        let mut params = Vec::new();
        backbone.collect_params(&mut params);
        if let Some(o) = &oiasg {
            o.collect_params(&mut params);
        }
        match &aggregator {
            Aggregator::Full(g) => g.collect_params(&mut params),
            Aggregator::Baseline(b) => b.collect_params(&mut params),
        }
        match &distributor {
            Distributor::Full(g) => g.collect_params(&mut params),
            Distributor::Baseline(b) => b.conv.collect_params(&mut params),
        }
        match &decoder {
            Decoder::Full(g) => g.collect_params(&mut params),
            Decoder::Baseline(b) => b.collect_params(&mut params),
        }
        head.collect_params(&mut params);
        check_unique_names(&params)?;

        Ok(CoadNet {
            config,
            backbone,
            oiasg,
            aggregator,
            distributor,
            decoder,
            head,
            params,
        })
    }

    pub fn parameters(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    pub fn backbone(&self) -> &Backbone<T> {
        &self.backbone
    }

    /// Runs the whole pipeline on one query group.
    pub fn forward_group(&self, images: &[Tensor<T>]) -> Result<GroupForward<T>> {
        if images.is_empty() {
            return Err(CoadError::ShapeMismatch {
                op: "forward_group",
                detail: "empty image group".into(),
            });
        }
        for img in images {
            img.check_same_shape(&images[0], "forward_group")?;
        }

        let mut intra = Vec::with_capacity(images.len());
        let mut priors = Vec::with_capacity(images.len());
        for img in images {
            let f = self.backbone.forward(img)?;
            match &self.oiasg {
                Some(o) => {
                    let out = o.forward(&f)?;
                    priors.push(out.e);
                    intra.push(out.u);
                }
                None => intra.push(f),
            }
        }

        let g = match &self.aggregator {
            Aggregator::Full(gasa) => gasa.forward(&intra)?,
            Aggregator::Baseline(b) => b.forward(&intra)?,
        };

        let mut cosal = Vec::with_capacity(images.len());
        for u in &intra {
            let x = match &self.distributor {
                Distributor::Full(ggd) => ggd.forward(u, &g)?.x,
                Distributor::Baseline(b) => {
                    b.conv.forward(&Tensor::concat0(&[u.clone(), g.clone()])?)?
                }
            };
            cosal.push(x);
        }

        let decoded: Vec<Tensor<T>> = match &self.decoder {
            Decoder::Full(gcpd) => gcpd.forward(&cosal)?,
            Decoder::Baseline(b) => cosal
                .iter()
                .map(|x| b.forward(x))
                .collect::<Result<_>>()?,
        };

        let maps = decoded
            .iter()
            .map(|z| self.head.forward(z))
            .collect::<Result<_>>()?;

        Ok(GroupForward {
            maps,
            priors,
            intra_features: intra,
            cosal_features: cosal,
        })
    }

    /// Auxiliary single-image saliency prediction at input resolution:
    /// the intra-saliency logits upsampled 8x, then sigmoid.
    pub fn aux_forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let o = self.oiasg.as_ref().ok_or_else(|| {
            CoadError::Config("auxiliary saliency branch requires the guidance module".into())
        })?;
        let (_, s, _) = image.dims3("aux_forward")?;
        let f = self.backbone.forward(image)?;
        let logits = o.iash_logits(&f)?;
        Ok(logits.bilinear_resize(s, s)?.sigmoid())
    }
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1-eps]`.
pub fn bce_mean<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    pred.check_same_shape(target, "bce")?;
    let eps = T::of_f64(1e-7);
    let p = pred.clamp(eps, T::one() - eps);
    let pos = target.mul(&p.ln())?;
    let neg = target.one_minus().mul(&p.one_minus().ln())?;
    let total = pos.add(&neg)?.sum_all();
    let inv = T::from_count(pred.numel());
    Ok(total.scale(-T::one() / inv))
}

/// Joint objective `L = alpha * L_c + beta * L_s`, where each term is the
/// mean over images of the per-image mean BCE. An empty auxiliary batch
/// drops the L_s term.
pub fn joint_loss<T: Scalar>(
    cosal_maps: &[Tensor<T>],
    cosal_targets: &[Tensor<T>],
    aux_maps: &[Tensor<T>],
    aux_targets: &[Tensor<T>],
    alpha: f64,
    beta: f64,
) -> Result<Tensor<T>> {
    if cosal_maps.is_empty() {
        return Err(CoadError::ShapeMismatch {
            op: "joint_loss",
            detail: "no co-saliency predictions".into(),
        });
    }
    if cosal_maps.len() != cosal_targets.len() || aux_maps.len() != aux_targets.len() {
        return Err(CoadError::ShapeMismatch {
            op: "joint_loss",
            detail: format!(
                "prediction/mask counts differ: {} vs {}, {} vs {}",
                cosal_maps.len(),
                cosal_targets.len(),
                aux_maps.len(),
                aux_targets.len()
            ),
        });
    }
    let mean_of = |maps: &[Tensor<T>], targets: &[Tensor<T>]| -> Result<Tensor<T>> {
        let mut acc: Option<Tensor<T>> = None;
        for (m, t) in maps.iter().zip(targets) {
            let b = bce_mean(m, t)?;
            acc = Some(match acc {
                Some(a) => a.add(&b)?,
                None => b,
            });
        }
        let n = T::from_count(maps.len());
        Ok(acc.unwrap().scale(T::one() / n))
    };

    let l_c = mean_of(cosal_maps, cosal_targets)?;
    let mut loss = l_c.scale(T::of_f64(alpha));
    if !aux_maps.is_empty() {
        let l_s = mean_of(aux_maps, aux_targets)?;
        loss = loss.add(&l_s.scale(T::of_f64(beta)))?;
    }
    Ok(loss)
}
