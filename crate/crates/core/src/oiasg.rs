//! Online intra-saliency guidance: a per-image saliency head plus spatial
//! attention that fuses the online prior back into the backbone features.

use crate::error::Result;
use crate::nn::{Conv2dLayer, Init, Param};
use crate::tensor::{Scalar, Tensor};

pub struct Oiasg<T: Scalar> {
    /// Intra-saliency head: 3x3 conv C -> C/4, relu, 1x1 conv -> 1.
    iash_conv: Conv2dLayer<T>,
    iash_head: Conv2dLayer<T>,
    /// Squeezes [channel-mean; channel-max] into a spatial attention plane.
    spatial_conv: Conv2dLayer<T>,
    /// Squeezes [spatial attention; saliency prior] into the fusion gate.
    fuse_conv: Conv2dLayer<T>,
}

pub struct OiasgOut<T: Scalar> {
    /// Intra-saliency feature U, same shape as the backbone feature.
    pub u: Tensor<T>,
    /// Online saliency prior E in (0,1), `1 x H x W`.
    pub e: Tensor<T>,
    /// Pre-sigmoid saliency logits, reused by the auxiliary branch.
    pub logits: Tensor<T>,
    /// Spatial attention plane in (0,1).
    pub f_tilde: Tensor<T>,
}

impl<T: Scalar> Oiasg<T> {
    pub fn new(channels: usize, init: &mut Init) -> Result<Self> {
        let mid = (channels / 4).max(1);
        Ok(Oiasg {
            iash_conv: Conv2dLayer::new("oiasg.iash.conv", channels, mid, 3, 1, 1, 1, init)?,
            iash_head: Conv2dLayer::new("oiasg.iash.head", mid, 1, 1, 1, 0, 1, init)?,
            spatial_conv: Conv2dLayer::new("oiasg.spatial", 2, 1, 3, 1, 1, 1, init)?,
            fuse_conv: Conv2dLayer::new("oiasg.fuse", 2, 1, 3, 1, 1, 1, init)?,
        })
    }

    /// Saliency logits at feature resolution (pre-sigmoid).
    pub fn iash_logits(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.iash_conv.forward(f)?.relu();
        self.iash_head.forward(&h)
    }

    /// The online prior E and its logits.
    pub fn iash_forward(&self, f: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let logits = self.iash_logits(f)?;
        Ok((logits.sigmoid(), logits))
    }

    /// Spatial attention from channel-wise average and max pooling.
    pub fn spatial_attention(&self, f: &Tensor<T>) -> Result<Tensor<T>> {
        let cap = f.channel_mean()?;
        let cmp = f.channel_max()?;
        let cat = Tensor::concat0(&[cap, cmp])?;
        Ok(self.spatial_conv.forward(&cat)?.sigmoid())
    }

    /// Residual fusion `U = F + F (.) sigmoid(conv([F~; E]))`, so for
    /// nonnegative F every element satisfies F <= U <= 2F.
    pub fn fuse_prior(
        &self,
        f: &Tensor<T>,
        f_tilde: &Tensor<T>,
        e: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let cat = Tensor::concat0(&[f_tilde.clone(), e.clone()])?;
        let gate = self.fuse_conv.forward(&cat)?.sigmoid();
        f.add(&f.broadcast_mul_plane(&gate)?)
    }

    pub fn forward(&self, f: &Tensor<T>) -> Result<OiasgOut<T>> {
        let (e, logits) = self.iash_forward(f)?;
        let f_tilde = self.spatial_attention(f)?;
        let u = self.fuse_prior(f, &f_tilde, &e)?;
        Ok(OiasgOut {
            u,
            e,
            logits,
            f_tilde,
        })
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        self.iash_conv.collect_params(out);
        self.iash_head.collect_params(out);
        self.spatial_conv.collect_params(out);
        self.fuse_conv.collect_params(out);
    }
}
