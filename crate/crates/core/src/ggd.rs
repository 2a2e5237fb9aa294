//! Gated group distribution: a squeeze-and-excitation estimator produces a
//! per-element probability P, mixing group semantics into each individual
//! feature as a convex combination. Weights are shared across the group.

use crate::error::{CoadError, Result};
use crate::nn::{Conv2dLayer, Init, Linear, Param};
use crate::tensor::{Scalar, Tensor};

pub struct Ggd<T: Scalar> {
    /// 1x1 channel reduction of [U; G]: 2C -> C.
    reduce: Conv2dLayer<T>,
    /// SE bottleneck on the pooled channel vector.
    se_fc1: Linear<T>,
    se_fc2: Linear<T>,
    /// Bottleneck conv head producing the gate logits.
    gate_conv1: Conv2dLayer<T>,
    gate_conv2: Conv2dLayer<T>,
}

pub struct GateState<T: Scalar> {
    pub u_g: Tensor<T>,
    /// Gate probabilities, strictly in (0,1).
    pub p: Tensor<T>,
    /// Co-saliency feature X.
    pub x: Tensor<T>,
}

impl<T: Scalar> Ggd<T> {
    pub fn new(channels: usize, reduction: usize, init: &mut Init) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(CoadError::Config(format!(
                "SE reduction {reduction} must divide {channels} channels"
            )));
        }
        let squeezed = channels / reduction;
        let bottleneck = (channels / 4).max(1);
        Ok(Ggd {
            reduce: Conv2dLayer::new("ggd.reduce", 2 * channels, channels, 1, 1, 0, 1, init)?,
            se_fc1: Linear::new("ggd.se.fc1", channels, squeezed, init)?,
            se_fc2: Linear::new("ggd.se.fc2", squeezed, channels, init)?,
            gate_conv1: Conv2dLayer::new("ggd.gate.conv1", channels, bottleneck, 1, 1, 0, 1, init)?,
            gate_conv2: Conv2dLayer::new("ggd.gate.conv2", bottleneck, channels, 1, 1, 0, 1, init)?,
        })
    }

    /// Squeeze-and-excitation channel attention: scales each channel by
    /// `sigmoid(W2 relu(W1 GAP(x)))`, so |output| <= |input| elementwise.
    pub fn se_block(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = x.global_avg_pool()?;
        let s = self.se_fc2.forward(&self.se_fc1.forward(&pooled)?.relu())?.sigmoid();
        x.broadcast_mul_channel_vec(&s)
    }

    /// Gate probability map P and the fused input U_g.
    pub fn gate_probability(
        &self,
        u: &Tensor<T>,
        g: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        u.check_same_shape(g, "gate_probability")?;
        let u_g = self.reduce.forward(&Tensor::concat0(&[u.clone(), g.clone()])?)?;
        let se = self.se_block(&u_g)?;
        let logits = self.gate_conv2.forward(&self.gate_conv1.forward(&se)?.relu())?;
        Ok((logits.sigmoid(), u_g))
    }

    pub fn forward(&self, u: &Tensor<T>, g: &Tensor<T>) -> Result<GateState<T>> {
        let (p, u_g) = self.gate_probability(u, g)?;
        let x = gated_combine(&p, g, u)?;
        Ok(GateState { u_g, p, x })
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        self.reduce.collect_params(out);
        self.se_fc1.collect_params(out);
        self.se_fc2.collect_params(out);
        self.gate_conv1.collect_params(out);
        self.gate_conv2.collect_params(out);
    }
}

/// `X = P (x) G + (1-P) (x) U`: elementwise convex combination, so X always
/// lies between min(G,U) and max(G,U).
pub fn gated_combine<T: Scalar>(
    p: &Tensor<T>,
    g: &Tensor<T>,
    u: &Tensor<T>,
) -> Result<Tensor<T>> {
    p.check_same_shape(g, "gated_combine")?;
    p.check_same_shape(u, "gated_combine")?;
    p.mul(g)?.add(&p.one_minus().mul(u)?)
}
