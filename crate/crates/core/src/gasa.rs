//! Group-attentional semantic aggregation: block-wise group shuffling, an
//! order-insensitive softmax-weighted aggregation over the group axis, local
//! dilated-conv context, per-block global attention, and block fusion.

use crate::error::{CoadError, Result};
use crate::nn::{Conv2dLayer, Init, Param};
use crate::tensor::{Scalar, Tensor};

/// The b-th channel blocks of every group member, plus block geometry.
pub struct BlockGroup<T: Scalar> {
    pub block_count: usize,
    pub channels_per_block: usize,
    /// `blocks[b][n]` is channels `[b*D, (b+1)*D)` of member n.
    pub blocks: Vec<Vec<Tensor<T>>>,
}

/// Rearranges N member features so the b-th channel block of every member
/// sits together: `blocks[b] = [U_b^(1), ..., U_b^(N)]`.
pub fn block_shuffle<T: Scalar>(members: &[Tensor<T>], block_count: usize) -> Result<BlockGroup<T>> {
    if members.is_empty() {
        return Err(CoadError::ShapeMismatch {
            op: "block_shuffle",
            detail: "empty group".into(),
        });
    }
    let (c, _, _) = members[0].dims3("block_shuffle")?;
    for m in members {
        m.check_same_shape(&members[0], "block_shuffle")?;
    }
    if block_count == 0 || c % block_count != 0 {
        return Err(CoadError::Config(format!(
            "block count {block_count} must divide {c} channels"
        )));
    }
    let d = c / block_count;
    let mut blocks = Vec::with_capacity(block_count);
    for b in 0..block_count {
        let mut slot = Vec::with_capacity(members.len());
        for m in members {
            slot.push(m.slice0(b * d, d)?);
        }
        blocks.push(slot);
    }
    Ok(BlockGroup {
        block_count,
        channels_per_block: d,
        blocks,
    })
}

/// Order-insensitive aggregation of one block across the group: per element,
/// softmax weights over the N members times the member values, summed.
pub fn aggregate_block<T: Scalar>(members: &[Tensor<T>]) -> Result<Tensor<T>> {
    if members.is_empty() {
        return Err(CoadError::ShapeMismatch {
            op: "aggregate_block",
            detail: "empty block set".into(),
        });
    }
    for m in members {
        m.check_same_shape(&members[0], "aggregate_block")?;
    }
    let stacked = Tensor::stack0(members)?;
    stacked.softmax_weighted_sum0()
}

/// Per-block processing: four parallel dilated 3x3 convolutions for local
/// context and a q/k/v attention over all spatial positions for global
/// context. Every block owns its weights.
pub struct BlockContext<T: Scalar> {
    dilated: Vec<Conv2dLayer<T>>, // dilations 1, 3, 5, 7, each D -> D/4
    mix: Conv2dLayer<T>,          // 1x1, D -> D
    query: Conv2dLayer<T>,
    key: Conv2dLayer<T>,
    value: Conv2dLayer<T>,
}

impl<T: Scalar> BlockContext<T> {
    pub fn new(name: &str, d: usize, init: &mut Init) -> Result<Self> {
        if d % 4 != 0 {
            return Err(CoadError::Config(format!(
                "block channel width {d} must be divisible by 4"
            )));
        }
        let quarter = d / 4;
        let mut dilated = Vec::with_capacity(4);
        for rate in [1usize, 3, 5, 7] {
            dilated.push(Conv2dLayer::new(
                &format!("{name}.local.d{rate}"),
                d,
                quarter,
                3,
                1,
                rate,
                rate,
                init,
            )?);
        }
        Ok(BlockContext {
            dilated,
            mix: Conv2dLayer::new(&format!("{name}.local.mix"), d, d, 1, 1, 0, 1, init)?,
            query: Conv2dLayer::new(&format!("{name}.attn.q"), d, d, 1, 1, 0, 1, init)?,
            key: Conv2dLayer::new(&format!("{name}.attn.k"), d, d, 1, 1, 0, 1, init)?,
            value: Conv2dLayer::new(&format!("{name}.attn.v"), d, d, 1, 1, 0, 1, init)?,
        })
    }

    /// Multi-receptive-field local context; keeps the channel width.
    pub fn local_context(&self, g_b: &Tensor<T>) -> Result<Tensor<T>> {
        let branches: Vec<Tensor<T>> = self
            .dilated
            .iter()
            .map(|conv| conv.forward(g_b))
            .collect::<Result<_>>()?;
        let cat = Tensor::concat0(&branches)?;
        self.mix.forward(&cat)
    }

    /// Residual global attention: affinity `(q^T k) / sqrt(D)` over all
    /// spatial positions with column-wise softmax (columns indexed by the
    /// query position), applied to v.
    pub fn global_attention(&self, g_l: &Tensor<T>) -> Result<Tensor<T>> {
        let (d, h, w) = g_l.dims3("global_attention")?;
        let hw = h * w;
        let q = self.query.forward(g_l)?.reshape(&[d, hw])?;
        let k = self.key.forward(g_l)?.reshape(&[d, hw])?;
        let v = self.value.forward(g_l)?.reshape(&[d, hw])?;
        let scale = T::one() / T::of_f64((d as f64).sqrt());
        let affinity = q.transpose2d()?.matmul(&k)?.scale(scale);
        let csm = affinity.softmax_along(0)?;
        let attended = v.matmul(&csm)?.reshape(&[d, h, w])?;
        attended.add(g_l)
    }

    pub fn forward(&self, g_b: &Tensor<T>) -> Result<Tensor<T>> {
        let local = self.local_context(g_b)?;
        self.global_attention(&local)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        for c in &self.dilated {
            c.collect_params(out);
        }
        self.mix.collect_params(out);
        self.query.collect_params(out);
        self.key.collect_params(out);
        self.value.collect_params(out);
    }
}

pub struct Gasa<T: Scalar> {
    pub block_count: usize,
    pub channels_per_block: usize,
    contexts: Vec<BlockContext<T>>,
    fuse: Conv2dLayer<T>, // 1x1, C -> C
}

impl<T: Scalar> Gasa<T> {
    pub fn new(channels: usize, block_count: usize, init: &mut Init) -> Result<Self> {
        if block_count == 0 || channels % block_count != 0 {
            return Err(CoadError::Config(format!(
                "gasa.blocks {block_count} must divide {channels} channels"
            )));
        }
        let d = channels / block_count;
        if d % 4 != 0 {
            return Err(CoadError::Config(format!(
                "channels per block must be divisible by 4, got {d}"
            )));
        }
        let contexts = (0..block_count)
            .map(|b| BlockContext::new(&format!("gasa.block{b}"), d, init))
            .collect::<Result<_>>()?;
        Ok(Gasa {
            block_count,
            channels_per_block: d,
            contexts,
            fuse: Conv2dLayer::new("gasa.fuse", channels, channels, 1, 1, 0, 1, init)?,
        })
    }

    /// Group semantics `G in R^{C x H x W}` from the N member features.
    pub fn forward(&self, members: &[Tensor<T>]) -> Result<Tensor<T>> {
        let shuffled = block_shuffle(members, self.block_count)?;
        let mut per_block = Vec::with_capacity(self.block_count);
        for (b, block_members) in shuffled.blocks.iter().enumerate() {
            let g_b = aggregate_block(block_members)?;
            per_block.push(self.contexts[b].forward(&g_b)?);
        }
        let cat = Tensor::concat0(&per_block)?;
        self.fuse.forward(&cat)
    }

    pub fn collect_params(&self, out: &mut Vec<Param<T>>) {
        for c in &self.contexts {
            c.collect_params(out);
        }
        self.fuse.collect_params(out);
    }
}
