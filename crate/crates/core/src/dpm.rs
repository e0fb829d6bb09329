//! Depth purification: the depth features are gated by a channel mask
//! computed from the fused color-depth features, then by a spatial mask, and
//! the gated depth is added back onto the color features.

use tritrans_tensor::{Scalar, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Ctx, ParamRegistry};

/// Channel gate: shared two-layer bottleneck over global average and max pools.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub squeeze: Conv,
    pub excite: Conv,
    channels: usize,
}

impl ChannelAttention {
    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || channels < reduction {
            return Err(Error::Invalid(format!(
                "channel attention: {channels} channels below reduction ratio {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: Conv::new(reg, &format!("{name}.squeeze"), channels, hidden, 1, 1),
            excite: Conv::new(reg, &format!("{name}.excite"), hidden, channels, 1, 1),
            channels,
        })
    }

    fn mlp<T: Scalar>(&self, cx: &Ctx<T>, pooled: Var) -> Result<Var> {
        let h = self.squeeze.forward_relu(cx, pooled)?;
        self.excite.forward(cx, h)
    }

    /// `[B,C,H,W] → [B,C,1,1]` mask in (0, 1).
    pub fn mask<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        let s = cx.g.shape(x);
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::Invalid(format!("channel attention for {} channels got {s:?}", self.channels)));
        }
        let avg = cx.g.global_avg_pool(x)?;
        let max = cx.g.global_max_pool(x)?;
        let a = self.mlp(cx, avg)?;
        let m = self.mlp(cx, max)?;
        let sum = cx.g.add(a, m)?;
        Ok(cx.g.sigmoid(sum))
    }
}

/// Spatial gate: convolution over the channelwise mean and max maps.
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub conv: Conv,
}

impl SpatialAttention {
    pub fn new(reg: &mut ParamRegistry, name: &str, kernel: usize) -> Self {
        Self { conv: Conv::new(reg, &format!("{name}.conv"), 2, 1, kernel, 1) }
    }

    /// `[B,C,H,W] → [B,1,H,W]` mask in (0, 1).
    pub fn mask<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        let mean = cx.g.mean_axis(x, 1)?;
        let max = cx.g.max_axis(x, 1)?;
        let stacked = cx.g.concat(&[mean, max], 1)?;
        let logits = self.conv.forward(cx, stacked)?;
        Ok(cx.g.sigmoid(logits))
    }
}

/// Where the gates come from; `PinnedOnes` replaces both masks with 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    Learned,
    PinnedOnes,
}

#[derive(Clone, Debug)]
pub struct Dpm {
    pub fuse: Conv,
    pub channel: ChannelAttention,
    pub spatial: SpatialAttention,
}

impl Dpm {
    pub fn new(reg: &mut ParamRegistry, name: &str, channels: usize, reduction: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            fuse: Conv::new(reg, &format!("{name}.fuse"), 2 * channels, channels, 3, 1),
            channel: ChannelAttention::new(reg, &format!("{name}.ca"), channels, reduction)?,
            spatial: SpatialAttention::new(reg, &format!("{name}.sa"), kernel),
        })
    }

    pub fn purify<T: Scalar>(&self, cx: &Ctx<T>, color: Var, depth: Var) -> Result<Var> {
        self.purify_with(cx, color, depth, MaskMode::Learned)
    }

    pub fn purify_with<T: Scalar>(&self, cx: &Ctx<T>, color: Var, depth: Var, mode: MaskMode) -> Result<Var> {
        let (sc, sd) = (cx.g.shape(color), cx.g.shape(depth));
        if sc != sd || sd.len() != 4 {
            return Err(Error::Invalid(format!("depth purification: color {sc:?} vs depth {sd:?}")));
        }
        let ca = match mode {
            MaskMode::Learned => {
                let cat = cx.g.concat(&[depth, color], 1)?;
                let fused = self.fuse.forward_relu(cx, cat)?;
                self.channel.mask(cx, fused)?
            }
            MaskMode::PinnedOnes => cx.g.constant(Tensor::ones(&[sd[0], sd[1], 1, 1])),
        };
        let gated = cx.g.mul(depth, ca)?;
        let sa = match mode {
            MaskMode::Learned => self.spatial.mask(cx, gated)?,
            MaskMode::PinnedOnes => cx.g.constant(Tensor::ones(&[sd[0], 1, sd[2], sd[3]])),
        };
        let purified = cx.g.mul(gated, sa)?;
        Ok(cx.g.add(purified, color)?)
    }

    /// Both masks, for inspection.
    pub fn masks<T: Scalar>(&self, cx: &Ctx<T>, color: Var, depth: Var) -> Result<(Var, Var)> {
        let cat = cx.g.concat(&[depth, color], 1)?;
        let fused = self.fuse.forward_relu(cx, cat)?;
        let ca = self.channel.mask(cx, fused)?;
        let gated = cx.g.mul(depth, ca)?;
        Ok((ca, self.spatial.mask(cx, gated)?))
    }
}
