//! Shared-weight transformer enhancement of the aligned levels.
//!
//! Every stream is tokenized with 1×1 patches (row-major over `H_a × W_a`),
//! projected to `D`, offset by a learned positional table, passed through the
//! same pre-norm encoder stack, folded back to a map, projected to `C_t` and
//! concatenated with its input and merged back to `C_t`. No parameter is
//! stream-specific, so the parameter count does not depend on `k`.

use tritrans_tensor::{Scalar, Var};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv, LayerNorm, Linear};
use crate::params::{Ctx, Init, ParamId, ParamRegistry};
use crate::scale_adjust::AlignedLevels;

const TRANSFORMER_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl EncoderLayer {
    fn new(reg: &mut ParamRegistry, name: &str, dim: usize, mlp_ratio: usize) -> Self {
        let std = TRANSFORMER_INIT_STD;
        Self {
            norm1: LayerNorm::new(reg, &format!("{name}.norm1"), dim),
            query: Linear::new(reg, &format!("{name}.attn.query"), dim, dim, std),
            key: Linear::new(reg, &format!("{name}.attn.key"), dim, dim, std),
            value: Linear::new(reg, &format!("{name}.attn.value"), dim, dim, std),
            out: Linear::new(reg, &format!("{name}.attn.out"), dim, dim, std),
            norm2: LayerNorm::new(reg, &format!("{name}.norm2"), dim),
            fc1: Linear::new(reg, &format!("{name}.mlp.fc1"), dim, dim * mlp_ratio, std),
            fc2: Linear::new(reg, &format!("{name}.mlp.fc2"), dim * mlp_ratio, dim, std),
        }
    }

    /// Multi-head self-attention; also returns the `[B,h,N,N]` probabilities.
    fn attention<T: Scalar>(&self, cx: &Ctx<T>, z: Var, heads: usize) -> Result<(Var, Var)> {
        let g = cx.g;
        let s = g.shape(z);
        let (b, n, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let split = |x: Var, perm: &[usize]| -> Result<Var> {
            let x = g.reshape(x, &[b, n, heads, dh])?;
            Ok(g.permute(x, perm)?)
        };
        let q = split(self.query.forward(cx, z)?, &[0, 2, 1, 3])?;
        let kt = split(self.key.forward(cx, z)?, &[0, 2, 3, 1])?;
        let v = split(self.value.forward(cx, z)?, &[0, 2, 1, 3])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = g.softmax(scores)?;
        let ctx = g.matmul(probs, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, n, d])?;
        Ok((self.out.forward(cx, ctx)?, probs))
    }

    fn forward<T: Scalar>(&self, cx: &Ctx<T>, z: Var, heads: usize) -> Result<(Var, Var)> {
        let g = cx.g;
        let (attn, probs) = self.attention(cx, self.norm1.forward(cx, z)?, heads)?;
        let z = g.add(attn, z)?;
        let h = self.fc1.forward(cx, self.norm2.forward(cx, z)?)?;
        let h = self.fc2.forward(cx, g.gelu(h))?;
        Ok((g.add(h, z)?, probs))
    }
}

/// The single parameter set every stream runs through.
#[derive(Clone, Debug)]
pub struct TtemShared {
    pub projection: Linear,
    pub position: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub back_projection: Conv,
    pub heads: usize,
    pub dim: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug)]
pub struct Ttem {
    pub shared: TtemShared,
    /// 3×3 merge of `[encoded; original]` back to `C_t`.
    pub merge: Conv,
}

/// Names of the shared parameters start with this prefix.
pub const SHARED_PREFIX: &str = "ttem.shared.";

impl Ttem {
    pub fn new(reg: &mut ParamRegistry, cfg: &ModelConfig) -> Self {
        let (ct, d, n) = (cfg.transition_channels, cfg.embed_dim, cfg.tokens());
        let p = SHARED_PREFIX;
        let shared = TtemShared {
            projection: Linear::new(reg, &format!("{p}projection"), ct, d, TRANSFORMER_INIT_STD),
            position: reg.add(format!("{p}position"), &[n, d], Init::Zeros),
            layers: (0..cfg.layers)
                .map(|l| EncoderLayer::new(reg, &format!("{p}layer{l}"), d, cfg.mlp_ratio))
                .collect(),
            back_projection: Conv::new(reg, &format!("{p}back_projection"), d, ct, 1, 1),
            heads: cfg.heads,
            dim: d,
            tokens: n,
        };
        let merge = Conv::new(reg, &format!("{p}merge"), 2 * ct, ct, 3, 1);
        Self { shared, merge }
    }

    pub fn embed<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        self.embed_with(cx, x, true)
    }

    /// `[B,C_t,H,W] → [B,H·W,D]`; `with_position = false` skips the positional table.
    pub fn embed_with<T: Scalar>(&self, cx: &Ctx<T>, x: Var, with_position: bool) -> Result<Var> {
        let g = cx.g;
        let s = g.shape(x);
        if s.len() != 4 {
            return Err(Error::Invalid(format!("token embedding expects [B,C,H,W], got {s:?}")));
        }
        let n = s[2] * s[3];
        if n != self.shared.tokens {
            return Err(Error::Invalid(format!(
                "token count mismatch: expected N = {}, got {n}",
                self.shared.tokens
            )));
        }
        let flat = g.permute(x, &[0, 2, 3, 1])?;
        let flat = g.reshape(flat, &[s[0], n, s[1]])?;
        let z = self.shared.projection.forward(cx, flat)?;
        if with_position {
            Ok(g.add(z, cx.p(self.shared.position))?)
        } else {
            Ok(z)
        }
    }

    pub fn encode<T: Scalar>(&self, cx: &Ctx<T>, z: Var) -> Result<Var> {
        Ok(self.encode_with_attention(cx, z)?.0)
    }

    /// Runs the encoder stack and also returns each layer's attention probabilities.
    pub fn encode_with_attention<T: Scalar>(&self, cx: &Ctx<T>, z: Var) -> Result<(Var, Vec<Var>)> {
        let s = cx.g.shape(z);
        if s.len() != 3 || s[2] != self.shared.dim {
            return Err(Error::Invalid(format!(
                "encoder expects [B,N,{}], got {s:?}",
                self.shared.dim
            )));
        }
        let mut z = z;
        let mut probs = Vec::with_capacity(self.shared.layers.len());
        for layer in &self.shared.layers {
            let (next, p) = layer.forward(cx, z, self.shared.heads)?;
            z = next;
            probs.push(p);
        }
        Ok((z, probs))
    }

    /// Inverse of the row-major flattening followed by the `D → C_t` 1×1 conv.
    pub fn unembed<T: Scalar>(&self, cx: &Ctx<T>, z: Var, height: usize, width: usize) -> Result<Var> {
        let g = cx.g;
        let s = g.shape(z);
        let map = g.reshape(z, &[s[0], height, width, s[2]])?;
        let map = g.permute(map, &[0, 3, 1, 2])?;
        self.shared.back_projection.forward(cx, map)
    }

    pub fn enhance<T: Scalar>(&self, cx: &Ctx<T>, aligned: &AlignedLevels) -> Result<Vec<Var>> {
        aligned
            .levels
            .iter()
            .map(|&f| {
                let s = cx.g.shape(f);
                let z = self.embed(cx, f)?;
                let z = self.encode(cx, z)?;
                let back = self.unembed(cx, z, s[2], s[3])?;
                let cat = cx.g.concat(&[back, f], 1)?;
                self.merge.forward_relu(cx, cat)
            })
            .collect()
    }
}
