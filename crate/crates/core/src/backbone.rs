//! Five-stage residual CNN encoder, one instance per modality.
//!
//! Level 1 is a stride-2 3×3 stem; each later level halves the resolution
//! with a stride-2 3×3 conv followed by a 3×3 conv wrapped in a residual
//! shortcut. Level `i` therefore sits at stride `2^i`.

use tritrans_tensor::{Scalar, Var};

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::params::{Ctx, ParamRegistry};

/// Per-level features of one stream, finest first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    /// Level `i` in 1..=5.
    pub fn level(&self, i: usize) -> Var {
        self.levels[i - 1]
    }
}

#[derive(Clone, Debug)]
struct Stage {
    down: Conv,
    refine: Conv,
}

#[derive(Clone, Debug)]
pub struct BackboneWeights {
    stem: Conv,
    stages: Vec<Stage>,
}

impl BackboneWeights {
    pub fn new(reg: &mut ParamRegistry, prefix: &str, channels: &[usize; 5]) -> Self {
        let stem = Conv::new(reg, &format!("{prefix}.stem"), 3, channels[0], 3, 2);
        let stages = (1..5)
            .map(|i| Stage {
                down: Conv::new(reg, &format!("{prefix}.stage{}.down", i + 1), channels[i - 1], channels[i], 3, 2),
                refine: Conv::new(reg, &format!("{prefix}.stage{}.refine", i + 1), channels[i], channels[i], 3, 1),
            })
            .collect();
        Self { stem, stages }
    }
}

/// `image: [B,3,H,W]` with `H`, `W` divisible by 32.
pub fn encode<T: Scalar>(cx: &Ctx<T>, image: Var, w: &BackboneWeights) -> Result<FeaturePyramid> {
    let s = cx.g.shape(image);
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Invalid(format!("backbone expects [B,3,H,W], got {s:?}")));
    }
    if s[2] % 32 != 0 || s[3] % 32 != 0 {
        return Err(Error::Invalid(format!(
            "input size {}x{} must be divisible by 32",
            s[2], s[3]
        )));
    }
    let mut levels = Vec::with_capacity(5);
    let mut x = w.stem.forward_relu(cx, image)?;
    levels.push(x);
    for stage in &w.stages {
        let h = stage.down.forward_relu(cx, x)?;
        let r = stage.refine.forward(cx, h)?;
        let sum = cx.g.add(r, h)?;
        x = cx.g.relu(sum);
        levels.push(x);
    }
    Ok(FeaturePyramid { levels })
}
