//! Brings the top `k` purified levels to a common width (transition layers)
//! and a common resolution (progressive upsampling fusion).

use tritrans_tensor::{Scalar, Var};

use crate::error::{Error, Result};
use crate::nn::{spatial, Conv};
use crate::params::{Ctx, ParamRegistry};

/// `k` maps sharing one shape `[B, C_t, H_a, W_a]`, lowest level first.
#[derive(Clone, Debug)]
pub struct AlignedLevels {
    pub levels: Vec<Var>,
}

/// Upsample the coarser map, convolve, concatenate with the finer map and
/// reduce back to the common width.
#[derive(Clone, Debug)]
pub struct Ufm {
    pub up_conv: Conv,
    pub merge: Conv,
}

impl Ufm {
    pub fn new(reg: &mut ParamRegistry, name: &str, width: usize) -> Self {
        Self {
            up_conv: Conv::new(reg, &format!("{name}.up"), width, width, 3, 1),
            merge: Conv::new(reg, &format!("{name}.merge"), 2 * width, width, 3, 1),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, high: Var, low: Var) -> Result<Var> {
        let (hh, hw) = spatial(cx, high);
        let (lh, lw) = spatial(cx, low);
        if 2 * hh != lh || 2 * hw != lw {
            return Err(Error::Invalid(format!(
                "upsampling fusion needs a 2x size relation, got {hh}x{hw} and {lh}x{lw}"
            )));
        }
        let up = cx.g.upsample2x(high)?;
        let up = self.up_conv.forward_relu(cx, up)?;
        let cat = cx.g.concat(&[up, low], 1)?;
        self.merge.forward_relu(cx, cat)
    }
}

#[derive(Clone, Debug)]
pub struct ScaleAdjust {
    /// One per selected level, lowest first.
    pub transitions: Vec<Conv>,
    /// `fusions[j][m]` merges the running level-`j` stream into level `m < j`.
    pub fusions: Vec<Vec<Ufm>>,
}

impl ScaleAdjust {
    /// `in_channels` lists the backbone widths of the selected levels, lowest first.
    pub fn new(reg: &mut ParamRegistry, in_channels: &[usize], width: usize, first_level: usize) -> Result<Self> {
        let k = in_channels.len();
        if !(2..=4).contains(&k) {
            return Err(Error::Invalid(format!("level count {k} is outside {{2, 3, 4}}")));
        }
        let transitions = in_channels
            .iter()
            .enumerate()
            .map(|(j, &c)| Conv::new(reg, &format!("scale.transition{}", first_level + j), c, width, 3, 1))
            .collect();
        let fusions = (0..k)
            .map(|j| {
                (0..j)
                    .map(|m| Ufm::new(reg, &format!("scale.ufm{}_{}", first_level + j, first_level + m), width))
                    .collect()
            })
            .collect();
        Ok(Self { transitions, fusions })
    }

    pub fn levels(&self) -> usize {
        self.transitions.len()
    }

    /// 3×3 conv + ReLU to the common width for selected level `j` (0 = lowest).
    pub fn transition<T: Scalar>(&self, cx: &Ctx<T>, j: usize, x: Var) -> Result<Var> {
        self.transitions[j].forward_relu(cx, x)
    }

    /// Progressive fusion of already-transitioned levels (lowest first).
    pub fn align_levels<T: Scalar>(&self, cx: &Ctx<T>, transitioned: &[Var]) -> Result<AlignedLevels> {
        if transitioned.len() != self.levels() {
            return Err(Error::Invalid(format!(
                "expected {} transitioned levels, got {}",
                self.levels(),
                transitioned.len()
            )));
        }
        let mut levels = Vec::with_capacity(transitioned.len());
        for (j, &start) in transitioned.iter().enumerate() {
            let mut x = start;
            for m in (0..j).rev() {
                x = self.fusions[j][m].forward(cx, x, transitioned[m])?;
            }
            levels.push(x);
        }
        Ok(AlignedLevels { levels })
    }

    /// Transition then align; `features` are the purified selected levels, lowest first.
    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, features: &[Var]) -> Result<AlignedLevels> {
        let t: Vec<Var> = features
            .iter()
            .enumerate()
            .map(|(j, &f)| self.transition(cx, j, f))
            .collect::<Result<_>>()?;
        self.align_levels(cx, &t)
    }

    /// UFM applications on the path of selected level `j`.
    pub fn fusion_depth(&self, j: usize) -> usize {
        self.fusions[j].len()
    }
}
