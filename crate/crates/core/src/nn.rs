//! Parameterized layers shared by the model blocks.

use tritrans_tensor::{Scalar, Var};

use crate::error::Result;
use crate::params::{Ctx, Init, ParamId, ParamRegistry};

/// Square-kernel convolution with bias and same padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(reg: &mut ParamRegistry, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let weight = reg.add(format!("{name}.weight"), &[cout, cin, kernel, kernel], Init::FanIn(cin * kernel * kernel));
        let bias = reg.add(format!("{name}.bias"), &[cout], Init::Zeros);
        Self { weight, bias, stride, pad: kernel / 2 }
    }

    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        Ok(cx.g.conv2d(x, cx.p(self.weight), Some(cx.p(self.bias)), self.stride, self.pad)?)
    }

    pub fn forward_relu<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        let y = self.forward(cx, x)?;
        Ok(cx.g.relu(y))
    }
}

/// Affine map over the last axis, weight stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(reg: &mut ParamRegistry, name: &str, din: usize, dout: usize, std: f64) -> Self {
        Self {
            weight: reg.add(format!("{name}.weight"), &[din, dout], Init::Normal(std)),
            bias: reg.add(format!("{name}.bias"), &[dout], Init::Zeros),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        Ok(cx.g.linear(x, cx.p(self.weight), Some(cx.p(self.bias)))?)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(reg: &mut ParamRegistry, name: &str, dim: usize) -> Self {
        Self {
            gamma: reg.add(format!("{name}.gamma"), &[dim], Init::Ones),
            beta: reg.add(format!("{name}.beta"), &[dim], Init::Zeros),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &Ctx<T>, x: Var) -> Result<Var> {
        Ok(cx.g.layer_norm(x, cx.p(self.gamma), cx.p(self.beta), LAYER_NORM_EPS)?)
    }
}

/// Spatial size `(h, w)` of an NCHW node.
pub fn spatial<T: Scalar>(cx: &Ctx<T>, x: Var) -> (usize, usize) {
    let s = cx.g.shape(x);
    (s[2], s[3])
}
