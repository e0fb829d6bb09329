//! Boundary-weighted BCE plus weighted IoU, computed from logits.

use tritrans_tensor::{Graph, Scalar, Tensor, Var};

use crate::config::LossConfig;
use crate::decoder::DecoderOutput;
use crate::error::{Error, Result};

/// Rejects anything that is not a `[B,1,H,W]` map of exact zeros and ones.
pub fn check_binary<T: Scalar>(gt: &Tensor<T>) -> Result<()> {
    if gt.rank() != 4 || gt.shape()[1] != 1 {
        return Err(Error::Invalid(format!("ground truth must be [B,1,H,W], got {:?}", gt.shape())));
    }
    if let Some(i) = gt.data().iter().position(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::Invalid(format!(
            "ground truth is not binary: element {i} is {}",
            gt.data()[i].as_f64()
        )));
    }
    Ok(())
}

/// `w = 1 + gain·|meanpool(G) − G|` with a same-padded window that counts padding as zero.
pub fn weight_map<T: Scalar>(g: &Graph<T>, gt: Var, cfg: &LossConfig) -> Result<Var> {
    let k = cfg.window;
    if k % 2 == 0 {
        return Err(Error::config("loss_window", "must be odd"));
    }
    let pooled = g.avg_pool2d(gt, k, 1, k / 2)?;
    let dev = g.abs(g.sub(pooled, gt)?);
    Ok(g.add_scalar(g.scale(dev, cfg.gain), 1.0))
}

fn spatial_sum<T: Scalar>(g: &Graph<T>, x: Var) -> Result<Var> {
    let s = g.sum_axis(x, 3)?;
    Ok(g.sum_axis(s, 2)?)
}

/// Per-image weighted BCE plus weighted IoU, averaged over the batch.
pub fn ppa_loss<T: Scalar>(g: &Graph<T>, logits: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    let (ls, gs) = (g.shape(logits), g.shape(gt));
    if ls != gs {
        return Err(Error::Invalid(format!("logits {ls:?} and ground truth {gs:?} differ in shape")));
    }
    check_binary(&g.value(gt))?;
    let w = weight_map(g, gt, cfg)?;
    // log(1 + e^x) − x·G is the BCE of sigmoid(x) against G.
    let bce = g.sub(g.softplus(logits), g.mul(logits, gt)?)?;
    let wbce = g.div(spatial_sum(g, g.mul(w, bce)?)?, spatial_sum(g, w)?)?;

    let p = g.sigmoid(logits);
    let inter = spatial_sum(g, g.mul(w, g.mul(p, gt)?)?)?;
    let union = spatial_sum(g, g.mul(w, g.add(p, gt)?)?)?;
    let ratio = g.div(g.add_scalar(inter, cfg.smooth), g.add_scalar(g.sub(union, inter)?, cfg.smooth))?;
    let wiou = g.add_scalar(g.scale(ratio, -1.0), 1.0);
    Ok(g.mean(g.add(wbce, wiou)?))
}

/// Final-map loss plus one term per side output, unweighted.
pub fn total_loss<T: Scalar>(g: &Graph<T>, out: &DecoderOutput, gt: Var, cfg: &LossConfig) -> Result<Var> {
    let mut total = ppa_loss(g, out.final_logits, gt, cfg)?;
    for &side in &out.side_logits {
        total = g.add(total, ppa_loss(g, side, gt, cfg)?)?;
    }
    Ok(total)
}
