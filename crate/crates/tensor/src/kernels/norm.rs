use crate::scalar::Scalar;

pub fn softmax_rows<T: Scalar>(x: &[T], row: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(row).zip(out.chunks_exact_mut(row)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        let inv = total.recip();
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    out
}

pub fn softmax_rows_backward<T: Scalar>(y: &[T], dy: &[T], row: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for ((y, dy), dx) in y.chunks_exact(row).zip(dy.chunks_exact(row)).zip(dx.chunks_exact_mut(row)) {
        let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &g) in dx.iter_mut().zip(y).zip(dy) {
            *d = yv * (g - dot);
        }
    }
    dx
}

/// Per-row normalized values and reciprocal standard deviations.
pub struct LayerNormSaved<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> (Vec<T>, LayerNormSaved<T>) {
    let row = gamma.len();
    let n = T::from_f64(row as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = Vec::with_capacity(x.len() / row);
    for ((src, xh), dst) in x.chunks_exact(row).zip(xhat.chunks_exact_mut(row)).zip(y.chunks_exact_mut(row)) {
        let mean = src.iter().copied().sum::<T>() / n;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = (var + eps).sqrt().recip();
        rstd.push(r);
        for i in 0..row {
            xh[i] = (src[i] - mean) * r;
            dst[i] = xh[i] * gamma[i] + beta[i];
        }
    }
    (y, LayerNormSaved { xhat, rstd })
}

pub fn layer_norm_backward<T: Scalar>(
    saved: &LayerNormSaved<T>,
    gamma: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let row = gamma.len();
    let n = T::from_f64(row as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); row];
    let mut dbeta = vec![T::zero(); row];
    for (r, ((g, xh), d)) in dy
        .chunks_exact(row)
        .zip(saved.xhat.chunks_exact(row))
        .zip(dx.chunks_exact_mut(row))
        .enumerate()
    {
        let mut mean_dxh = T::zero();
        let mut mean_dxh_xh = T::zero();
        for i in 0..row {
            dgamma[i] += g[i] * xh[i];
            dbeta[i] += g[i];
            let dxh = g[i] * gamma[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
        }
        mean_dxh = mean_dxh / n;
        mean_dxh_xh = mean_dxh_xh / n;
        let rs = saved.rstd[r];
        for i in 0..row {
            d[i] = rs * (g[i] * gamma[i] - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
    (dx, dgamma, dbeta)
}
