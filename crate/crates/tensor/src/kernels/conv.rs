use crate::scalar::{gemm, Scalar};

/// Geometry of a 2-D convolution over NCHW input with OIHW kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Option<Self> {
        if x.len() != 4 || w.len() != 4 || x[1] != w[1] || stride == 0 {
            return None;
        }
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return None;
        }
        Some(Self {
            batch: x[0],
            in_ch: x[1],
            height: h,
            width: wd,
            out_ch: w[0],
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (wd + 2 * pad - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1 kernels with unit stride and no padding need no column buffer.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_ch {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.in_ch {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += row[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * p;
    let mut out = vec![T::zero(); g.batch * out_len];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols[..]
        };
        gemm(g.out_ch, k, p, w, false, src, false, T::zero(), ob);
        if let Some(bias) = bias {
            for (o, &bv) in bias.iter().enumerate() {
                for v in &mut ob[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

/// Gradients w.r.t. input, kernel and bias; each only when requested.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let (k, p) = (g.patch_len(), g.positions());
    let in_len = g.in_ch * g.height * g.width;
    let out_len = g.out_ch * p;
    let mut dx = need.0.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = need.1.then(|| vec![T::zero(); g.out_ch * k]);
    let db = need.2.then(|| {
        let mut db = vec![T::zero(); g.out_ch];
        for b in 0..g.batch {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += dy[b * out_len + o * p..b * out_len + (o + 1) * p].iter().copied().sum::<T>();
            }
        }
        db
    });
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { k * p }];
    let mut dcols = vec![T::zero(); if need.0 && !g.is_pointwise() { k * p } else { 0 }];
    for b in 0..g.batch {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_len..(b + 1) * in_len];
            let src = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g, &mut cols);
                &cols[..]
            };
            // dw[o,k] += dy[o,p] · cols[k,p]^T
            gemm(g.out_ch, p, k, dyb, false, src, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, g.out_ch, p, w, true, dyb, false, T::zero(), dxb);
            } else {
                gemm(k, g.out_ch, p, w, true, dyb, false, T::zero(), &mut dcols);
                col2im(&dcols, g, dxb);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.out_ch * g.out_h * g.out_w];
        for b in 0..g.batch {
            for o in 0..g.out_ch {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let mut acc = 0.0;
                        for c in 0..g.in_ch {
                            for ky in 0..g.kh {
                                for kx in 0..g.kw {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                        continue;
                                    }
                                    acc += x[((b * g.in_ch + c) * g.height + iy as usize) * g.width + ix as usize]
                                        * w[((o * g.in_ch + c) * g.kh + ky) * g.kw + kx];
                                }
                            }
                        }
                        out[((b * g.out_ch + o) * g.out_h + oy) * g.out_w + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_loop() {
        for &(stride, pad, kh) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 3, 7), (1, 0, 3)] {
            let x: Vec<f64> = (0..2 * 3 * 9 * 7).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let w: Vec<f64> = (0..4 * 3 * kh * kh).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
            let g = ConvGeom::new(&[2, 3, 9, 7], &[4, 3, kh, kh], stride, pad).unwrap();
            let got = conv2d_forward(&x, &w, None, &g);
            let want = naive(&x, &w, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}");
            }
        }
    }
}
