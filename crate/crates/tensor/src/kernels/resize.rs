use crate::scalar::Scalar;

/// Per-output-index source taps for linear interpolation with half-pixel
/// centers (align-corners off). Negative source coordinates clamp to 0.
#[derive(Clone, Debug)]
pub struct Taps {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl Taps {
    pub fn new(input: usize, output: usize) -> Self {
        let scale = input as f64 / output as f64;
        let mut taps = Taps { lo: Vec::with_capacity(output), hi: Vec::with_capacity(output), frac: Vec::with_capacity(output) };
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(src - lo as f64);
        }
        taps
    }
}

pub fn bilinear<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (ty, tx) = (Taps::new(h, oh), Taps::new(w, ow));
    let fx: Vec<T> = tx.frac.iter().map(|&f| T::from_f64(f)).collect();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let fy = T::from_f64(ty.frac[oy]);
            let r0 = &plane[ty.lo[oy] * w..][..w];
            let r1 = &plane[ty.hi[oy] * w..][..w];
            for ox in 0..ow {
                let (l, r, f) = (tx.lo[ox], tx.hi[ox], fx[ox]);
                let top = r0[l] + (r0[r] - r0[l]) * f;
                let bot = r1[l] + (r1[r] - r1[l]) * f;
                out.push(top + (bot - top) * fy);
            }
        }
    }
    out
}

pub fn bilinear_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let (ty, tx) = (Taps::new(h, oh), Taps::new(w, ow));
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let fy = T::from_f64(ty.frac[oy]);
            for ox in 0..ow {
                let g = dy[(p * oh + oy) * ow + ox];
                let fx = T::from_f64(tx.frac[ox]);
                let (l, r) = (tx.lo[ox], tx.hi[ox]);
                let top = g * (T::one() - fy);
                let bot = g * fy;
                plane[ty.lo[oy] * w + l] += top * (T::one() - fx);
                plane[ty.lo[oy] * w + r] += top * fx;
                plane[ty.hi[oy] * w + l] += bot * (T::one() - fx);
                plane[ty.hi[oy] * w + r] += bot * fx;
            }
        }
    }
    dx
}
