use crate::scalar::Scalar;

/// Spatial window geometry over NCHW input (planes = N·C).
#[derive(Clone, Copy, Debug)]
pub struct PoolGeom {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(shape: &[usize], kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if shape.len() != 4 || kernel == 0 || stride == 0 || pad > kernel / 2 {
            return None;
        }
        let (h, w) = (shape[2], shape[3]);
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return None;
        }
        Some(Self {
            planes: shape[0] * shape[1],
            height: h,
            width: w,
            kernel,
            stride,
            pad,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    fn window(&self, o: usize, extent: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + self.kernel as isize) as usize).min(extent);
        (lo, hi)
    }
}

/// Max pooling; padding never wins. Returns the flat argmax of every output,
/// with ties resolved to the first index in row-major window order.
pub fn max_pool<T: Scalar>(x: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let (hw, ohw) = (g.height * g.width, g.out_h * g.out_w);
    let mut out = Vec::with_capacity(g.planes * ohw);
    let mut arg = Vec::with_capacity(g.planes * ohw);
    for p in 0..g.planes {
        for oy in 0..g.out_h {
            let (y0, y1) = g.window(oy, g.height);
            for ox in 0..g.out_w {
                let (x0, x1) = g.window(ox, g.width);
                let mut best = T::neg_infinity();
                let mut best_i = p * hw + y0 * g.width + x0;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        let i = p * hw + y * g.width + xx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// Average pooling with zero padding counted in the divisor (`kernel²`).
pub fn avg_pool<T: Scalar>(x: &[T], g: &PoolGeom) -> Vec<T> {
    let (hw, ohw) = (g.height * g.width, g.out_h * g.out_w);
    let inv = T::from_f64(1.0 / (g.kernel * g.kernel) as f64);
    let mut out = vec![T::zero(); g.planes * ohw];
    // Separable box sums: rows then columns.
    let mut rows = vec![T::zero(); g.height * g.out_w];
    for p in 0..g.planes {
        let plane = &x[p * hw..(p + 1) * hw];
        for y in 0..g.height {
            for ox in 0..g.out_w {
                let (x0, x1) = g.window(ox, g.width);
                rows[y * g.out_w + ox] = plane[y * g.width + x0..y * g.width + x1].iter().copied().sum();
            }
        }
        for oy in 0..g.out_h {
            let (y0, y1) = g.window(oy, g.height);
            for ox in 0..g.out_w {
                let mut acc = T::zero();
                for y in y0..y1 {
                    acc += rows[y * g.out_w + ox];
                }
                out[p * ohw + oy * g.out_w + ox] = acc * inv;
            }
        }
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(dy: &[T], g: &PoolGeom) -> Vec<T> {
    let (hw, ohw) = (g.height * g.width, g.out_h * g.out_w);
    let inv = T::from_f64(1.0 / (g.kernel * g.kernel) as f64);
    let mut dx = vec![T::zero(); g.planes * hw];
    for p in 0..g.planes {
        for oy in 0..g.out_h {
            let (y0, y1) = g.window(oy, g.height);
            for ox in 0..g.out_w {
                let (x0, x1) = g.window(ox, g.width);
                let v = dy[p * ohw + oy * g.out_w + ox] * inv;
                for y in y0..y1 {
                    for d in &mut dx[p * hw + y * g.width + x0..p * hw + y * g.width + x1] {
                        *d += v;
                    }
                }
            }
        }
    }
    dx
}
