// Raw kernels over flat slices. Shapes are validated by the callers in layer.rs.

use super::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }
    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }
    fn rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
    fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for ci in 0..g.in_ch {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + kh) as isize - g.pad as isize;
                    let line = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (x_out, d) in line.iter_mut().enumerate() {
                        let ix = (x_out * g.stride + kw) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], gx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for ci in 0..g.in_ch {
        let plane = &mut gx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + kh) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for x_out in 0..ow {
                        let ix = (x_out * g.stride + kw) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[y * ow + x_out];
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    let (rows, cols_n) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * cols_n];
    let in_len = g.in_ch * g.h * g.w;
    let out_len = g.out_ch * cols_n;
    for n in 0..batch {
        im2col(g, &x[n * in_len..(n + 1) * in_len], &mut cols);
        let o = &mut out[n * out_len..(n + 1) * out_len];
        for co in 0..g.out_ch {
            let dst = &mut o[co * cols_n..(co + 1) * cols_n];
            dst.fill(bias[co]);
            let wrow = &weight[co * rows..(co + 1) * rows];
            for (r, &wv) in wrow.iter().enumerate() {
                axpy(wv, &cols[r * cols_n..(r + 1) * cols_n], dst);
            }
        }
    }
}

/// Accumulates gradients for input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    batch: usize,
    x: &[T],
    weight: &[T],
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    let (rows, cols_n) = (g.rows(), g.cols());
    let mut cols = vec![T::zero(); rows * cols_n];
    let mut gcols = vec![T::zero(); rows * cols_n];
    let in_len = g.in_ch * g.h * g.w;
    let out_len = g.out_ch * cols_n;
    for n in 0..batch {
        im2col(g, &x[n * in_len..(n + 1) * in_len], &mut cols);
        let go = &gout[n * out_len..(n + 1) * out_len];
        gcols.fill(T::zero());
        for co in 0..g.out_ch {
            let grow = &go[co * cols_n..(co + 1) * cols_n];
            gb[co] += grow.iter().copied().sum();
            let wrow = &weight[co * rows..(co + 1) * rows];
            let gwrow = &mut gw[co * rows..(co + 1) * rows];
            for r in 0..rows {
                let c = &cols[r * cols_n..(r + 1) * cols_n];
                gwrow[r] += dot(grow, c);
                axpy(wrow[r], grow, &mut gcols[r * cols_n..(r + 1) * cols_n]);
            }
        }
        col2im(g, &gcols, &mut gx[n * in_len..(n + 1) * in_len]);
    }
}

pub(crate) fn dense_forward<T: Real>(
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[T],
    weight: &[T],
    bias: &[T],
    out: &mut [T],
) {
    for n in 0..batch {
        let xi = &x[n * fan_in..(n + 1) * fan_in];
        for k in 0..fan_out {
            out[n * fan_out + k] = bias[k] + dot(&weight[k * fan_in..(k + 1) * fan_in], xi);
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Real>(
    batch: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[T],
    weight: &[T],
    gout: &[T],
    gx: &mut [T],
    gw: &mut [T],
    gb: &mut [T],
) {
    for n in 0..batch {
        let xi = &x[n * fan_in..(n + 1) * fan_in];
        for k in 0..fan_out {
            let g = gout[n * fan_out + k];
            gb[k] += g;
            axpy(g, xi, &mut gw[k * fan_in..(k + 1) * fan_in]);
            axpy(
                g,
                &weight[k * fan_in..(k + 1) * fan_in],
                &mut gx[n * fan_in..(n + 1) * fan_in],
            );
        }
    }
}

/// 2x2 average pooling with stride 2 over `planes` planes of `h x w`.
pub(crate) fn avg_pool2_forward<T: Real>(planes: usize, h: usize, w: usize, x: &[T], out: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = super::lit::<T>(0.25);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xo in 0..ow {
                let i = 2 * y * w + 2 * xo;
                dst[y * ow + xo] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
}

pub(crate) fn avg_pool2_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    gout: &[T],
    gx: &mut [T],
) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = super::lit::<T>(0.25);
    for p in 0..planes {
        let src = &gout[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut gx[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xo in 0..ow {
                let g = src[y * ow + xo] * quarter;
                let i = 2 * y * w + 2 * xo;
                dst[i] += g;
                dst[i + 1] += g;
                dst[i + w] += g;
                dst[i + w + 1] += g;
            }
        }
    }
}
