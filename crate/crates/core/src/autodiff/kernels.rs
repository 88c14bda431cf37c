//! Raw convolution and pooling kernels over flat NCHW buffers.

use super::element::matmul;
use super::Element;
use crate::parallel;

/// Samples per partial weight-gradient accumulator. Fixed so that the
/// reduction order does not depend on how many threads run.
const WGRAD_GROUP: usize = 8;

/// Geometry of a square-kernel convolution from an `h x w` plane to `out_h x out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.in_c * self.k * self.k
    }
    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }
    fn in_sample(&self) -> usize {
        self.in_c * self.h * self.w
    }
    fn out_sample(&self) -> usize {
        self.out_c * self.out_plane()
    }
}

/// Unfolds one `(c, h, w)` image into a `(c*k*k, out_h*out_w)` column matrix.
pub fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let plane = g.out_plane();
    for c in 0..g.in_c {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
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

/// Adjoint of [`im2col`]: scatters-adds columns back into a `(c, h, w)` image.
pub fn col2im<T: Element>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let plane = g.out_plane();
    for c in 0..g.in_c {
        let xc = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. `weight` is `(out_c, in_c, k, k)`.
pub fn conv2d_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let mut out = vec![T::zero(); g.batch * g.out_sample()];
    parallel::for_each_chunk_mut(&mut out, g.out_sample(), |n, y| {
        let mut cols = vec![T::zero(); g.col_rows() * g.out_plane()];
        im2col(&x[n * g.in_sample()..(n + 1) * g.in_sample()], g, &mut cols);
        matmul(
            false,
            false,
            g.out_c,
            g.out_plane(),
            g.col_rows(),
            weight,
            &cols,
            T::zero(),
            y,
        );
        if let Some(b) = bias {
            for (o, row) in y.chunks_mut(g.out_plane()).enumerate() {
                row.iter_mut().for_each(|v| *v += b[o]);
            }
        }
    });
    out
}

/// Gradient of [`conv2d_forward`] with respect to its input.
pub fn conv2d_backward_input<T: Element>(dy: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let mut dx = vec![T::zero(); g.batch * g.in_sample()];
    parallel::for_each_chunk_mut(&mut dx, g.in_sample(), |n, dxn| {
        let mut cols = vec![T::zero(); g.col_rows() * g.out_plane()];
        let dyn_ = &dy[n * g.out_sample()..(n + 1) * g.out_sample()];
        matmul(
            true,
            false,
            g.col_rows(),
            g.out_plane(),
            g.out_c,
            weight,
            dyn_,
            T::zero(),
            &mut cols,
        );
        col2im(&cols, g, dxn);
    });
    dx
}

/// Gradient of [`conv2d_forward`] with respect to the weight.
pub fn conv2d_backward_weight<T: Element>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let wlen = g.out_c * g.col_rows();
    let groups = g.batch.div_ceil(WGRAD_GROUP);
    let partials = parallel::map_indices(groups, |grp| {
        let mut acc = vec![T::zero(); wlen];
        let mut cols = vec![T::zero(); g.col_rows() * g.out_plane()];
        for n in grp * WGRAD_GROUP..((grp + 1) * WGRAD_GROUP).min(g.batch) {
            im2col(&x[n * g.in_sample()..(n + 1) * g.in_sample()], g, &mut cols);
            let dyn_ = &dy[n * g.out_sample()..(n + 1) * g.out_sample()];
            matmul(
                false,
                true,
                g.out_c,
                g.col_rows(),
                g.out_plane(),
                dyn_,
                &cols,
                T::one(),
                &mut acc,
            );
        }
        acc
    });
    reduce_in_order(partials, wlen)
}

/// Per-channel sums of `dy` over batch and spatial positions.
pub fn bias_grad<T: Element>(dy: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let off = (n * channels + c) * plane;
            *acc += dy[off..off + plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// Transposed convolution expressed through the adjoint conv geometry `g`:
/// `g` maps the transposed op's *output* `(out_c of transpose = g.in_c)` to its
/// *input* `(g.out_c)`. `weight` is `(g.out_c, g.in_c, k, k)`, i.e. the
/// `(in, out, k, k)` layout of the transposed layer.
pub fn conv_transpose_forward<T: Element>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    g: &ConvGeom,
) -> Vec<T> {
    let mut y = conv2d_backward_input(x, weight, g);
    if let Some(b) = bias {
        let plane = g.h * g.w;
        parallel::for_each_chunk_mut(&mut y, g.in_sample(), |_, yn| {
            for (c, row) in yn.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v += b[c]);
            }
        });
    }
    y
}

/// Input gradient of the transposed convolution: a plain forward conv of `dy`.
pub fn conv_transpose_backward_input<T: Element>(dy: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    conv2d_forward(dy, weight, None, g)
}

/// Weight gradient of the transposed convolution.
pub fn conv_transpose_backward_weight<T: Element>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    // Same contraction as the forward conv's weight gradient with roles swapped.
    conv2d_backward_weight(dy, x, g)
}

fn reduce_in_order<T: Element>(partials: Vec<Vec<T>>, len: usize) -> Vec<T> {
    let mut it = partials.into_iter();
    let mut acc = it.next().unwrap_or_else(|| vec![T::zero(); len]);
    for p in it {
        acc.iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
    }
    acc
}

/// Max pooling over `(batch*channels)` planes; returns values and flat argmax indices.
pub fn maxpool_forward<T: Element>(
    x: &[T],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0usize; planes * oh * ow];
    let plane_out = oh * ow;
    let mut paired: Vec<(T, usize)> = vec![(T::zero(), 0); planes * plane_out];
    parallel::for_each_chunk_mut(&mut paired, plane_out, |p, dst| {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = base + oy * stride * w + ox * stride;
                for wy in 0..window {
                    for wx in 0..window {
                        let i = base + (oy * stride + wy) * w + ox * stride + wx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                dst[oy * ow + ox] = (best, best_i);
            }
        }
    });
    for (i, (v, a)) in paired.into_iter().enumerate() {
        out[i] = v;
        arg[i] = a;
    }
    (out, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(
        batch: usize,
        in_c: usize,
        h: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> ConvGeom {
        let o = (h + 2 * pad - k) / stride + 1;
        ConvGeom {
            batch,
            in_c,
            h,
            w: h,
            out_c,
            k,
            stride,
            pad,
            out_h: o,
            out_w: o,
        }
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let g = geom(1, 2, 5, 1, 3, 2, 1);
        let x: Vec<f64> = (0..g.in_sample()).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..g.col_rows() * g.out_plane())
            .map(|i| (i as f64 * 0.3).cos())
            .collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&c, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn maxpool_prefers_first_maximum() {
        let x = [1.0f64, 1.0, 1.0, 1.0];
        let (v, a) = maxpool_forward(&x, 1, 2, 2, 2, 2);
        assert_eq!(v, vec![1.0]);
        assert_eq!(a, vec![0]);
    }
}
