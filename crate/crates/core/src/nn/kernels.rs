//! Raw compute kernels on channel-last buffers.
//!
//! Convolutions are lowered to GEMM through chunked im2col so that the
//! patch matrix never exceeds [`CHUNK_FLOATS`] elements, which keeps the
//! full-resolution 3D layers inside a few megabytes of scratch space.

use crate::tensor::{Shape, Tensor};

const CHUNK_FLOATS: usize = 1 << 20;

/// Keras-style 'same' padding for stride one: the extra cell of an even
/// kernel goes after the input.
pub fn same_pad_before(k: usize) -> usize {
    (k - 1) / 2
}

/// `c[m×n] = alpha · a[m×k] · b[k×n] + beta · c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: usize,
    csa: usize,
    b: &[f32],
    rsb: usize,
    csb: usize,
    beta: f32,
    c: &mut [f32],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1));
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    h: usize,
    w: usize,
    d: usize,
    cin: usize,
    kernel: [usize; 3],
    pad: [usize; 3],
}

impl ConvGeom {
    fn new(shape: Shape, kernel: [usize; 3]) -> Self {
        ConvGeom {
            h: shape.h,
            w: shape.w,
            d: shape.d,
            cin: shape.c,
            kernel,
            pad: kernel.map(same_pad_before),
        }
    }

    fn patch_len(&self) -> usize {
        self.kernel.iter().product::<usize>() * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1]
    }

    fn positions(&self) -> usize {
        self.h * self.w * self.d
    }

    fn chunk_rows(&self) -> usize {
        (CHUNK_FLOATS / self.patch_len().max(1)).clamp(1, self.positions().max(1))
    }

    /// Visits every (patch column offset, source offset) pair of output
    /// position `p`; `None` marks a padded cell.
    #[inline]
    fn for_each_tap(&self, p: usize, mut f: impl FnMut(usize, Option<usize>)) {
        let (i, j, l) = (p / (self.w * self.d), (p / self.d) % self.w, p % self.d);
        let [kh, kw, kd] = self.kernel;
        let mut col = 0;
        for a in 0..kh {
            let si = (i + a).wrapping_sub(self.pad[0]);
            for b in 0..kw {
                let sj = (j + b).wrapping_sub(self.pad[1]);
                for e in 0..kd {
                    let sl = (l + e).wrapping_sub(self.pad[2]);
                    let src = if si < self.h && sj < self.w && sl < self.d {
                        Some(((si * self.w + sj) * self.d + sl) * self.cin)
                    } else {
                        None
                    };
                    f(col, src);
                    col += self.cin;
                }
            }
        }
    }

    fn im2col(&self, x: &[f32], p0: usize, rows: usize, col: &mut [f32]) {
        let k = self.patch_len();
        let cin = self.cin;
        for r in 0..rows {
            let dst = &mut col[r * k..(r + 1) * k];
            self.for_each_tap(p0 + r, |off, src| match src {
                Some(s) => dst[off..off + cin].copy_from_slice(&x[s..s + cin]),
                None => dst[off..off + cin].fill(0.0),
            });
        }
    }

    fn col2im_add(&self, dcol: &[f32], p0: usize, rows: usize, dx: &mut [f32]) {
        let k = self.patch_len();
        let cin = self.cin;
        for r in 0..rows {
            let src_row = &dcol[r * k..(r + 1) * k];
            self.for_each_tap(p0 + r, |off, dst| {
                if let Some(s) = dst {
                    for (o, v) in dx[s..s + cin].iter_mut().zip(&src_row[off..off + cin]) {
                        *o += v;
                    }
                }
            });
        }
    }
}

/// Stride-one 'same' convolution. `weight` is laid out
/// `[kh][kw][kd][cin][cout]`.
pub fn conv_forward(
    x: &Tensor,
    weight: &[f32],
    bias: Option<&[f32]>,
    kernel: [usize; 3],
    cout: usize,
) -> Tensor {
    let s = x.shape();
    let g = ConvGeom::new(s, kernel);
    let k = g.patch_len();
    assert_eq!(weight.len(), k * cout, "conv weight does not match geometry");
    let positions = g.positions();
    let out_shape = s.with_channels(cout);
    let mut out = vec![0.0f32; out_shape.len()];
    let rows_per = g.chunk_rows();
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0f32; rows_per * k]
    };
    for n in 0..s.n {
        let xin = &x.data()[n * positions * g.cin..(n + 1) * positions * g.cin];
        let yout = &mut out[n * positions * cout..(n + 1) * positions * cout];
        let mut p0 = 0;
        while p0 < positions {
            let rows = rows_per.min(positions - p0);
            let a: &[f32] = if g.is_pointwise() {
                &xin[p0 * k..(p0 + rows) * k]
            } else {
                g.im2col(xin, p0, rows, &mut col);
                &col[..rows * k]
            };
            gemm(
                rows,
                k,
                cout,
                a,
                k,
                1,
                weight,
                cout,
                1,
                0.0,
                &mut yout[p0 * cout..(p0 + rows) * cout],
                cout,
            );
            p0 += rows;
        }
        if let Some(b) = bias {
            for row in yout.chunks_exact_mut(cout) {
                for (o, bv) in row.iter_mut().zip(b) {
                    *o += bv;
                }
            }
        }
    }
    Tensor::new(out_shape, out).expect("conv output shape")
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

pub fn conv_backward(
    x: &Tensor,
    weight: &[f32],
    kernel: [usize; 3],
    grad_out: &Tensor,
    need_input: bool,
) -> ConvGrads {
    let s = x.shape();
    let g = ConvGeom::new(s, kernel);
    let k = g.patch_len();
    let cout = grad_out.shape().c;
    let positions = g.positions();
    let rows_per = g.chunk_rows();
    let mut dw = vec![0.0f32; k * cout];
    let mut db = vec![0.0f64; cout];
    let mut dx = if need_input {
        vec![0.0f32; s.len()]
    } else {
        Vec::new()
    };
    let mut col = vec![0.0f32; if g.is_pointwise() { 0 } else { rows_per * k }];
    let mut dcol = vec![0.0f32; if need_input { rows_per * k } else { 0 }];
    for n in 0..s.n {
        let xin = &x.data()[n * positions * g.cin..(n + 1) * positions * g.cin];
        let gy = &grad_out.data()[n * positions * cout..(n + 1) * positions * cout];
        for row in gy.chunks_exact(cout) {
            for (acc, v) in db.iter_mut().zip(row) {
                *acc += *v as f64;
            }
        }
        let mut p0 = 0;
        while p0 < positions {
            let rows = rows_per.min(positions - p0);
            let gy_chunk = &gy[p0 * cout..(p0 + rows) * cout];
            let a: &[f32] = if g.is_pointwise() {
                &xin[p0 * k..(p0 + rows) * k]
            } else {
                g.im2col(xin, p0, rows, &mut col);
                &col[..rows * k]
            };
            // dW += colᵀ · dY
            gemm(k, rows, cout, a, 1, k, gy_chunk, cout, 1, 1.0, &mut dw, cout);
            if need_input {
                // dcol = dY · Wᵀ
                let dc = &mut dcol[..rows * k];
                gemm(rows, cout, k, gy_chunk, cout, 1, weight, 1, cout, 0.0, dc, k);
                let dxn = &mut dx[n * positions * g.cin..(n + 1) * positions * g.cin];
                if g.is_pointwise() {
                    for (o, v) in dxn[p0 * k..(p0 + rows) * k].iter_mut().zip(dc.iter()) {
                        *o += v;
                    }
                } else {
                    g.col2im_add(dc, p0, rows, dxn);
                }
            }
            p0 += rows;
        }
    }
    ConvGrads {
        input: need_input.then(|| Tensor::new(s, dx).expect("conv input grad shape")),
        weight: dw,
        bias: db.into_iter().map(|v| v as f32).collect(),
    }
}

/// Non-overlapping max pooling with window = stride = `factor`; trailing
/// cells that do not fill a window are dropped.
pub fn max_pool_forward(x: &Tensor, factor: [usize; 3]) -> (Tensor, Vec<u32>) {
    let s = x.shape();
    let [fh, fw, fd] = factor;
    let out_shape = Shape {
        h: s.h / fh,
        w: s.w / fw,
        d: s.d / fd,
        ..s
    };
    let mut out = vec![0.0f32; out_shape.len()];
    let mut arg = vec![0u32; out_shape.len()];
    let c = s.c;
    let src = x.data();
    let mut o = 0;
    for n in 0..s.n {
        for i in 0..out_shape.h {
            for j in 0..out_shape.w {
                for l in 0..out_shape.d {
                    for ch in 0..c {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for a in 0..fh {
                            for b in 0..fw {
                                for e in 0..fd {
                                    let idx = ((((n * s.h + i * fh + a) * s.w + j * fw + b)
                                        * s.d
                                        + l * fd
                                        + e)
                                        * c)
                                        + ch;
                                    if best_idx == usize::MAX || src[idx] > best {
                                        best = src[idx];
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        out[o] = best;
                        arg[o] = best_idx as u32;
                        o += 1;
                    }
                }
            }
        }
    }
    (
        Tensor::new(out_shape, out).expect("pool output shape"),
        arg,
    )
}

pub fn max_pool_backward(input_shape: Shape, argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut dx = vec![0.0f32; input_shape.len()];
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        dx[idx as usize] += g;
    }
    Tensor::new(input_shape, dx).expect("pool grad shape")
}

/// Nearest-neighbour up-sampling by an integer factor per spatial axis.
pub fn upsample_forward(x: &Tensor, factor: [usize; 3]) -> Tensor {
    let s = x.shape();
    let [fh, fw, fd] = factor;
    let out_shape = Shape {
        h: s.h * fh,
        w: s.w * fw,
        d: s.d * fd,
        ..s
    };
    let c = s.c;
    let mut out = Vec::with_capacity(out_shape.len());
    let src = x.data();
    for n in 0..s.n {
        for i in 0..out_shape.h {
            for j in 0..out_shape.w {
                for l in 0..out_shape.d {
                    let base = (((n * s.h + i / fh) * s.w + j / fw) * s.d + l / fd) * c;
                    out.extend_from_slice(&src[base..base + c]);
                }
            }
        }
    }
    Tensor::new(out_shape, out).expect("upsample output shape")
}

pub fn upsample_backward(input_shape: Shape, factor: [usize; 3], grad_out: &Tensor) -> Tensor {
    let s = input_shape;
    let [fh, fw, fd] = factor;
    let os = grad_out.shape();
    let c = s.c;
    let mut dx = vec![0.0f32; s.len()];
    let g = grad_out.data();
    let mut o = 0;
    for n in 0..os.n {
        for i in 0..os.h {
            for j in 0..os.w {
                for l in 0..os.d {
                    let base = (((n * s.h + i / fh) * s.w + j / fw) * s.d + l / fd) * c;
                    for ch in 0..c {
                        dx[base + ch] += g[o + ch];
                    }
                    o += c;
                }
            }
        }
    }
    Tensor::new(s, dx).expect("upsample grad shape")
}

/// Per-channel mean and biased variance over every non-channel axis.
pub fn channel_moments(x: &Tensor) -> (Vec<f32>, Vec<f32>) {
    let c = x.shape().c;
    let count = (x.len() / c.max(1)) as f64;
    let mut sum = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += *v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; c];
    for row in x.data().chunks_exact(c) {
        for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
            let d = *v as f64 - m;
            *s += d * d;
        }
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        sq.iter().map(|s| (s / count) as f32).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(x: &Tensor, w: &[f32], kernel: [usize; 3], cout: usize) -> Tensor {
        let s = x.shape();
        let pad = kernel.map(same_pad_before);
        let mut out = Tensor::zeros(s.with_channels(cout));
        let data = out.data_mut();
        for n in 0..s.n {
            for i in 0..s.h {
                for j in 0..s.w {
                    for l in 0..s.d {
                        for co in 0..cout {
                            let mut acc = 0.0f64;
                            for a in 0..kernel[0] {
                                for b in 0..kernel[1] {
                                    for e in 0..kernel[2] {
                                        let si = i as isize + a as isize - pad[0] as isize;
                                        let sj = j as isize + b as isize - pad[1] as isize;
                                        let sl = l as isize + e as isize - pad[2] as isize;
                                        if si < 0
                                            || sj < 0
                                            || sl < 0
                                            || si >= s.h as isize
                                            || sj >= s.w as isize
                                            || sl >= s.d as isize
                                        {
                                            continue;
                                        }
                                        for ci in 0..s.c {
                                            let xi = ((((n * s.h + si as usize) * s.w
                                                + sj as usize)
                                                * s.d
                                                + sl as usize)
                                                * s.c)
                                                + ci;
                                            let wi = (((a * kernel[1] + b) * kernel[2] + e)
                                                * s.c
                                                + ci)
                                                * cout
                                                + co;
                                            acc += x.data()[xi] as f64 * w[wi] as f64;
                                        }
                                    }
                                }
                            }
                            data[(((n * s.h + i) * s.w + j) * s.d + l) * cout + co] = acc as f32;
                        }
                    }
                }
            }
        }
        out
    }

    fn ramp(len: usize, scale: f32) -> Vec<f32> {
        (0..len)
            .map(|i| ((i * 7919) % 97) as f32 / 97.0 * scale - scale / 2.0)
            .collect()
    }

    #[test]
    fn conv_matches_direct_evaluation() {
        for (shape, kernel) in [
            (Shape::planar(2, 5, 4, 3), [3, 3, 1]),
            (Shape::planar(1, 4, 4, 2), [2, 2, 1]),
            (Shape::volumetric(1, 4, 3, 3, 2), [3, 3, 3]),
            (Shape::volumetric(1, 3, 3, 2, 4), [1, 1, 1]),
        ] {
            let x = Tensor::new(shape, ramp(shape.len(), 2.0)).unwrap();
            let cout = 3;
            let w = ramp(kernel.iter().product::<usize>() * shape.c * cout, 1.0);
            let fast = conv_forward(&x, &w, None, kernel, cout);
            let slow = direct_conv(&x, &w, kernel, cout);
            assert!(fast.max_abs_diff(&slow) < 1e-5, "{shape} {kernel:?}");
        }
    }

    #[test]
    fn even_kernel_pads_after() {
        assert_eq!(same_pad_before(2), 0);
        assert_eq!(same_pad_before(3), 1);
        assert_eq!(same_pad_before(1), 0);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let x = Tensor::new(Shape::volumetric(1, 4, 4, 4, 2), ramp(128, 1.0)).unwrap();
        let (p, arg) = max_pool_forward(&x, [2, 2, 2]);
        assert_eq!(p.shape(), Shape::volumetric(1, 2, 2, 2, 2));
        assert_eq!(arg.len(), p.len());
        for (v, &i) in p.data().iter().zip(&arg) {
            assert_eq!(*v, x.data()[i as usize]);
        }
        let u = upsample_forward(&p, [2, 2, 2]);
        assert_eq!(u.shape(), x.shape());
    }

    #[test]
    fn moments_of_constant_channel() {
        let x = Tensor::filled(Shape::planar(2, 3, 3, 2), 4.0);
        let (m, v) = channel_moments(&x);
        assert_eq!(m, vec![4.0, 4.0]);
        assert_eq!(v, vec![0.0, 0.0]);
    }
}
