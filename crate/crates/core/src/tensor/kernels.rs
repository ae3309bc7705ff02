//! Numeric kernels shared by the forward and backward passes.

use super::Scalar;

/// `c (+)= a·b` for row-major `a: [m,k]`, `b: [k,n]`.
pub fn matmul_into<F: Scalar>(m: usize, k: usize, n: usize, a: &[F], b: &[F], c: &mut [F], acc: bool) {
    F::gemm(m, k, n, a, (k as isize, 1), b, (n as isize, 1), c, acc);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height + 2 * self.pad + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.width + 2 * self.pad + 1 - self.kw
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }
}

/// Unfolds one `[C,H,W]` image into `[C·kh·kw, oh·ow]` columns.
fn im2col<F: Scalar>(g: &ConvGeom, image: &[F], col: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.pad as isize;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let sy = y as isize + ki as isize - pad;
                    for x in 0..ow {
                        let sx = x as isize + kj as isize - pad;
                        dst[y * ow + x] = if sy >= 0 && sx >= 0 && (sy as usize) < g.height && (sx as usize) < g.width {
                            image[(c * g.height + sy as usize) * g.width + sx as usize]
                        } else {
                            F::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the image.
fn col2im<F: Scalar>(g: &ConvGeom, col: &[F], image: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let pad = g.pad as isize;
    for c in 0..g.in_ch {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let sy = y as isize + ki as isize - pad;
                    if sy < 0 || sy as usize >= g.height {
                        continue;
                    }
                    for x in 0..ow {
                        let sx = x as isize + kj as isize - pad;
                        if sx < 0 || sx as usize >= g.width {
                            continue;
                        }
                        let idx = (c * g.height + sy as usize) * g.width + sx as usize;
                        image[idx] = image[idx] + src[y * ow + x];
                    }
                }
            }
        }
    }
}

/// Stride-1 zero-padded 2-D convolution (cross-correlation) via im2col.
///
/// `input: [N,C,H,W]`, `kernel: [O,C,kh,kw]`, returns `[N,O,oh,ow]` values.
pub fn conv2d_forward<F: Scalar>(
    input: &[F],
    in_shape: [usize; 4],
    kernel: &[F],
    k_shape: [usize; 4],
    pad: usize,
) -> Vec<F> {
    let g = ConvGeom {
        batch: in_shape[0],
        in_ch: in_shape[1],
        height: in_shape[2],
        width: in_shape[3],
        out_ch: k_shape[0],
        kh: k_shape[2],
        kw: k_shape[3],
        pad,
    };
    conv_forward(&g, input, kernel)
}

pub(crate) fn conv_forward<F: Scalar>(g: &ConvGeom, input: &[F], kernel: &[F]) -> Vec<F> {
    let hw = g.out_h() * g.out_w();
    let img = g.in_ch * g.height * g.width;
    let mut out = vec![F::zero(); g.batch * g.out_ch * hw];
    let mut col = vec![F::zero(); g.patch() * hw];
    for n in 0..g.batch {
        im2col(g, &input[n * img..(n + 1) * img], &mut col);
        matmul_into(
            g.out_ch,
            g.patch(),
            hw,
            kernel,
            &col,
            &mut out[n * g.out_ch * hw..(n + 1) * g.out_ch * hw],
            false,
        );
    }
    out
}

/// Gradients of a convolution with respect to its input and kernel.
pub(crate) fn conv_backward<F: Scalar>(
    g: &ConvGeom,
    input: &[F],
    kernel: &[F],
    grad_out: &[F],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let hw = g.out_h() * g.out_w();
    let img = g.in_ch * g.height * g.width;
    let patch = g.patch();
    let mut d_input = want_input.then(|| vec![F::zero(); input.len()]);
    let mut d_kernel = want_kernel.then(|| vec![F::zero(); kernel.len()]);
    let mut col = vec![F::zero(); patch * hw];
    let mut d_col = vec![F::zero(); patch * hw];
    for n in 0..g.batch {
        let go = &grad_out[n * g.out_ch * hw..(n + 1) * g.out_ch * hw];
        if let Some(dk) = d_kernel.as_mut() {
            im2col(g, &input[n * img..(n + 1) * img], &mut col);
            // dK[o, p] += Σ_s go[o, s] · col[p, s]
            F::gemm(
                g.out_ch,
                hw,
                patch,
                go,
                (hw as isize, 1),
                &col,
                (1, hw as isize),
                dk,
                true,
            );
        }
        if let Some(di) = d_input.as_mut() {
            // dcol[p, s] = Σ_o K[o, p] · go[o, s]
            F::gemm(
                patch,
                g.out_ch,
                hw,
                kernel,
                (1, patch as isize),
                go,
                (hw as isize, 1),
                &mut d_col,
                false,
            );
            col2im(g, &d_col, &mut di[n * img..(n + 1) * img]);
        }
    }
    (d_input, d_kernel)
}

/// Row-wise softmax over the trailing axis of width `width`.
pub(crate) fn softmax_rows<F: Scalar>(x: &[F], width: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(F::neg_infinity(), F::max);
        let mut total = F::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

pub(crate) fn log_softmax_rows<F: Scalar>(x: &[F], width: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(F::neg_infinity(), F::max);
        let total = src.iter().fold(F::zero(), |acc, &s| acc + (s - max).exp());
        let lse = max + total.ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    out
}

/// Temperature sharpening of one distribution, computed in the log domain.
///
/// Zero entries stay exactly zero; unit temperature copies the input.
pub(crate) fn sharpen_row<F: Scalar>(p: &[F], inv_t: F, out: &mut [F]) {
    if inv_t == F::one() {
        out.copy_from_slice(p);
        return;
    }
    let mut max = F::neg_infinity();
    for (o, &v) in out.iter_mut().zip(p) {
        *o = if v > F::zero() {
            inv_t * v.ln()
        } else {
            F::neg_infinity()
        };
        max = max.max(*o);
    }
    if max == F::neg_infinity() {
        out.iter_mut().for_each(|o| *o = F::zero());
        return;
    }
    let mut total = F::zero();
    for o in out.iter() {
        if *o != F::neg_infinity() {
            total = total + (*o - max).exp();
        }
    }
    let lse = max + total.ln();
    for o in out.iter_mut() {
        *o = if *o == F::neg_infinity() {
            F::zero()
        } else {
            (*o - lse).exp()
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_conv(input: &[f64], s: [usize; 4], kernel: &[f64], k: [usize; 4], pad: usize) -> Vec<f64> {
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (o, kh, kw) = (k[0], k[2], k[3]);
        let oh = h + 2 * pad + 1 - kh;
        let ow = w + 2 * pad + 1 - kw;
        let mut out = vec![0.0; n * o * oh * ow];
        for b in 0..n {
            for oc in 0..o {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let sy = y as isize + i as isize - pad as isize;
                                    let sx = x as isize + j as isize - pad as isize;
                                    if sy < 0 || sx < 0 || sy as usize >= h || sx as usize >= w {
                                        continue;
                                    }
                                    acc += input[((b * c + ic) * h + sy as usize) * w + sx as usize]
                                        * kernel[((oc * c + ic) * kh + i) * kw + j];
                                }
                            }
                        }
                        out[((b * o + oc) * oh + y) * ow + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_kernel_over_ones_image() {
        let out = conv2d_forward(&[1.0f64; 25], [1, 1, 5, 5], &[1.0; 9], [1, 1, 3, 3], 1);
        assert_eq!(out.len(), 25);
        assert_eq!(out[12], 9.0);
        assert_eq!(out[0], 4.0);
        assert_eq!(out[2], 6.0);
        let naive = naive_conv(&[1.0; 25], [1, 1, 5, 5], &[1.0; 9], [1, 1, 3, 3], 1);
        assert_eq!(out, naive);
    }

    #[test]
    fn matches_nested_loops_on_irregular_input() {
        let s = [2, 3, 5, 4];
        let k = [2, 3, 3, 2];
        let input: Vec<f64> = (0..s.iter().product::<usize>())
            .map(|i| ((i * 37) % 11) as f64 - 5.0)
            .collect();
        let kernel: Vec<f64> = (0..k.iter().product::<usize>())
            .map(|i| ((i * 13) % 7) as f64 * 0.5 - 1.0)
            .collect();
        for pad in 0..2 {
            let fast = conv2d_forward(&input, s, &kernel, k, pad);
            let slow = naive_conv(&input, s, &kernel, k, pad);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharpen_keeps_zeros() {
        let mut out = [0.0f64; 3];
        sharpen_row(&[0.5, 0.0, 0.5], 2.0, &mut out);
        assert_eq!(out, [0.5, 0.0, 0.5]);
    }
}
