//! Low-level array kernels shared by the graph operations.
//!
//! Everything is plain row-major slice arithmetic; shapes are validated by
//! the graph layer before these run.

use super::tensor::Scalar;

/// out[m,n] = a[m,k] . b[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
}

/// out[k,n] += a[m,k]^T . g[m,n]
pub fn matmul_accum_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += aik * gv;
            }
        }
    }
}

/// out[m,k] += g[m,n] . b[k,n]^T
pub fn matmul_accum_a_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                acc += gv * bv;
            }
            out_row[kk] += acc;
        }
    }
}

/// Spatial size of a convolution output along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Cross-correlation. input [N,C,H,W], kernel [O,C,kh,kw] -> out [N,O,OH,OW].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((oi * c + ci) * kh + ky) * kw + kx;
                                acc += input[xi] * kernel[wi];
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
}

/// Gradients of `conv2d_forward` w.r.t. input and kernel (accumulating).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    mut grad_input: Option<&mut [T]>,
    mut grad_kernel: Option<&mut [T]>,
) {
    for ni in 0..n {
        for oi in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad_out[((ni * o + oi) * oh + oy) * ow + ox];
                    if g == T::zero() {
                        continue;
                    }
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((ni * c + ci) * h + iy as usize) * w + ix as usize;
                                let wi = ((oi * c + ci) * kh + ky) * kw + kx;
                                if let Some(gi) = grad_input.as_deref_mut() {
                                    gi[xi] += g * kernel[wi];
                                }
                                if let Some(gk) = grad_kernel.as_deref_mut() {
                                    gk[wi] += g * input[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Transposed convolution output size along one axis.
pub fn conv_transpose_out_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * padding + 1 {
        return None;
    }
    Some(grown - 2 * padding)
}

/// Transposed convolution. input [N,C,H,W], kernel [C,O,kh,kw] -> out [N,O,OH,OW].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_transpose_forward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    out: &mut [T],
) {
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = input[((ni * c + ci) * h + y) * w + x];
                    if v == T::zero() {
                        continue;
                    }
                    for oi in 0..o {
                        for ky in 0..kh {
                            let oy = (y * stride + ky) as isize - padding as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (x * stride + kx) as isize - padding as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let wi = ((ci * o + oi) * kh + ky) * kw + kx;
                                out[((ni * o + oi) * oh + oy as usize) * ow + ox as usize] +=
                                    v * kernel[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of `conv2d_transpose_forward` (accumulating).
#[allow(clippy::too_many_arguments)]
pub fn conv2d_transpose_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    grad_out: &[T],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    mut grad_input: Option<&mut [T]>,
    mut grad_kernel: Option<&mut [T]>,
) {
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let xi = ((ni * c + ci) * h + y) * w + x;
                    let v = input[xi];
                    let mut din = T::zero();
                    for oi in 0..o {
                        for ky in 0..kh {
                            let oy = (y * stride + ky) as isize - padding as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (x * stride + kx) as isize - padding as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                let wi = ((ci * o + oi) * kh + ky) * kw + kx;
                                let g =
                                    grad_out[((ni * o + oi) * oh + oy as usize) * ow + ox as usize];
                                din += g * kernel[wi];
                                if let Some(gk) = grad_kernel.as_deref_mut() {
                                    gk[wi] += g * v;
                                }
                            }
                        }
                    }
                    if let Some(gi) = grad_input.as_deref_mut() {
                        gi[xi] += din;
                    }
                }
            }
        }
    }
}

/// Layout of a normalized tensor: element (outer, channel, inner) lives at
/// `(outer * channels + channel) * inner + i`. A [B,F] matrix is
/// (B, F, 1); an [N,C,H,W] image batch is (N, C, H*W).
#[derive(Debug, Clone, Copy)]
pub struct NormView {
    pub outer: usize,
    pub channels: usize,
    pub inner: usize,
}

impl NormView {
    pub fn for_shape(shape: &[usize]) -> Option<NormView> {
        match shape.len() {
            2 => Some(NormView {
                outer: shape[0],
                channels: shape[1],
                inner: 1,
            }),
            4 => Some(NormView {
                outer: shape[0],
                channels: shape[1],
                inner: shape[2] * shape[3],
            }),
            _ => None,
        }
    }

    #[inline]
    pub fn idx(&self, o: usize, c: usize, i: usize) -> usize {
        (o * self.channels + c) * self.inner + i
    }

    pub fn count(&self) -> usize {
        self.outer * self.inner
    }
}

/// Per-channel mean and biased variance over (outer, inner).
pub fn channel_stats<T: Scalar>(x: &[T], view: NormView) -> (Vec<T>, Vec<T>) {
    let count = T::from_f64(view.count() as f64);
    let mut mean = vec![T::zero(); view.channels];
    let mut var = vec![T::zero(); view.channels];
    for c in 0..view.channels {
        let mut acc = T::zero();
        for o in 0..view.outer {
            for i in 0..view.inner {
                acc += x[view.idx(o, c, i)];
            }
        }
        mean[c] = acc / count;
        let mut vacc = T::zero();
        for o in 0..view.outer {
            for i in 0..view.inner {
                let d = x[view.idx(o, c, i)] - mean[c];
                vacc += d * d;
            }
        }
        var[c] = vacc / count;
    }
    (mean, var)
}

/// xhat = (x - mean) / sqrt(var + eps), with the given per-channel stats.
pub fn normalize<T: Scalar>(x: &[T], view: NormView, mean: &[T], var: &[T], eps: T) -> Vec<T> {
    let mut xhat = vec![T::zero(); x.len()];
    for c in 0..view.channels {
        let inv = (var[c] + eps).sqrt().recip();
        for o in 0..view.outer {
            for i in 0..view.inner {
                let j = view.idx(o, c, i);
                xhat[j] = (x[j] - mean[c]) * inv;
            }
        }
    }
    xhat
}

/// Input gradient of batch normalization when the statistics were computed
/// from this batch. `dxhat` is the upstream gradient already multiplied by
/// the effective per-element gain.
pub fn batch_norm_backward_input<T: Scalar>(
    xhat: &[T],
    dxhat: &[T],
    view: NormView,
    var: &[T],
    eps: T,
) -> Vec<T> {
    let m = T::from_f64(view.count() as f64);
    let mut dx = vec![T::zero(); xhat.len()];
    for c in 0..view.channels {
        let inv = (var[c] + eps).sqrt().recip();
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for o in 0..view.outer {
            for i in 0..view.inner {
                let j = view.idx(o, c, i);
                sum_d += dxhat[j];
                sum_dx += dxhat[j] * xhat[j];
            }
        }
        for o in 0..view.outer {
            for i in 0..view.inner {
                let j = view.idx(o, c, i);
                dx[j] = inv * (dxhat[j] - sum_d / m - xhat[j] * sum_dx / m);
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let eye = [1.0, 0.0, 0.0, 1.0];
        let mut out = [0.0; 4];
        matmul(&a, &eye, 2, 2, 2, &mut out);
        assert_eq!(out, a);
    }

    #[test]
    fn matmul_transposed_variants_agree_with_naive() {
        // a: 3x2, g: 3x4 -> at_b: 2x4 ; g: 3x4, b: 2x4 -> a_bt: 3x2
        let a: Vec<f64> = (0..6).map(|i| i as f64 * 0.5 - 1.0).collect();
        let g: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let mut atb = vec![0.0; 8];
        matmul_accum_at_b(&a, &g, 3, 2, 4, &mut atb);
        for kk in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|i| a[i * 2 + kk] * g[i * 4 + j]).sum();
                assert!((atb[kk * 4 + j] - want).abs() < 1e-12);
            }
        }
        let b: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let mut abt = vec![0.0; 6];
        matmul_accum_a_bt(&g, &b, 3, 2, 4, &mut abt);
        for i in 0..3 {
            for kk in 0..2 {
                let want: f64 = (0..4).map(|j| g[i * 4 + j] * b[kk * 4 + j]).sum();
                assert!((abt[i * 2 + kk] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_output_dims() {
        assert_eq!(conv_out_dim(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_dim(5, 3, 2, 1), Some(3));
        assert_eq!(conv_out_dim(2, 4, 1, 0), None);
        assert_eq!(conv_transpose_out_dim(4, 4, 2, 1), Some(8));
        assert_eq!(conv_transpose_out_dim(8, 3, 1, 1), Some(8));
    }

    #[test]
    fn channel_stats_hand_case() {
        // [B=2, F=2]: feature 0 -> {1, 3}, feature 1 -> {2, 2}
        let x = [1.0f64, 2.0, 3.0, 2.0];
        let view = NormView::for_shape(&[2, 2]).unwrap();
        let (mean, var) = channel_stats(&x, view);
        assert_eq!(mean, vec![2.0, 2.0]);
        assert_eq!(var, vec![1.0, 0.0]);
    }
}
