//! Forward and backward kernels on channel-major buffers.

use svbrdf_core::Real;

/// Copies `k x k` patches of `x` (`cin x h x w`, zero padded, stride 1)
/// into `cols` (`cin * k * k` rows by `h * w` columns).
pub(crate) fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    let line = &mut dst[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let shift = kx as isize - pad as isize;
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize + shift;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back onto `dx` (accumulating).
pub(crate) fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let shift = kx as isize - pad as isize;
                    let x0 = (-shift).max(0) as usize;
                    let x1 = ((w as isize - shift).min(w as isize)).max(0) as usize;
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * w..(oy + 1) * w];
                    for ox in x0..x1 {
                        dst[(ox as isize + shift) as usize] += line[ox];
                    }
                }
            }
        }
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `tap`.
#[inline]
fn tap_range(n: usize, tap: usize, pad: usize) -> (usize, usize, isize) {
    let shift = tap as isize - pad as isize;
    let lo = (-shift).max(0) as usize;
    let hi = (n as isize - shift).min(n as isize).max(0) as usize;
    (lo, hi.max(lo), shift)
}

/// Depth-wise `k x k` convolution, stride 1, zero padding.
pub(crate) fn depthwise_forward<T: Real>(x: &[T], wt: &[T], bias: Option<&[T]>, c: usize, h: usize, w: usize, k: usize, out: &mut [T]) {
    let pad = k / 2;
    let hw = h * w;
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        let dst = &mut out[ch * hw..(ch + 1) * hw];
        dst.fill(bias.map_or(T::zero(), |b| b[ch]));
        let kern = &wt[ch * k * k..(ch + 1) * k * k];
        for ky in 0..k {
            let (y0, y1, sy) = tap_range(h, ky, pad);
            for kx in 0..k {
                let (x0, x1, sx) = tap_range(w, kx, pad);
                let wv = kern[ky * k + kx];
                for oy in y0..y1 {
                    let iy = (oy as isize + sy) as usize;
                    let d = &mut dst[oy * w + x0..oy * w + x1];
                    let s = &src[iy * w + (x0 as isize + sx) as usize..iy * w + (x1 as isize + sx) as usize];
                    for (o, &v) in d.iter_mut().zip(s) {
                        *o += wv * v;
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn depthwise_backward<T: Real>(
    x: &[T],
    wt: &[T],
    dy: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: Option<&mut [T]>,
) {
    let pad = k / 2;
    let hw = h * w;
    if let Some(db) = db {
        for ch in 0..c {
            db[ch] += dy[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>();
        }
    }
    let mut dx = dx;
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        let g = &dy[ch * hw..(ch + 1) * hw];
        let kern = &wt[ch * k * k..(ch + 1) * k * k];
        for ky in 0..k {
            let (y0, y1, sy) = tap_range(h, ky, pad);
            for kx in 0..k {
                let (x0, x1, sx) = tap_range(w, kx, pad);
                let wv = kern[ky * k + kx];
                let mut acc = T::zero();
                for oy in y0..y1 {
                    let iy = (oy as isize + sy) as usize;
                    let gl = &g[oy * w + x0..oy * w + x1];
                    let off = iy * w + (x0 as isize + sx) as usize;
                    let sl = &src[off..off + (x1 - x0)];
                    acc += gl.iter().zip(sl).map(|(&a, &b)| a * b).sum::<T>();
                    if let Some(dx) = dx.as_deref_mut() {
                        let dl = &mut dx[ch * hw + off..ch * hw + off + (x1 - x0)];
                        for (d, &a) in dl.iter_mut().zip(gl) {
                            *d += wv * a;
                        }
                    }
                }
                dw[ch * k * k + ky * k + kx] += acc;
            }
        }
    }
}

/// Group statistics of `x` (`c x hw`): per-group mean and reciprocal std.
pub(crate) fn group_stats<T: Real>(x: &[T], c: usize, hw: usize, groups: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let cpg = c / groups;
    let n = T::from_usize_lossy(cpg * hw);
    let mut mean = vec![T::zero(); groups];
    let mut rstd = vec![T::zero(); groups];
    for g in 0..groups {
        let s = &x[g * cpg * hw..(g + 1) * cpg * hw];
        let m = s.iter().copied().sum::<T>() / n;
        let var = s.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / n;
        mean[g] = m;
        rstd[g] = (var + eps).sqrt().recip();
    }
    (mean, rstd)
}

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    // 0.5 (1 + tanh u) == sigmoid(2u)
    x * sigmoid(T::lit(2.0) * gelu_inner(x))
}

#[inline]
fn gelu_inner<T: Real>(x: T) -> T {
    T::lit(0.797_884_560_802_865_4) * (x + T::lit(0.044_715) * x * x * x)
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(T::lit(2.0) * gelu_inner(x));
    let du = T::lit(0.797_884_560_802_865_4) * (T::one() + T::lit(3.0 * 0.044_715) * x * x);
    s + x * s * (T::one() - s) * T::lit(2.0) * du
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// Multi-head self-attention over `n` tokens. `qkv` is `3c x n` (queries,
/// keys, values stacked along channels); writes `c x n` into `out` and the
/// attention probabilities (`heads x n x n`) into `probs`.
pub(crate) fn attention_forward<T: Real>(qkv: &[T], c: usize, n: usize, heads: usize, out: &mut [T], probs: &mut [T]) {
    let d = c / heads;
    let scale = T::from_usize_lossy(d).sqrt().recip();
    for hd in 0..heads {
        let q = &qkv[(hd * d) * n..(hd * d + d) * n];
        let k = &qkv[(c + hd * d) * n..(c + hd * d + d) * n];
        let v = &qkv[(2 * c + hd * d) * n..(2 * c + hd * d + d) * n];
        let p = &mut probs[hd * n * n..(hd + 1) * n * n];
        // S = scale * Q^T K
        T::gemm(n, d, n, scale, q, 1, n, k, n, 1, T::zero(), p, n, 1);
        for row in p.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            let inv = sum.recip();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        // O = V P^T
        let o = &mut out[(hd * d) * n..(hd * d + d) * n];
        T::gemm(d, n, n, T::one(), v, n, 1, p, 1, n, T::zero(), o, n, 1);
    }
}

pub(crate) fn attention_backward<T: Real>(qkv: &[T], probs: &[T], dout: &[T], c: usize, n: usize, heads: usize, dqkv: &mut [T]) {
    let d = c / heads;
    let scale = T::from_usize_lossy(d).sqrt().recip();
    let mut ds = vec![T::zero(); n * n];
    for hd in 0..heads {
        let q = &qkv[(hd * d) * n..(hd * d + d) * n];
        let k = &qkv[(c + hd * d) * n..(c + hd * d + d) * n];
        let v = &qkv[(2 * c + hd * d) * n..(2 * c + hd * d + d) * n];
        let p = &probs[hd * n * n..(hd + 1) * n * n];
        let dov = &dout[(hd * d) * n..(hd * d + d) * n];
        // dV += dO P
        {
            let dv = &mut dqkv[(2 * c + hd * d) * n..(2 * c + hd * d + d) * n];
            T::gemm(d, n, n, T::one(), dov, n, 1, p, n, 1, T::one(), dv, n, 1);
        }
        // dP = dO^T V
        T::gemm(n, d, n, T::one(), dov, 1, n, v, n, 1, T::zero(), &mut ds, n, 1);
        for (drow, prow) in ds.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let dot = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum::<T>();
            for (dv, &pv) in drow.iter_mut().zip(prow) {
                *dv = pv * (*dv - dot);
            }
        }
        // dQ += scale K dS^T ; dK += scale Q dS
        {
            let dq = &mut dqkv[(hd * d) * n..(hd * d + d) * n];
            T::gemm(d, n, n, scale, k, n, 1, &ds, 1, n, T::one(), dq, n, 1);
        }
        {
            let dk = &mut dqkv[(c + hd * d) * n..(c + hd * d + d) * n];
            T::gemm(d, n, n, scale, q, n, 1, &ds, n, 1, T::one(), dk, n, 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], wt: &[f64], cin: usize, cout: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; cout * h * w];
        for o in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    acc += wt[((o * cin + i) * k + ky) * k + kx] * x[(i * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y) * w + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn im2col_gemm_matches_direct_convolution() {
        let (cin, cout, h, w, k) = (3, 2, 5, 4, 3);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let wt: Vec<f64> = (0..cout * cin * k * k).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; cin * k * k * h * w];
        im2col(&x, cin, h, w, k, &mut cols);
        let mut out = vec![0.0; cout * h * w];
        f64::gemm(cout, cin * k * k, h * w, 1.0, &wt, cin * k * k, 1, &cols, h * w, 1, 0.0, &mut out, h * w, 1);
        for (a, b) in out.iter().zip(naive_conv(&x, &wt, cin, cout, h, w, k)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (cin, h, w, k) = (2, 4, 5, 3);
        let x: Vec<f64> = (0..cin * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let r: Vec<f64> = (0..cin * k * k * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; r.len()];
        im2col(&x, cin, h, w, k, &mut cols);
        let lhs: f64 = cols.iter().zip(&r).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&r, cin, h, w, k, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn depthwise_matches_direct_convolution() {
        let (c, h, w, k) = (3, 6, 5, 7);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.9).sin()).collect();
        let wt: Vec<f64> = (0..c * k * k).map(|i| (i as f64 * 0.2).cos()).collect();
        let mut out = vec![0.0; c * h * w];
        depthwise_forward(&x, &wt, None, c, h, w, k, &mut out);
        for ch in 0..c {
            let direct = naive_conv(&x[ch * h * w..(ch + 1) * h * w], &wt[ch * k * k..(ch + 1) * k * k], 1, 1, h, w, k);
            for (a, b) in out[ch * h * w..(ch + 1) * h * w].iter().zip(direct) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.3, 2.0f64] {
            let e = 1e-6;
            let fd = (gelu(x + e) - gelu(x - e)) / (2.0 * e);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
            let fd = (silu(x + e) - silu(x - e)) / (2.0 * e);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
