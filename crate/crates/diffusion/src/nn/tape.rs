use svbrdf_core::Real;

use super::ops;
use super::{Grads, ParamId, ParamStore};

/// Channel-major feature map shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn vector(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    #[inline]
    pub const fn hw(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input {
        grad: bool,
    },
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
        cols: Option<Vec<T>>,
    },
    Depthwise {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
    },
    AddChannel {
        x: Var,
        bias: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    GroupNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        groups: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu {
        x: Var,
    },
    Silu {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample2 {
        x: Var,
    },
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Vec<T>,
    shape: Shape,
    op: Op<T>,
}

const NORM_EPS: f64 = 1e-5;

/// Record of one forward pass.
pub struct Tape<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(128),
        }
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), shape.len());
        self.nodes.push(Node { value, shape, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<T>, shape: Shape) -> Var {
        assert_eq!(value.len(), shape.len(), "input size does not match its shape");
        self.push(value, shape, Op::Input { grad: true })
    }

    /// Like [`Tape::input`], but no gradient is propagated into it.
    pub fn constant(&mut self, value: Vec<T>, shape: Shape) -> Var {
        assert_eq!(value.len(), shape.len(), "constant size does not match its shape");
        self.push(value, shape, Op::Input { grad: false })
    }

    #[inline]
    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn into_value(mut self, v: Var) -> Vec<T> {
        std::mem::take(&mut self.nodes[v.0].value)
    }

    /// Dense `k x k` convolution (stride 1, same padding). The weight is
    /// `cout x cin x k x k`; a vector input with `k = 1` is a linear layer.
    pub fn conv(&mut self, x: Var, w: ParamId, b: Option<ParamId>, k: usize) -> Var {
        let s = self.shape(x);
        let wshape = self.params.shape(w);
        assert_eq!(wshape.len(), 4, "conv weight must be 4-d");
        let (cout, cin) = (wshape[0], wshape[1]);
        assert_eq!(cin, s.c, "conv input channels");
        assert_eq!((wshape[2], wshape[3]), (k, k), "conv kernel size");
        let hw = s.hw();
        let mut out = vec![T::zero(); cout * hw];
        if let Some(b) = b {
            let bias = self.params.get(b);
            for (o, row) in out.chunks_exact_mut(hw).enumerate() {
                row.fill(bias[o]);
            }
        }
        let beta = T::one();
        let wv = self.params.get(w);
        let cols = if k == 1 {
            T::gemm(cout, cin, hw, T::one(), wv, cin, 1, self.value(x), hw, 1, beta, &mut out, hw, 1);
            None
        } else {
            let mut cols = vec![T::zero(); cin * k * k * hw];
            ops::im2col(self.value(x), cin, s.h, s.w, k, &mut cols);
            T::gemm(cout, cin * k * k, hw, T::one(), wv, cin * k * k, 1, &cols, hw, 1, beta, &mut out, hw, 1);
            Some(cols)
        };
        self.push(out, Shape::new(cout, s.h, s.w), Op::Conv { x, w, b, k, cols })
    }

    /// Depth-wise `k x k` convolution; weight is `c x 1 x k x k`.
    pub fn depthwise(&mut self, x: Var, w: ParamId, b: Option<ParamId>, k: usize) -> Var {
        let s = self.shape(x);
        assert_eq!(self.params.shape(w), &[s.c, 1, k, k], "depthwise weight shape");
        let mut out = vec![T::zero(); s.len()];
        ops::depthwise_forward(
            self.value(x),
            self.params.get(w),
            b.map(|b| self.params.get(b)),
            s.c,
            s.h,
            s.w,
            k,
            &mut out,
        );
        self.push(out, s, Op::Depthwise { x, w, b, k })
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let s = self.shape(x);
        assert_eq!(self.shape(bias).len(), s.c, "channel bias length");
        let hw = s.hw();
        let mut out = self.value(x).to_vec();
        let b = self.value(bias);
        for (row, &bv) in out.chunks_exact_mut(hw).zip(b) {
            for v in row {
                *v += bv;
            }
        }
        self.push(out, s, Op::AddChannel { x, bias })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let s = self.shape(a);
        assert_eq!(s, self.shape(b), "add shape mismatch");
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(out, s, Op::Add { a, b })
    }

    pub fn group_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, groups: usize) -> Var {
        let s = self.shape(x);
        assert!(groups > 0 && s.c % groups == 0, "channels not divisible by groups");
        let hw = s.hw();
        let cpg = s.c / groups;
        let (mean, rstd) = ops::group_stats(self.value(x), s.c, hw, groups, T::lit(NORM_EPS));
        let (gv, bv) = (self.params.get(gamma), self.params.get(beta));
        let xv = self.value(x);
        let mut out = vec![T::zero(); s.len()];
        for c in 0..s.c {
            let g = c / cpg;
            let (m, r) = (mean[g], rstd[g]);
            for (o, &v) in out[c * hw..(c + 1) * hw].iter_mut().zip(&xv[c * hw..(c + 1) * hw]) {
                *o = (v - m) * r * gv[c] + bv[c];
            }
        }
        self.push(
            out,
            s,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                mean,
                rstd,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| ops::gelu(v)).collect();
        self.push(out, self.shape(x), Op::Gelu { x })
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| ops::silu(v)).collect();
        self.push(out, self.shape(x), Op::Silu { x })
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert_eq!((sa.h, sa.w), (sb.h, sb.w), "concat spatial mismatch");
        let mut out = Vec::with_capacity(sa.len() + sb.len());
        out.extend_from_slice(self.value(a));
        out.extend_from_slice(self.value(b));
        self.push(out, Shape::new(sa.c + sb.c, sa.h, sa.w), Op::Concat { a, b })
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert!(s.h % 2 == 0 && s.w % 2 == 0, "pooling odd-sized map");
        let (h2, w2) = (s.h / 2, s.w / 2);
        let xv = self.value(x);
        let q = T::lit(0.25);
        let mut out = vec![T::zero(); s.c * h2 * w2];
        for c in 0..s.c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let base = c * s.hw() + 2 * y * s.w + 2 * xx;
                    out[(c * h2 + y) * w2 + xx] = (xv[base] + xv[base + 1] + xv[base + s.w] + xv[base + s.w + 1]) * q;
                }
            }
        }
        self.push(out, Shape::new(s.c, h2, w2), Op::AvgPool2 { x })
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (h2, w2) = (s.h * 2, s.w * 2);
        let xv = self.value(x);
        let mut out = vec![T::zero(); s.c * h2 * w2];
        for c in 0..s.c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(c * h2 + y) * w2 + xx] = xv[c * s.hw() + (y / 2) * s.w + xx / 2];
                }
            }
        }
        self.push(out, Shape::new(s.c, h2, w2), Op::Upsample2 { x })
    }

    /// Multi-head self-attention over pixels; `qkv` has `3c` channels.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Var {
        let s = self.shape(qkv);
        assert!(s.c % 3 == 0, "qkv channels must be a multiple of 3");
        let c = s.c / 3;
        assert!(heads > 0 && c % heads == 0, "channels not divisible by heads");
        let n = s.hw();
        let mut out = vec![T::zero(); c * n];
        let mut probs = vec![T::zero(); heads * n * n];
        ops::attention_forward(self.value(qkv), c, n, heads, &mut out, &mut probs);
        self.push(out, Shape::new(c, s.h, s.w), Op::Attention { qkv, heads, probs })
    }

    /// Back-propagates `dout` from `out`, accumulating parameter gradients
    /// into `grads`. Returns the gradient for every recorded value (`None`
    /// where nothing flowed).
    pub fn backward(&self, out: Var, dout: Vec<T>, grads: &mut Grads<T>) -> Vec<Option<Vec<T>>> {
        assert_eq!(dout.len(), self.shape(out).len(), "output gradient size");
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(dout);
        for i in (0..=out.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            let s = node.shape;
            match &node.op {
                Op::Input { grad } => {
                    if *grad {
                        g[i] = Some(dy);
                    }
                }
                Op::Conv { x, w, b, k, cols } => {
                    let xs = self.shape(*x);
                    let (cout, cin, k) = (s.c, xs.c, *k);
                    let hw = s.hw();
                    let kk = cin * k * k;
                    if let Some(b) = b {
                        let db = grads.get_mut(*b);
                        for (o, row) in dy.chunks_exact(hw).enumerate() {
                            db[o] += row.iter().copied().sum::<T>();
                        }
                    }
                    let patches: &[T] = cols.as_deref().unwrap_or_else(|| self.value(*x));
                    // dW += dY * cols^T
                    T::gemm(cout, hw, kk, T::one(), &dy, hw, 1, patches, 1, hw, T::one(), grads.get_mut(*w), kk, 1);
                    if self.needs_grad(*x) {
                        let wv = self.params.get(*w);
                        let mut dcols = vec![T::zero(); kk * hw];
                        T::gemm(kk, cout, hw, T::one(), wv, 1, kk, &dy, hw, 1, T::zero(), &mut dcols, hw, 1);
                        if k == 1 {
                            accumulate(&mut g, *x, dcols);
                        } else {
                            let mut dx = vec![T::zero(); xs.len()];
                            ops::col2im(&dcols, cin, xs.h, xs.w, k, &mut dx);
                            accumulate(&mut g, *x, dx);
                        }
                    }
                }
                Op::Depthwise { x, w, b, k } => {
                    let mut dx = self.needs_grad(*x).then(|| vec![T::zero(); s.len()]);
                    let mut dw = vec![T::zero(); self.params.get(*w).len()];
                    let mut db = b.map(|_| vec![T::zero(); s.c]);
                    ops::depthwise_backward(
                        self.value(*x),
                        self.params.get(*w),
                        &dy,
                        s.c,
                        s.h,
                        s.w,
                        *k,
                        dx.as_deref_mut(),
                        &mut dw,
                        db.as_deref_mut(),
                    );
                    add_into(grads.get_mut(*w), &dw);
                    if let (Some(b), Some(db)) = (b, db) {
                        add_into(grads.get_mut(*b), &db);
                    }
                    if let Some(dx) = dx {
                        accumulate(&mut g, *x, dx);
                    }
                }
                Op::AddChannel { x, bias } => {
                    let hw = s.hw();
                    let db: Vec<T> = dy.chunks_exact(hw).map(|r| r.iter().copied().sum()).collect();
                    accumulate(&mut g, *bias, db);
                    accumulate(&mut g, *x, dy);
                }
                Op::Add { a, b } => {
                    accumulate(&mut g, *b, dy.clone());
                    accumulate(&mut g, *a, dy);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    mean,
                    rstd,
                } => {
                    let hw = s.hw();
                    let cpg = s.c / groups;
                    let xv = self.value(*x);
                    let gv = self.params.get(*gamma);
                    let mut dgamma = vec![T::zero(); s.c];
                    let mut dbeta = vec![T::zero(); s.c];
                    let mut dx = vec![T::zero(); s.len()];
                    let n = T::from_usize_lossy(cpg * hw);
                    for grp in 0..*groups {
                        let (m, r) = (mean[grp], rstd[grp]);
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for c in grp * cpg..(grp + 1) * cpg {
                            let mut dg = T::zero();
                            let mut dbt = T::zero();
                            for (&d, &v) in dy[c * hw..(c + 1) * hw].iter().zip(&xv[c * hw..(c + 1) * hw]) {
                                let xhat = (v - m) * r;
                                dg += d * xhat;
                                dbt += d;
                                let dxh = d * gv[c];
                                sum_d += dxh;
                                sum_dx += dxh * xhat;
                            }
                            dgamma[c] = dg;
                            dbeta[c] = dbt;
                        }
                        for c in grp * cpg..(grp + 1) * cpg {
                            for j in c * hw..(c + 1) * hw {
                                let xhat = (xv[j] - m) * r;
                                let dxh = dy[j] * gv[c];
                                dx[j] = r / n * (n * dxh - sum_d - xhat * sum_dx);
                            }
                        }
                    }
                    add_into(grads.get_mut(*gamma), &dgamma);
                    add_into(grads.get_mut(*beta), &dbeta);
                    accumulate(&mut g, *x, dx);
                }
                Op::Gelu { x } => {
                    let dx = dy.iter().zip(self.value(*x)).map(|(&d, &v)| d * ops::gelu_grad(v)).collect();
                    accumulate(&mut g, *x, dx);
                }
                Op::Silu { x } => {
                    let dx = dy.iter().zip(self.value(*x)).map(|(&d, &v)| d * ops::silu_grad(v)).collect();
                    accumulate(&mut g, *x, dx);
                }
                Op::Concat { a, b } => {
                    let na = self.shape(*a).len();
                    let mut da = dy;
                    let db = da.split_off(na);
                    accumulate(&mut g, *b, db);
                    accumulate(&mut g, *a, da);
                }
                Op::AvgPool2 { x } => {
                    let xs = self.shape(*x);
                    let q = T::lit(0.25);
                    let mut dx = vec![T::zero(); xs.len()];
                    for c in 0..s.c {
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                let d = dy[(c * s.h + y) * s.w + xx] * q;
                                let base = c * xs.hw() + 2 * y * xs.w + 2 * xx;
                                dx[base] += d;
                                dx[base + 1] += d;
                                dx[base + xs.w] += d;
                                dx[base + xs.w + 1] += d;
                            }
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Upsample2 { x } => {
                    let xs = self.shape(*x);
                    let mut dx = vec![T::zero(); xs.len()];
                    for c in 0..s.c {
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                dx[c * xs.hw() + (y / 2) * xs.w + xx / 2] += dy[(c * s.h + y) * s.w + xx];
                            }
                        }
                    }
                    accumulate(&mut g, *x, dx);
                }
                Op::Attention { qkv, heads, probs } => {
                    let mut dqkv = vec![T::zero(); self.shape(*qkv).len()];
                    ops::attention_backward(self.value(*qkv), probs, &dy, s.c, s.hw(), *heads, &mut dqkv);
                    accumulate(&mut g, *qkv, dqkv);
                }
            }
        }
        g
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input { grad: false })
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate<T: Real>(g: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut g[v.0] {
        Some(existing) => add_into(existing, &d),
        slot @ None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference check of `d(sum(r * f(x)))/dx` and parameters.
    fn check(build: impl Fn(&mut Tape<'_, f64>, Var) -> Var, store: &ParamStore<f64>, input: Vec<f64>, shape: Shape) {
        let probe = |store: &ParamStore<f64>, input: &[f64]| -> (f64, usize) {
            let mut tape = Tape::new(store);
            let x = tape.input(input.to_vec(), shape);
            let y = build(&mut tape, x);
            let v = tape.value(y);
            let r: f64 = v.iter().enumerate().map(|(i, &y)| y * ((i as f64) * 0.37).sin()).sum();
            (r, v.len())
        };
        let mut tape = Tape::new(store);
        let x = tape.input(input.clone(), shape);
        let y = build(&mut tape, x);
        let n = tape.shape(y).len();
        let dout: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin()).collect();
        let mut grads = Grads::zeros_like(store);
        let g = tape.backward(y, dout, &mut grads);
        let dx = g[0].clone().unwrap();
        let e = 1e-6;
        for i in (0..input.len()).step_by(3) {
            let mut p = input.clone();
            p[i] += e;
            let mut m = input.clone();
            m[i] -= e;
            let fd = (probe(store, &p).0 - probe(store, &m).0) / (2.0 * e);
            assert!((fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()), "input {i}: fd {fd} vs {}", dx[i]);
        }
        for id in store.ids() {
            for j in (0..store.get(id).len()).step_by(5) {
                let mut sp = store.clone();
                sp.get_mut(id)[j] += e;
                let mut sm = store.clone();
                sm.get_mut(id)[j] -= e;
                let fd = (probe(&sp, &input).0 - probe(&sm, &input).0) / (2.0 * e);
                let an = grads.get(id)[j];
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "{}[{j}]: fd {fd} vs {an}", store.name(id));
            }
        }
    }

    fn rand_input(n: usize, seed: u64) -> Vec<f64> {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn conv_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w3 = store.fan_in_normal("w3", &[4, 3, 3, 3], 27, &mut rng);
        let b3 = store.fan_in_normal("b3", &[4], 1, &mut rng);
        let w1 = store.fan_in_normal("w1", &[2, 4, 1, 1], 4, &mut rng);
        let shape = Shape::new(3, 5, 4);
        check(
            |t, x| {
                let h = t.conv(x, w3, Some(b3), 3);
                t.conv(h, w1, None, 1)
            },
            &store,
            rand_input(shape.len(), 2),
            shape,
        );
    }

    #[test]
    fn depthwise_norm_activation_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let dw = store.fan_in_normal("dw", &[4, 1, 7, 7], 49, &mut rng);
        let db = store.fan_in_normal("db", &[4], 1, &mut rng);
        let gamma = store.fan_in_normal("gamma", &[4], 1, &mut rng);
        let beta = store.fan_in_normal("beta", &[4], 1, &mut rng);
        let shape = Shape::new(4, 6, 6);
        check(
            |t, x| {
                let h = t.depthwise(x, dw, Some(db), 7);
                let h = t.group_norm(h, gamma, beta, 2);
                let a = t.gelu(h);
                let b = t.silu(h);
                t.add(a, b)
            },
            &store,
            rand_input(shape.len(), 4),
            shape,
        );
    }

    #[test]
    fn structural_op_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let lin = store.fan_in_normal("lin", &[2, 3, 1, 1], 3, &mut rng);
        let shape = Shape::new(2, 4, 4);
        check(
            |t, x| {
                let p = t.avg_pool2(x);
                let u = t.upsample2(p);
                let c = t.concat(x, u);
                let v = t.input(vec![0.3, -0.2, 0.1], Shape::vector(3));
                let bias = t.conv(v, lin, None, 1);
                let xb = t.add_channel(x, bias);
                t.concat(c, xb)
            },
            &store,
            rand_input(shape.len(), 6),
            shape,
        );
    }

    #[test]
    fn attention_gradients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let qkv = store.fan_in_normal("qkv", &[12, 4, 1, 1], 4, &mut rng);
        let shape = Shape::new(4, 3, 3);
        check(
            |t, x| {
                let q = t.conv(x, qkv, None, 1);
                t.attention(q, 2)
            },
            &store,
            rand_input(shape.len(), 8),
            shape,
        );
    }
}
