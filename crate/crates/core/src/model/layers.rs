//! Hand-differentiated building blocks. Activations use the `(C, T, H, W)`
//! layout of a single clip.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Array4, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;

type Dims = (usize, usize, usize, usize);

fn he_init<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, gain: f64, rng: &mut R) -> Array2<T> {
    let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || T::of(normal.sample(rng)))
}

fn out_len(n: usize, k: usize, s: usize, p: usize) -> usize {
    (n + 2 * p).saturating_sub(k) / s + 1
}

/// Output columns `[lo, hi)` whose input column `ow * s + k - p` lies in `[0, w)`.
fn cols_range(k: usize, s: usize, p: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = p.saturating_sub(k).div_ceil(s);
    let hi = if w + p > k {
        ((w + p - k - 1) / s + 1).min(wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// 3-D convolution lowered to a matrix product over an im2col buffer.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Conv3d<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

pub(crate) struct ConvCache<T> {
    cols: Array2<T>,
    in_dims: Dims,
    out_dims: Dims,
}

impl<T: Scalar> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        k: [usize; 3],
        s: [usize; 3],
        p: [usize; 3],
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k[0] * k[1] * k[2];
        Self {
            w: he_init(cout, fan_in, fan_in, gain, rng),
            b: Array1::zeros(cout),
            k,
            s,
            p,
        }
    }

    pub fn out_dims(&self, d: Dims) -> Dims {
        (
            self.w.nrows(),
            out_len(d.1, self.k[0], self.s[0], self.p[0]),
            out_len(d.2, self.k[1], self.s[1], self.p[1]),
            out_len(d.3, self.k[2], self.s[2], self.p[2]),
        )
    }

    /// Visits every (input row, output row) pair of the lowering: calls
    /// `f(row, dst_offset, src_offset, lo, hi)` where output columns
    /// `lo..hi` of `row` read input columns `src_offset + first(kw) + s * (0..)`.
    fn for_each_span(&self, d: Dims, o: Dims, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
        let (c, t, h, w) = d;
        let (_, to, ho, wo) = o;
        let [k0, k1, k2] = self.k;
        let np = to * ho * wo;
        let ranges: Vec<(usize, usize)> = (0..k2).map(|kw| cols_range(kw, self.s[2], self.p[2], w, wo)).collect();
        for ci in 0..c {
            for kt in 0..k0 {
                for ot in 0..to {
                    let it = (ot * self.s[0] + kt) as isize - self.p[0] as isize;
                    if it < 0 || it >= t as isize {
                        continue;
                    }
                    for kh in 0..k1 {
                        for oh in 0..ho {
                            let ih = (oh * self.s[1] + kh) as isize - self.p[1] as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let src = ((ci * t + it as usize) * h + ih as usize) * w;
                            let base = (ot * ho + oh) * wo;
                            for (kw, &(lo, hi)) in ranges.iter().enumerate() {
                                if lo < hi {
                                    let row = ((ci * k0 + kt) * k1 + kh) * k2 + kw;
                                    f(row, row * np + base, src + lo * self.s[2] + kw - self.p[2], lo, hi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[T], d: Dims, o: Dims) -> Array2<T> {
        let [k0, k1, k2] = self.k;
        let np = o.1 * o.2 * o.3;
        let rows = d.0 * k0 * k1 * k2;
        let mut cols = vec![T::zero(); rows * np];
        let step = self.s[2];
        self.for_each_span(d, o, |_, dst, src, lo, hi| {
            for (dv, sv) in cols[dst + lo..dst + hi].iter_mut().zip(x[src..].iter().step_by(step)) {
                *dv = *sv;
            }
        });
        Array2::from_shape_vec((rows, np), cols).expect("im2col shape")
    }

    fn col2im(&self, cols: &Array2<T>, d: Dims, o: Dims) -> Array4<T> {
        let cols = cols.as_slice().expect("contiguous");
        let mut x = vec![T::zero(); d.0 * d.1 * d.2 * d.3];
        let step = self.s[2];
        self.for_each_span(d, o, |_, dst, src, lo, hi| {
            for (xv, cv) in x[src..].iter_mut().step_by(step).zip(&cols[dst + lo..dst + hi]) {
                *xv += *cv;
            }
        });
        Array4::from_shape_vec(d, x).expect("col2im shape")
    }

    pub fn forward(&self, x: &Array4<T>) -> (Array4<T>, ConvCache<T>) {
        let d = x.dim();
        let o = self.out_dims(d);
        let x = x.as_standard_layout();
        let cols = self.im2col(x.as_slice().expect("standard layout"), d, o);
        let mut y = Array2::zeros((o.0, cols.ncols()));
        general_mat_mul(T::one(), &self.w, &cols, T::zero(), &mut y);
        y += &self.b.view().insert_axis(Axis(1));
        let y = y.into_shape_with_order(o).expect("conv output shape");
        (
            y,
            ConvCache {
                cols,
                in_dims: d,
                out_dims: o,
            },
        )
    }

    /// Returns `(dW, db, dx)`; `dx` only when requested.
    pub fn backward(
        &self,
        dy: &Array4<T>,
        cache: &ConvCache<T>,
        need_dx: bool,
    ) -> (Array2<T>, Array1<T>, Option<Array4<T>>) {
        let o = cache.out_dims;
        let dy = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((o.0, o.1 * o.2 * o.3))
            .expect("conv grad shape");
        let mut dw = Array2::zeros(self.w.raw_dim());
        general_mat_mul(T::one(), &dy, &cache.cols.t(), T::zero(), &mut dw);
        let db = dy.sum_axis(Axis(1));
        let dx = need_dx.then(|| {
            let mut dcols = Array2::zeros(cache.cols.raw_dim());
            general_mat_mul(T::one(), &self.w.t(), &dy, T::zero(), &mut dcols);
            self.col2im(&dcols, cache.in_dims, o)
        });
        (dw, db, dx)
    }
}

/// Transposed convolution along time only: kernel `(kt, 1, 1)`, stride
/// `(st, 1, 1)`, padding `(pt, 0, 0)`. The output is cut to a requested length.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TConvTime<T> {
    /// Rows are `(cout, tap)`; columns are input channels.
    pub w: Array2<T>,
    pub b: Array1<T>,
    kt: usize,
    st: usize,
    pt: usize,
}

pub(crate) struct TConvCache<T> {
    x2: Array2<T>,
    in_dims: Dims,
    out_len: usize,
}

impl<T: Scalar> TConvTime<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, kt: usize, st: usize, pt: usize, rng: &mut R) -> Self {
        let fan_in = (cin * kt / st).max(1);
        Self {
            w: he_init(cout * kt, cin, fan_in, 2.0, rng),
            b: Array1::zeros(cout),
            kt,
            st,
            pt,
        }
    }

    fn cout(&self) -> usize {
        self.w.nrows() / self.kt
    }

    /// Full (uncut) output length for an input of length `n`.
    pub fn full_len(&self, n: usize) -> usize {
        ((n - 1) * self.st + self.kt).saturating_sub(2 * self.pt)
    }

    fn target(&self, ti: usize, k: usize, out_len: usize) -> Option<usize> {
        let to = (ti * self.st + k) as isize - self.pt as isize;
        (to >= 0 && (to as usize) < out_len).then_some(to as usize)
    }

    pub fn forward(&self, x: &Array4<T>, out_len: usize) -> (Array4<T>, TConvCache<T>) {
        let d = x.dim();
        let (c, tin, h, w) = d;
        assert!(
            out_len <= self.full_len(tin),
            "cannot cut {} frames to {out_len}",
            self.full_len(tin)
        );
        let hw = h * w;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((c, tin * hw))
            .expect("tconv input shape");
        let mut z = Array2::zeros((self.w.nrows(), tin * hw));
        general_mat_mul(T::one(), &self.w, &x2, T::zero(), &mut z);
        let cout = self.cout();
        let mut y = vec![T::zero(); cout * out_len * hw];
        let zs = z.as_slice().expect("contiguous");
        for co in 0..cout {
            for k in 0..self.kt {
                let row = &zs[(co * self.kt + k) * tin * hw..(co * self.kt + k + 1) * tin * hw];
                for ti in 0..tin {
                    if let Some(to) = self.target(ti, k, out_len) {
                        let dst = &mut y[(co * out_len + to) * hw..(co * out_len + to + 1) * hw];
                        for (a, &b) in dst.iter_mut().zip(&row[ti * hw..(ti + 1) * hw]) {
                            *a = *a + b;
                        }
                    }
                }
            }
            let bias = self.b[co];
            for v in &mut y[co * out_len * hw..(co + 1) * out_len * hw] {
                *v = *v + bias;
            }
        }
        let y = Array4::from_shape_vec((cout, out_len, h, w), y).expect("tconv output shape");
        (
            y,
            TConvCache {
                x2,
                in_dims: d,
                out_len,
            },
        )
    }

    pub fn backward(&self, dy: &Array4<T>, cache: &TConvCache<T>) -> (Array2<T>, Array1<T>, Array4<T>) {
        let (c, tin, h, w) = cache.in_dims;
        let hw = h * w;
        let out_len = cache.out_len;
        let dy = dy.as_standard_layout();
        let dys = dy.as_slice().expect("standard layout");
        let cout = self.cout();
        let mut dz = vec![T::zero(); self.w.nrows() * tin * hw];
        for co in 0..cout {
            for k in 0..self.kt {
                let row = &mut dz[(co * self.kt + k) * tin * hw..(co * self.kt + k + 1) * tin * hw];
                for ti in 0..tin {
                    if let Some(to) = self.target(ti, k, out_len) {
                        row[ti * hw..(ti + 1) * hw]
                            .copy_from_slice(&dys[(co * out_len + to) * hw..(co * out_len + to + 1) * hw]);
                    }
                }
            }
        }
        let dz = Array2::from_shape_vec((self.w.nrows(), tin * hw), dz).expect("dz shape");
        let mut dw = Array2::zeros(self.w.raw_dim());
        general_mat_mul(T::one(), &dz, &cache.x2.t(), T::zero(), &mut dw);
        let db = dy
            .view()
            .into_shape_with_order((cout, out_len * hw))
            .expect("dy shape")
            .sum_axis(Axis(1));
        let mut dx = Array2::zeros((c, tin * hw));
        general_mat_mul(T::one(), &self.w.t(), &dz, T::zero(), &mut dx);
        (dw, db, dx.into_shape_with_order(cache.in_dims).expect("dx shape"))
    }
}

pub(crate) fn elu<T: Scalar>(x: Array4<T>) -> Array4<T> {
    x.mapv_into(|v| if v > T::zero() { v } else { v.exp_m1() })
}

/// Gradient through ELU given its output `y`.
pub(crate) fn elu_backward<T: Scalar>(y: &Array4<T>, mut dy: Array4<T>) -> Array4<T> {
    ndarray::Zip::from(&mut dy).and(y).for_each(|g, &y| {
        if y <= T::zero() {
            *g = *g * (y + T::one());
        }
    });
    dy
}

fn pool_range(i: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = i * n_in / n_out;
    let hi = ((i + 1) * n_in).div_ceil(n_out);
    (lo, hi)
}

/// Adaptive average pooling of a `(1, T, H, W)` map to `(T, S, S)`, with the
/// usual floor/ceil cell boundaries (cells may overlap when `S > H`).
pub(crate) fn adaptive_pool<T: Scalar>(x: &Array4<T>, s: usize) -> Array3<T> {
    let (_, t, h, w) = x.dim();
    let mut out = Array3::zeros((t, s, s));
    for i in 0..s {
        let (y0, y1) = pool_range(i, h, s);
        for j in 0..s {
            let (x0, x1) = pool_range(j, w, s);
            let inv = T::one() / T::of_usize((y1 - y0) * (x1 - x0));
            for ti in 0..t {
                let mut acc = T::zero();
                for y in y0..y1 {
                    for xx in x0..x1 {
                        acc = acc + x[[0, ti, y, xx]];
                    }
                }
                out[[ti, i, j]] = acc * inv;
            }
        }
    }
    out
}

pub(crate) fn adaptive_pool_backward<T: Scalar>(g: &Array3<T>, h: usize, w: usize) -> Array4<T> {
    let (t, s, _) = g.dim();
    let mut dx = Array4::zeros((1, t, h, w));
    for i in 0..s {
        let (y0, y1) = pool_range(i, h, s);
        for j in 0..s {
            let (x0, x1) = pool_range(j, w, s);
            let inv = T::one() / T::of_usize((y1 - y0) * (x1 - x0));
            for ti in 0..t {
                let v = g[[ti, i, j]] * inv;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        dx[[0, ti, y, xx]] = dx[[0, ti, y, xx]] + v;
                    }
                }
            }
        }
    }
    dx
}

/// Per-pixel temporal centering followed by division by the global RMS.
pub(crate) fn normalize_input<T: Scalar>(x: &Array4<T>) -> (Array4<T>, T) {
    let t = x.dim().1;
    let mean = x.mean_axis(Axis(1)).expect("non-empty time axis");
    let mut c = x.to_owned();
    for ti in 0..t {
        let mut slab = c.index_axis_mut(Axis(1), ti);
        slab -= &mean;
    }
    let n = T::of_usize(c.len());
    let sigma = (c.iter().map(|&v| v * v).sum::<T>() / n + T::of(1e-12)).sqrt();
    c.mapv_inplace(|v| v / sigma);
    (c, sigma)
}

pub(crate) fn normalize_input_backward<T: Scalar>(xn: &Array4<T>, sigma: T, g: &Array4<T>) -> Array4<T> {
    let n = T::of_usize(xn.len());
    let proj = ndarray::Zip::from(xn).and(g).fold(T::zero(), |acc, &a, &b| acc + a * b) / n;
    let mut dc = ndarray::Zip::from(g)
        .and(xn)
        .map_collect(|&g, &a| (g - a * proj) / sigma);
    let mean = dc.mean_axis(Axis(1)).expect("non-empty time axis");
    for ti in 0..dc.dim().1 {
        let mut slab = dc.index_axis_mut(Axis(1), ti);
        slab -= &mean;
    }
    dc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand4(d: Dims, seed: u64) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(d, || rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(c: &Conv3d<f64>, x: &Array4<f64>) -> Array4<f64> {
        let d = x.dim();
        let o = c.out_dims(d);
        let [k0, k1, k2] = c.k;
        let mut y = Array4::zeros(o);
        for ((co, ot, oh, ow), v) in y.indexed_iter_mut() {
            let mut acc = c.b[co];
            for ci in 0..d.0 {
                for kt in 0..k0 {
                    for kh in 0..k1 {
                        for kw in 0..k2 {
                            let it = (ot * c.s[0] + kt) as isize - c.p[0] as isize;
                            let ih = (oh * c.s[1] + kh) as isize - c.p[1] as isize;
                            let iw = (ow * c.s[2] + kw) as isize - c.p[2] as isize;
                            if it < 0
                                || ih < 0
                                || iw < 0
                                || it >= d.1 as isize
                                || ih >= d.2 as isize
                                || iw >= d.3 as isize
                            {
                                continue;
                            }
                            let wi = ((ci * k0 + kt) * k1 + kh) * k2 + kw;
                            acc += c.w[[co, wi]] * x[[ci, it as usize, ih as usize, iw as usize]];
                        }
                    }
                }
            }
            *v = acc;
        }
        y
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Conv3d::<f64>::new(2, 3, [3, 3, 3], [2, 1, 2], [1, 1, 1], 2.0, &mut rng);
        c.b = Array1::from(vec![0.1, -0.2, 0.3]);
        let x = rand4((2, 7, 6, 5), 1);
        let (y, _) = c.forward(&x);
        let oracle = conv_oracle(&c, &x);
        assert_eq!(y.dim(), oracle.dim());
        for (a, b) in y.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Conv3d::<f64>::new(2, 2, [3, 3, 3], [1, 2, 2], [1, 1, 1], 2.0, &mut rng);
        let x = rand4((2, 5, 6, 6), 3);
        let (y, cache) = c.forward(&x);
        let r = rand4(y.dim(), 4);
        let (dw, db, dx) = c.backward(&r, &cache, true);
        let dx = dx.unwrap();
        let f = |c: &Conv3d<f64>, x: &Array4<f64>| (&c.forward(x).0 * &r).sum();
        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 2, 3, 4), (0, 4, 5, 5)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (f(&c, &xp) - f(&c, &xm)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
        for idx in [(0, 0), (1, 30), (1, 53)] {
            let mut cp = c.clone();
            cp.w[idx] += eps;
            let mut cm = c.clone();
            cm.w[idx] -= eps;
            let fd = (f(&cp, &x) - f(&cm, &x)) / (2.0 * eps);
            assert!((fd - dw[idx]).abs() < 1e-6);
        }
        let mut cp = c.clone();
        cp.b[1] += eps;
        let mut cm = c.clone();
        cm.b[1] -= eps;
        assert!(((f(&cp, &x) - f(&cm, &x)) / (2.0 * eps) - db[1]).abs() < 1e-6);
    }

    #[test]
    fn tconv_matches_scatter_definition_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tc = TConvTime::<f64>::new(2, 3, 4, 2, 1, &mut rng);
        tc.b = Array1::from(vec![0.5, 0.0, -0.5]);
        let x = rand4((2, 5, 2, 3), 6);
        assert_eq!(tc.full_len(5), 10);
        let (y, cache) = tc.forward(&x, 9);
        assert_eq!(y.dim(), (3, 9, 2, 3));
        let mut oracle = Array4::<f64>::zeros((3, 10, 2, 3));
        for co in 0..3 {
            for ti in 0..5 {
                for k in 0..4 {
                    let to = (2 * ti + k) as isize - 1;
                    if !(0..10).contains(&to) {
                        continue;
                    }
                    for ci in 0..2 {
                        for h in 0..2 {
                            for w in 0..3 {
                                oracle[[co, to as usize, h, w]] += tc.w[[co * 4 + k, ci]] * x[[ci, ti, h, w]];
                            }
                        }
                    }
                }
            }
        }
        for ((co, t, h, w), v) in y.indexed_iter() {
            assert!((v - oracle[[co, t, h, w]] - tc.b[co]).abs() < 1e-12);
        }
        let r = rand4(y.dim(), 7);
        let (dw, _, dx) = tc.backward(&r, &cache);
        let f = |tc: &TConvTime<f64>, x: &Array4<f64>| (&tc.forward(x, 9).0 * &r).sum();
        let eps = 1e-6;
        let mut xp = x.clone();
        xp[[1, 4, 1, 2]] += eps;
        let mut xm = x.clone();
        xm[[1, 4, 1, 2]] -= eps;
        assert!(((f(&tc, &xp) - f(&tc, &xm)) / (2.0 * eps) - dx[[1, 4, 1, 2]]).abs() < 1e-6);
        let mut tp = tc.clone();
        tp.w[[7, 1]] += eps;
        let mut tm = tc.clone();
        tm.w[[7, 1]] -= eps;
        assert!(((f(&tp, &x) - f(&tm, &x)) / (2.0 * eps) - dw[[7, 1]]).abs() < 1e-6);
    }

    #[test]
    fn adaptive_pool_cells_and_adjoint() {
        let x = rand4((1, 3, 4, 4), 8);
        let p = adaptive_pool(&x, 2);
        let manual = (x[[0, 1, 2, 0]] + x[[0, 1, 2, 1]] + x[[0, 1, 3, 0]] + x[[0, 1, 3, 1]]) / 4.0;
        assert!((p[[1, 1, 0]] - manual).abs() < 1e-12);
        let up = adaptive_pool(&x, 8);
        assert_eq!(up.dim(), (3, 8, 8));
        assert_eq!(up[[0, 0, 0]], x[[0, 0, 0, 0]]);
        let g = Array3::from_shape_fn((3, 3, 3), |(a, b, c)| (a + 2 * b + 3 * c) as f64);
        let dx = adaptive_pool_backward(&g, 4, 4);
        let lhs = (&adaptive_pool(&x, 3) * &g).sum();
        let rhs = (&x * &dx).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn normalization_gradient() {
        let x = rand4((3, 6, 2, 2), 9);
        let r = rand4(x.dim(), 10);
        let (xn, sigma) = normalize_input(&x);
        let g = normalize_input_backward(&xn, sigma, &r);
        let f = |x: &Array4<f64>| (&normalize_input(x).0 * &r).sum();
        let eps = 1e-6;
        for idx in [(0, 0, 0, 0), (2, 5, 1, 1), (1, 3, 0, 1)] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            assert!(((f(&xp) - f(&xm)) / (2.0 * eps) - g[idx]).abs() < 1e-6);
        }
    }
}
