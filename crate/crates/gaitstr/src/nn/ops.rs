//! Differentiable operations recorded on a [`Tape`].
//!
//! Shapes follow a channels-last convention: silhouette maps are
//! `[t, h, w, c]`, skeleton streams `[t, K, c]`. Convolutions run as
//! im2col + matmul; the im2col buffer is rebuilt during backward instead of
//! being captured, trading a little compute for memory.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, Ix2, IxDyn};

use super::{arr, zeros, Arr, Grads, Tape, Var};

fn mm(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    a.dot(&b)
}

fn as2(a: &Arr) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 tensor")
}

/// Borrow as `[rows, cols]` without copying (standard layout only).
fn view2(a: &Arr, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    debug_assert_eq!(a.len(), rows * cols);
    ArrayView2::from_shape((rows, cols), a.as_slice().expect("standard layout")).unwrap()
}

/// Move a 2-D matmul result into a dynamic tensor of the given shape.
fn owned_into(shape: &[usize], m: Array2<f64>) -> Arr {
    Arr::from_shape_vec(IxDyn(shape), m.into_raw_vec_and_offset().0).unwrap()
}

/// Euclidean distance between part rows `a` and `b` of `[B, P, C]` data.
fn part_distance(fs: &[f64], parts: usize, c: usize, p: usize, a: usize, b: usize) -> f64 {
    let ra = &fs[(a * parts + p) * c..(a * parts + p + 1) * c];
    let rb = &fs[(b * parts + p) * c..(b * parts + p + 1) * c];
    ra.iter()
        .zip(rb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn im2col3x3(x: &Arr) -> Array2<f64> {
    let s = x.shape();
    let (t, h, w, ic) = (s[0], s[1], s[2], s[3]);
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::zeros((t * h * w, 9 * ic));
    {
        let cs = col.as_slice_mut().unwrap();
        for f in 0..t {
            for r in 0..h {
                for c in 0..w {
                    let mut o = (((f * h) + r) * w + c) * 9 * ic;
                    for dr in 0..3usize {
                        let rr = r + dr;
                        if rr >= 1 && rr <= h {
                            let rr = rr - 1;
                            for dc in 0..3usize {
                                let cc = c + dc;
                                if cc >= 1 && cc <= w {
                                    let cc = cc - 1;
                                    let src = (((f * h) + rr) * w + cc) * ic;
                                    cs[o..o + ic].copy_from_slice(&xs[src..src + ic]);
                                }
                                o += ic;
                            }
                        } else {
                            o += 3 * ic;
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im3x3(dcol: &Array2<f64>, t: usize, h: usize, w: usize, ic: usize) -> Arr {
    let mut dx = zeros(&[t, h, w, ic]);
    {
        let ds = dx.as_slice_mut().unwrap();
        let cs = dcol.as_slice().unwrap();
        for f in 0..t {
            for r in 0..h {
                for c in 0..w {
                    let mut o = (((f * h) + r) * w + c) * 9 * ic;
                    for dr in 0..3usize {
                        let rr = r + dr;
                        if rr >= 1 && rr <= h {
                            let rr = rr - 1;
                            for dc in 0..3usize {
                                let cc = c + dc;
                                if cc >= 1 && cc <= w {
                                    let cc = cc - 1;
                                    let dst = (((f * h) + rr) * w + cc) * ic;
                                    for i in 0..ic {
                                        ds[dst + i] += cs[o + i];
                                    }
                                }
                                o += ic;
                            }
                        } else {
                            o += 3 * ic;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn im2col_temporal(x: &Arr, kernel: usize) -> Array2<f64> {
    let s = x.shape();
    let (t, k, c) = (s[0], s[1], s[2]);
    let half = kernel / 2;
    let xs = x.as_slice().expect("standard layout");
    let mut col = Array2::zeros((t * k, kernel * c));
    {
        let cs = col.as_slice_mut().unwrap();
        for f in 0..t {
            for n in 0..k {
                let mut o = (f * k + n) * kernel * c;
                for d in 0..kernel {
                    let ff = f + d;
                    if ff >= half && ff < t + half {
                        let ff = ff - half;
                        let src = (ff * k + n) * c;
                        cs[o..o + c].copy_from_slice(&xs[src..src + c]);
                    }
                    o += c;
                }
            }
        }
    }
    col
}

fn col2im_temporal(dcol: &Array2<f64>, t: usize, k: usize, c: usize, kernel: usize) -> Arr {
    let half = kernel / 2;
    let mut dx = zeros(&[t, k, c]);
    {
        let ds = dx.as_slice_mut().unwrap();
        let cs = dcol.as_slice().unwrap();
        for f in 0..t {
            for n in 0..k {
                let mut o = (f * k + n) * kernel * c;
                for d in 0..kernel {
                    let ff = f + d;
                    if ff >= half && ff < t + half {
                        let ff = ff - half;
                        let dst = (ff * k + n) * c;
                        for i in 0..c {
                            ds[dst + i] += cs[o + i];
                        }
                    }
                    o += c;
                }
            }
        }
    }
    dx
}

impl Tape {
    /// Elementwise sum of two equal-shape tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                sink.add(a, g.clone());
                sink.add(b, g.clone());
            })),
        )
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).mapv(|x| x * s);
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                sink.add(a, g.mapv(|x| x * s));
            })),
        )
    }

    /// Rectifier.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(
            value.clone(),
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let input = v.get(a);
                let mut dg = g.clone();
                dg.zip_mut_with(input, |d, &x| {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                });
                sink.add(a, dg);
            })),
        )
    }

    /// Matrix product `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = mm(as2(self.value(a)), as2(self.value(b))).into_dyn();
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let g2 = as2(g);
                let av = as2(v.get(a));
                let bv = as2(v.get(b));
                sink.add(a, mm(g2, bv.t()).into_dyn());
                sink.add(b, mm(av.t(), g2).into_dyn());
            })),
        )
    }

    /// Add a `[n]` row vector to every row of `[m, n]`.
    pub fn add_rowvec(&mut self, a: Var, bias: Var) -> Var {
        let value = {
            let av = as2(self.value(a));
            let bv = self.value(bias);
            let b1 = bv.view().into_dimensionality::<ndarray::Ix1>().unwrap();
            (&av + &b1).into_dyn()
        };
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                sink.add(a, g.clone());
                let db = as2(g).sum_axis(Axis(0));
                sink.add(bias, db.into_dyn());
            })),
        )
    }

    /// Reinterpret the element order under a new shape.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let shape = shape.to_vec();
        let old_shape: Vec<usize> = self.value(a).shape().to_vec();
        debug_assert_eq!(
            self.value(a).len(),
            shape.iter().product::<usize>(),
            "reshape must preserve element count"
        );
        let value = Arr::from_shape_vec(
            IxDyn(&shape),
            self.value(a).as_slice().expect("standard layout").to_vec(),
        )
        .unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let back = Arr::from_shape_vec(
                    IxDyn(&old_shape),
                    g.as_slice().expect("standard layout").to_vec(),
                )
                .unwrap();
                sink.add(a, back);
            })),
        )
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = arr(&[1], vec![self.value(a).sum()]);
        let shape: Vec<usize> = self.value(a).shape().to_vec();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let s = g[[0]];
                sink.add(a, Arr::from_elem(IxDyn(&shape), s));
            })),
        )
    }

    /// Inner product with fixed weights, shape `[1]`; used by checks that
    /// need a scalar sensitive to every coordinate.
    pub fn weighted_sum(&mut self, a: Var, weights: Arc<Arr>) -> Var {
        debug_assert_eq!(self.value(a).shape(), weights.shape());
        let value = arr(
            &[1],
            vec![self
                .value(a)
                .iter()
                .zip(weights.iter())
                .map(|(x, w)| x * w)
                .sum()],
        );
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let s = g[[0]];
                sink.add(a, weights.mapv(|w| w * s));
            })),
        )
    }

    /// 3x3 same-padded convolution over `[t, h, w, ic]` with weights
    /// `[3, 3, ic, oc]` and bias `[oc]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (t, h, wd, ic) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2], s[3])
        };
        let oc = self.value(w).shape()[3];
        debug_assert_eq!(self.value(w).shape(), &[3, 3, ic, oc]);
        let col = Arc::new(im2col3x3(self.value(x)));
        let wf = view2(self.value(w), 9 * ic, oc);
        let mut out = mm(col.view(), wf);
        {
            let bv = self.value(b);
            for mut row in out.rows_mut() {
                for (o, v) in row.iter_mut().enumerate() {
                    *v += bv[[o]];
                }
            }
        }
        let value = owned_into(&[t, h, wd, oc], out);
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let gf = view2(g, t * h * wd, oc);
                let dw = mm(col.t(), gf);
                sink.add(w, owned_into(&[3, 3, ic, oc], dw));
                sink.add(b, gf.sum_axis(Axis(0)).into_dyn());
                let wf = view2(v.get(w), 9 * ic, oc);
                let dcol = mm(gf, wf.t());
                sink.add(x, col2im3x3(&dcol, t, h, wd, ic));
            })),
        )
    }

    /// Non-overlapping 2x2 spatial max pooling over `[t, h, w, c]`.
    pub fn maxpool2(&mut self, x: Var) -> Var {
        let (t, h, w, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2], s[3])
        };
        debug_assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even extent");
        let (h2, w2) = (h / 2, w / 2);
        let xs = self.value(x).as_slice().unwrap();
        let mut out = vec![0.0; t * h2 * w2 * c];
        let mut argmax = vec![0u8; t * h2 * w2 * c];
        for f in 0..t {
            for r in 0..h2 {
                for cc in 0..w2 {
                    for ch in 0..c {
                        let o = (((f * h2) + r) * w2 + cc) * c + ch;
                        let mut best = f64::NEG_INFINITY;
                        let mut arg = 0u8;
                        for (i, (dr, dc)) in
                            [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                        {
                            let src = (((f * h) + 2 * r + dr) * w + 2 * cc + dc) * c + ch;
                            if xs[src] > best {
                                best = xs[src];
                                arg = i as u8;
                            }
                        }
                        out[o] = best;
                        argmax[o] = arg;
                    }
                }
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[t, h2, w2, c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = zeros(&[t, h, w, c]);
                {
                    let ds = dx.as_slice_mut().unwrap();
                    for f in 0..t {
                        for r in 0..h2 {
                            for cc in 0..w2 {
                                for ch in 0..c {
                                    let o = (((f * h2) + r) * w2 + cc) * c + ch;
                                    let (dr, dc) =
                                        [(0, 0), (0, 1), (1, 0), (1, 1)][argmax[o] as usize];
                                    let dst =
                                        (((f * h) + 2 * r + dr) * w + 2 * cc + dc) * c + ch;
                                    ds[dst] += gs[o];
                                }
                            }
                        }
                    }
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Elementwise max over the frame axis: `[t, h, w, c] -> [h, w, c]`.
    ///
    /// Ties resolve to the earliest frame so backward is deterministic.
    pub fn max_frames(&mut self, x: Var) -> Var {
        let (t, h, w, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2], s[3])
        };
        let xs = self.value(x).as_slice().unwrap();
        let cell = h * w * c;
        let mut out = vec![f64::NEG_INFINITY; cell];
        let mut argmax = vec![0u32; cell];
        for f in 0..t {
            for i in 0..cell {
                let v = xs[f * cell + i];
                if v > out[i] {
                    out[i] = v;
                    argmax[i] = f as u32;
                }
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[h, w, c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = zeros(&[t, h, w, c]);
                {
                    let ds = dx.as_slice_mut().unwrap();
                    for i in 0..cell {
                        ds[(argmax[i] as usize) * cell + i] += gs[i];
                    }
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Split `[h, w, c]` into `strips` horizontal bands and reduce each to
    /// its per-channel global max plus global mean: `[strips, c]`.
    pub fn strip_pool(&mut self, x: Var, strips: usize) -> Var {
        let (h, w, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        debug_assert!(h % strips == 0, "strip count must divide map height");
        let sh = h / strips;
        let xs = self.value(x).as_slice().unwrap();
        let mut out = vec![0.0; strips * c];
        let mut argmax = vec![0u32; strips * c];
        for s in 0..strips {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0u32;
                let mut sum = 0.0;
                for r in s * sh..(s + 1) * sh {
                    for cc in 0..w {
                        let idx = (r * w + cc) * c + ch;
                        sum += xs[idx];
                        if xs[idx] > best {
                            best = xs[idx];
                            arg = idx as u32;
                        }
                    }
                }
                out[s * c + ch] = best + sum / (sh * w) as f64;
                argmax[s * c + ch] = arg;
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[strips, c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = zeros(&[h, w, c]);
                {
                    let ds = dx.as_slice_mut().unwrap();
                    let denom = (sh * w) as f64;
                    for s in 0..strips {
                        for ch in 0..c {
                            let gv = gs[s * c + ch];
                            ds[argmax[s * c + ch] as usize] += gv;
                            for r in s * sh..(s + 1) * sh {
                                for cc in 0..w {
                                    ds[(r * w + cc) * c + ch] += gv / denom;
                                }
                            }
                        }
                    }
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Per-strip linear projection: `[strips, cin] x [strips, cin, cout]`.
    pub fn hpp_project(&mut self, x: Var, w: Var) -> Var {
        let (strips, cin) = {
            let s = self.value(x).shape();
            (s[0], s[1])
        };
        let cout = self.value(w).shape()[2];
        debug_assert_eq!(self.value(w).shape(), &[strips, cin, cout]);
        let mut out = vec![0.0; strips * cout];
        {
            let xs = self.value(x).as_slice().unwrap();
            let ws = self.value(w).as_slice().unwrap();
            for s in 0..strips {
                for i in 0..cin {
                    let xv = xs[s * cin + i];
                    let wrow = &ws[(s * cin + i) * cout..(s * cin + i + 1) * cout];
                    let orow = &mut out[s * cout..(s + 1) * cout];
                    for (o, wv) in orow.iter_mut().zip(wrow.iter()) {
                        *o += xv * wv;
                    }
                }
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[strips, cout]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let xs = v.get(x).as_slice().unwrap();
                let ws = v.get(w).as_slice().unwrap();
                let mut dx = vec![0.0; strips * cin];
                let mut dw = vec![0.0; strips * cin * cout];
                for s in 0..strips {
                    let grow = &gs[s * cout..(s + 1) * cout];
                    for i in 0..cin {
                        let xv = xs[s * cin + i];
                        let wrow = &ws[(s * cin + i) * cout..(s * cin + i + 1) * cout];
                        let dwrow = &mut dw[(s * cin + i) * cout..(s * cin + i + 1) * cout];
                        let mut acc = 0.0;
                        for o in 0..cout {
                            acc += grow[o] * wrow[o];
                            dwrow[o] += grow[o] * xv;
                        }
                        dx[s * cin + i] = acc;
                    }
                }
                sink.add(x, Arr::from_shape_vec(IxDyn(&[strips, cin]), dx).unwrap());
                sink.add(
                    w,
                    Arr::from_shape_vec(IxDyn(&[strips, cin, cout]), dw).unwrap(),
                );
            })),
        )
    }

    /// Frame-wise adjacency mixing: `y[f] = adj . x[f]` on `[t, K, c]`.
    pub fn graph_mix(&mut self, x: Var, adj: Arc<Array2<f64>>) -> Var {
        let (t, k, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        debug_assert_eq!(adj.shape(), &[k, k]);
        let mut value = zeros(&[t, k, c]);
        for f in 0..t {
            let xf = self
                .value(x)
                .index_axis(Axis(0), f)
                .into_dimensionality::<Ix2>()
                .unwrap();
            value
                .index_axis_mut(Axis(0), f)
                .assign(&adj.dot(&xf).into_dyn());
        }
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let mut dx = zeros(&[t, k, c]);
                let adj_t = adj.t();
                for f in 0..t {
                    let gf = g
                        .index_axis(Axis(0), f)
                        .into_dimensionality::<Ix2>()
                        .unwrap();
                    dx.index_axis_mut(Axis(0), f)
                        .assign(&adj_t.dot(&gf).into_dyn());
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Same-padded temporal convolution along frames of `[t, K, c]` with
    /// weights `[kernel, c, cout]` and bias `[cout]`.
    pub fn temporal_conv(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        let (t, k, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        let cout = self.value(w).shape()[2];
        debug_assert_eq!(self.value(w).shape(), &[kernel, c, cout]);
        debug_assert!(kernel % 2 == 1);
        let col = Arc::new(im2col_temporal(self.value(x), kernel));
        let wf = view2(self.value(w), kernel * c, cout);
        let mut out = mm(col.view(), wf);
        {
            let bv = self.value(b);
            for mut row in out.rows_mut() {
                for (o, v) in row.iter_mut().enumerate() {
                    *v += bv[[o]];
                }
            }
        }
        let value = owned_into(&[t, k, cout], out);
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let gf = view2(g, t * k, cout);
                let dw = mm(col.t(), gf);
                sink.add(w, owned_into(&[kernel, c, cout], dw));
                sink.add(b, gf.sum_axis(Axis(0)).into_dyn());
                let wf = view2(v.get(w), kernel * c, cout);
                let dcol = mm(gf, wf.t());
                sink.add(x, col2im_temporal(&dcol, t, k, c, kernel));
            })),
        )
    }

    /// Mean over frame and node axes: `[t, K, c] -> [c]`.
    pub fn mean_tk(&mut self, x: Var) -> Var {
        let (t, k, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        let denom = (t * k) as f64;
        let mut out = vec![0.0; c];
        for (i, v) in self.value(x).iter().enumerate() {
            out[i % c] += v / denom;
        }
        let value = Arr::from_shape_vec(IxDyn(&[c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = zeros(&[t, k, c]);
                for (i, v) in dx.iter_mut().enumerate() {
                    *v = gs[i % c] / denom;
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Mean over the node axis: `[t, K, c] -> [t, c]`.
    pub fn mean_nodes(&mut self, x: Var) -> Var {
        let (t, k, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        let xs = self.value(x).as_slice().unwrap();
        let mut out = vec![0.0; t * c];
        for f in 0..t {
            for n in 0..k {
                for ch in 0..c {
                    out[f * c + ch] += xs[(f * k + n) * c + ch] / k as f64;
                }
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[t, c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = zeros(&[t, k, c]);
                {
                    let ds = dx.as_slice_mut().unwrap();
                    for f in 0..t {
                        for n in 0..k {
                            for ch in 0..c {
                                ds[(f * k + n) * c + ch] = gs[f * c + ch] / k as f64;
                            }
                        }
                    }
                }
                sink.add(x, dx);
            })),
        )
    }

    /// Repeat a `[d]` vector at every `(frame, node)` slot: `-> [t, K, d]`.
    pub fn tile_to_nodes(&mut self, x: Var, t: usize, k: usize) -> Var {
        let d = self.value(x).len();
        let xs: Vec<f64> = self.value(x).as_slice().expect("standard layout").to_vec();
        let mut out = vec![0.0; t * k * d];
        for slot in 0..t * k {
            out[slot * d..(slot + 1) * d].copy_from_slice(&xs);
        }
        let value = Arr::from_shape_vec(IxDyn(&[t, k, d]), out).unwrap();
        let in_shape: Vec<usize> = self.value(x).shape().to_vec();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut dx = vec![0.0; d];
                for slot in 0..t * k {
                    for i in 0..d {
                        dx[i] += gs[slot * d + i];
                    }
                }
                sink.add(x, Arr::from_shape_vec(IxDyn(&in_shape), dx).unwrap());
            })),
        )
    }

    /// Add a per-frame vector to every node: `[t, K, c] + [t, c]`.
    pub fn broadcast_add_nodes(&mut self, x: Var, y: Var) -> Var {
        let (t, k, c) = {
            let s = self.value(x).shape();
            (s[0], s[1], s[2])
        };
        debug_assert_eq!(self.value(y).shape(), &[t, c]);
        let xs = self.value(x).as_slice().unwrap();
        let ys = self.value(y).as_slice().unwrap();
        let mut out = vec![0.0; t * k * c];
        for f in 0..t {
            for n in 0..k {
                for ch in 0..c {
                    out[(f * k + n) * c + ch] = xs[(f * k + n) * c + ch] + ys[f * c + ch];
                }
            }
        }
        let value = Arr::from_shape_vec(IxDyn(&[t, k, c]), out).unwrap();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                sink.add(x, g.clone());
                let gs = g.as_slice().unwrap();
                let mut dy = vec![0.0; t * c];
                for f in 0..t {
                    for n in 0..k {
                        for ch in 0..c {
                            dy[f * c + ch] += gs[(f * k + n) * c + ch];
                        }
                    }
                }
                sink.add(y, Arr::from_shape_vec(IxDyn(&[t, c]), dy).unwrap());
            })),
        )
    }

    /// Concatenate along the last axis; inputs share every leading axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| *self.value(p).shape().last().unwrap())
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &wd) in parts.iter().zip(widths.iter()) {
            let ps = self.value(p).as_slice().unwrap();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + wd]
                    .copy_from_slice(&ps[r * wd..(r + 1) * wd]);
            }
            offset += wd;
        }
        let mut shape = lead.clone();
        shape.push(total);
        let value = Arr::from_shape_vec(IxDyn(&shape), out).unwrap();
        let parts: Vec<Var> = parts.to_vec();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut offset = 0;
                for (&p, &wd) in parts.iter().zip(widths.iter()) {
                    let mut dp = vec![0.0; rows * wd];
                    for r in 0..rows {
                        dp[r * wd..(r + 1) * wd]
                            .copy_from_slice(&gs[r * total + offset..r * total + offset + wd]);
                    }
                    let mut shape = lead.clone();
                    shape.push(wd);
                    sink.add(p, Arr::from_shape_vec(IxDyn(&shape), dp).unwrap());
                    offset += wd;
                }
            })),
        )
    }

    /// Concatenate along axis 0; inputs share every trailing axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[1..].to_vec()
        };
        let heights: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[0]).collect();
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * tail.iter().product::<usize>());
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice().expect("standard layout"));
        }
        let mut shape = vec![total];
        shape.extend_from_slice(&tail);
        let value = Arr::from_shape_vec(IxDyn(&shape), data).unwrap();
        let parts: Vec<Var> = parts.to_vec();
        let row: usize = tail.iter().product();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                let mut offset = 0;
                for (&p, &ht) in parts.iter().zip(heights.iter()) {
                    let n = ht * row;
                    let mut shape = vec![ht];
                    shape.extend_from_slice(&tail);
                    sink.add(
                        p,
                        Arr::from_shape_vec(IxDyn(&shape), gs[offset..offset + n].to_vec())
                            .unwrap(),
                    );
                    offset += n;
                }
            })),
        )
    }

    /// Stack equal-shape tensors along a new leading axis.
    pub fn stack0(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let inner: Vec<usize> = self.value(parts[0]).shape().to_vec();
        let n: usize = inner.iter().product();
        let mut data = Vec::with_capacity(parts.len() * n);
        for &p in parts {
            debug_assert_eq!(self.value(p).shape(), &inner[..]);
            data.extend_from_slice(self.value(p).as_slice().expect("standard layout"));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let value = Arr::from_shape_vec(IxDyn(&shape), data).unwrap();
        let parts: Vec<Var> = parts.to_vec();
        self.push(
            value,
            Some(Box::new(move |g, _v, sink: &mut Grads| {
                let gs = g.as_slice().unwrap();
                for (i, &p) in parts.iter().enumerate() {
                    sink.add(
                        p,
                        Arr::from_shape_vec(IxDyn(&inner), gs[i * n..(i + 1) * n].to_vec())
                            .unwrap(),
                    );
                }
            })),
        )
    }

    /// Mean softmax cross-entropy of `[B, n]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Var {
        let (bsz, n) = {
            let s = self.value(logits).shape();
            (s[0], s[1])
        };
        debug_assert_eq!(labels.len(), bsz);
        let zs = self.value(logits).as_slice().unwrap();
        let mut total = 0.0;
        for b in 0..bsz {
            let row = &zs[b * n..(b + 1) * n];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            total += lse - row[labels[b]];
        }
        let value = arr(&[1], vec![total / bsz as f64]);
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let s = g[[0]] / bsz as f64;
                let zs = v.get(logits).as_slice().unwrap();
                let mut dz = vec![0.0; bsz * n];
                for b in 0..bsz {
                    let row = &zs[b * n..(b + 1) * n];
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..n {
                        dz[b * n + j] = s * (exps[j] / sum - f64::from(j == labels[b]));
                    }
                }
                sink.add(logits, Arr::from_shape_vec(IxDyn(&[bsz, n]), dz).unwrap());
            })),
        )
    }

    /// Batch-all triplet loss over part-wise features `[B, P, C]`.
    ///
    /// Each part row is scored independently with Euclidean distances; the
    /// hinge `max(0, d_ap - d_an + margin)` is averaged over the part's
    /// active triplets (0 when none are active), then over parts. The
    /// active-triplet count is treated as a constant in backward.
    pub fn batch_all_triplet(&mut self, features: Var, labels: Arc<Vec<u32>>, margin: f64) -> Var {
        let (bsz, parts, c) = {
            let s = self.value(features).shape();
            (s[0], s[1], s[2])
        };
        debug_assert_eq!(labels.len(), bsz);
        let fs = self.value(features).as_slice().unwrap();
        let mut loss = 0.0;
        for p in 0..parts {
            let mut part_sum = 0.0;
            let mut active = 0usize;
            for i in 0..bsz {
                for j in 0..bsz {
                    if i == j || labels[i] != labels[j] {
                        continue;
                    }
                    let d_ap = part_distance(fs, parts, c, p, i, j);
                    for k in 0..bsz {
                        if labels[k] == labels[i] {
                            continue;
                        }
                        let h = d_ap - part_distance(fs, parts, c, p, i, k) + margin;
                        if h > 0.0 {
                            part_sum += h;
                            active += 1;
                        }
                    }
                }
            }
            if active > 0 {
                loss += part_sum / active as f64;
            }
        }
        let value = arr(&[1], vec![loss / parts as f64]);
        self.push(
            value,
            Some(Box::new(move |g, v, sink: &mut Grads| {
                let scale = g[[0]] / parts as f64;
                let fs = v.get(features).as_slice().unwrap();
                // Coefficients on each pair distance, then chain through
                // d||a - b|| / da = (a - b) / ||a - b||.
                let mut dcoef = vec![0.0; parts * bsz * bsz];
                for p in 0..parts {
                    let mut touched: Vec<(usize, usize, f64)> = Vec::new();
                    let mut active = 0usize;
                    for i in 0..bsz {
                        for j in 0..bsz {
                            if i == j || labels[i] != labels[j] {
                                continue;
                            }
                            let d_ap = part_distance(fs, parts, c, p, i, j);
                            for k in 0..bsz {
                                if labels[k] == labels[i] {
                                    continue;
                                }
                                let h = d_ap - part_distance(fs, parts, c, p, i, k) + margin;
                                if h > 0.0 {
                                    active += 1;
                                    touched.push((i * bsz + j, i * bsz + k, 1.0));
                                }
                            }
                        }
                    }
                    if active == 0 {
                        continue;
                    }
                    let w = 1.0 / active as f64;
                    for (pos, neg, _) in touched {
                        dcoef[p * bsz * bsz + pos] += w;
                        dcoef[p * bsz * bsz + neg] -= w;
                    }
                }
                let mut df = vec![0.0; bsz * parts * c];
                for p in 0..parts {
                    for a in 0..bsz {
                        for b in 0..bsz {
                            let coef = dcoef[p * bsz * bsz + a * bsz + b];
                            if coef == 0.0 {
                                continue;
                            }
                            let d = part_distance(fs, parts, c, p, a, b).max(1e-12);
                            let ra = (a * parts + p) * c;
                            let rb = (b * parts + p) * c;
                            for ch in 0..c {
                                let diff = (fs[ra + ch] - fs[rb + ch]) / d;
                                df[ra + ch] += scale * coef * diff;
                                df[rb + ch] -= scale * coef * diff;
                            }
                        }
                    }
                }
                sink.add(
                    features,
                    Arr::from_shape_vec(IxDyn(&[bsz, parts, c]), df).unwrap(),
                );
            })),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::super::fd;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(shape: &[usize], rng: &mut ChaCha8Rng) -> Arr {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        arr(shape, data)
    }

    /// Check d(weighted_sum(op(inputs)))/d(inputs) against central differences.
    fn fd_check(build: impl Fn(&mut Tape, &[Var]) -> Var, inputs: &[Arr], tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (out_shape, _) = {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            (t.value(out).shape().to_vec(), t.value(out).len())
        };
        let weights = Arc::new(rand_arr(&out_shape, &mut rng));
        let eval = |inputs: &[Arr]| -> f64 {
            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let out = build(&mut t, &vars);
            let s = t.weighted_sum(out, weights.clone());
            t.scalar(s)
        };
        // Analytic gradients.
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let out = build(&mut t, &vars);
        let s = t.weighted_sum(out, weights.clone());
        let grads = t.backward_scalar(s);
        for (vi, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).cloned().unwrap_or_else(|| {
                Arr::zeros(IxDyn(inputs[vi].shape()))
            });
            let mut work: Vec<Arr> = inputs.to_vec();
            for idx in 0..inputs[vi].len() {
                let x0 = work[vi].as_slice().unwrap()[idx];
                let h = 1e-5 * x0.abs().max(1.0);
                work[vi].as_slice_mut().unwrap()[idx] = x0 + h;
                let fp = eval(&work);
                work[vi].as_slice_mut().unwrap()[idx] = x0 - h;
                let fm = eval(&work);
                work[vi].as_slice_mut().unwrap()[idx] = x0;
                let num = (fp - fm) / (2.0 * h);
                let ana = analytic.as_slice().unwrap()[idx];
                let rel = fd::relative_error(ana, num);
                assert!(
                    rel < tol,
                    "input {vi} coord {idx}: analytic {ana} vs numeric {num} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn fd_elementwise_and_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_arr(&[3, 4], &mut rng);
        let b = rand_arr(&[3, 4], &mut rng);
        fd_check(|t, v| t.add(v[0], v[1]), &[a.clone(), b], 1e-6);
        fd_check(|t, v| t.scale(v[0], -2.5), &[a.clone()], 1e-6);
        fd_check(|t, v| t.relu(v[0]), &[a.clone()], 1e-6);
        let m = rand_arr(&[3, 5], &mut rng);
        let w = rand_arr(&[5, 2], &mut rng);
        fd_check(|t, v| t.matmul(v[0], v[1]), &[m, w], 1e-6);
        let bias = rand_arr(&[4], &mut rng);
        fd_check(|t, v| t.add_rowvec(v[0], v[1]), &[a.clone(), bias], 1e-6);
        fd_check(|t, v| t.reshape(v[0], &[4, 3]), &[a.clone()], 1e-6);
        fd_check(|t, v| t.sum_all(v[0]), &[a], 1e-6);
    }

    #[test]
    fn fd_conv_and_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_arr(&[2, 4, 6, 3], &mut rng);
        let w = rand_arr(&[3, 3, 3, 2], &mut rng);
        let b = rand_arr(&[2], &mut rng);
        fd_check(|t, v| t.conv2d(v[0], v[1], v[2]), &[x.clone(), w, b], 1e-5);
        fd_check(|t, v| t.maxpool2(v[0]), &[x.clone()], 1e-5);
        fd_check(|t, v| t.max_frames(v[0]), &[x], 1e-5);
        let fm = rand_arr(&[4, 3, 2], &mut rng);
        fd_check(|t, v| t.strip_pool(v[0], 2), &[fm.clone()], 1e-5);
        let s = rand_arr(&[4, 3], &mut rng);
        let pw = rand_arr(&[4, 3, 2], &mut rng);
        fd_check(|t, v| t.hpp_project(v[0], v[1]), &[s, pw], 1e-6);
    }

    #[test]
    fn fd_graph_and_temporal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_arr(&[4, 3, 2], &mut rng);
        let adj = Arc::new(Array2::from_shape_fn((3, 3), |(i, j)| {
            0.2 + 0.1 * (i * 3 + j) as f64
        }));
        fd_check(
            move |t, v| t.graph_mix(v[0], adj.clone()),
            &[x.clone()],
            1e-6,
        );
        let w = rand_arr(&[9, 2, 3], &mut rng);
        let b = rand_arr(&[3], &mut rng);
        fd_check(
            |t, v| t.temporal_conv(v[0], v[1], v[2], 9),
            &[x.clone(), w, b],
            1e-5,
        );
        fd_check(|t, v| t.mean_tk(v[0]), &[x.clone()], 1e-6);
        fd_check(|t, v| t.mean_nodes(v[0]), &[x.clone()], 1e-6);
        let vec = rand_arr(&[5], &mut rng);
        fd_check(|t, v| t.tile_to_nodes(v[0], 2, 3), &[vec], 1e-6);
        let y = rand_arr(&[4, 2], &mut rng);
        fd_check(
            |t, v| t.broadcast_add_nodes(v[0], v[1]),
            &[x.clone(), y],
            1e-6,
        );
    }

    #[test]
    fn fd_concat_and_stack() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_arr(&[2, 3, 2], &mut rng);
        let b = rand_arr(&[2, 3, 4], &mut rng);
        fd_check(|t, v| t.concat_last(&[v[0], v[1]]), &[a.clone(), b], 1e-6);
        let c = rand_arr(&[3, 2], &mut rng);
        let d = rand_arr(&[5, 2], &mut rng);
        fd_check(|t, v| t.concat_rows(&[v[0], v[1]]), &[c.clone(), d], 1e-6);
        let e = rand_arr(&[3, 2], &mut rng);
        fd_check(|t, v| t.stack0(&[v[0], v[1]]), &[c, e], 1e-6);
    }

    #[test]
    fn fd_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let logits = rand_arr(&[4, 3], &mut rng);
        let labels = Arc::new(vec![0usize, 2, 1, 2]);
        fd_check(
            move |t, v| t.softmax_cross_entropy(v[0], labels.clone()),
            &[logits],
            1e-6,
        );
        let feats = rand_arr(&[4, 2, 3], &mut rng);
        let labels = Arc::new(vec![0u32, 0, 1, 1]);
        fd_check(
            move |t, v| t.batch_all_triplet(v[0], labels.clone(), 0.3),
            &[feats],
            1e-5,
        );
    }

    #[test]
    fn uniform_logits_loss_is_ln_n() {
        let mut t = Tape::new();
        let logits = t.leaf(zeros(&[2, 5]));
        let l = t.softmax_cross_entropy(logits, Arc::new(vec![1, 3]));
        assert!((t.scalar(l) - (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_embeddings_triplet_is_margin() {
        let mut t = Tape::new();
        let f = t.leaf(Arr::from_elem(IxDyn(&[4, 3, 2]), 0.7));
        let l = t.batch_all_triplet(f, Arc::new(vec![0, 0, 1, 1]), 0.25);
        assert!((t.scalar(l) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn easy_batch_triplet_is_zero() {
        // Two far-apart identity clusters: every hinge is inactive.
        let mut t = Tape::new();
        let mut data = vec![0.0; 4 * 1 * 2];
        data[0] = 100.0;
        data[2] = 100.1;
        data[4] = -100.0;
        data[6] = -100.1;
        let f = t.leaf(arr(&[4, 1, 2], data));
        let l = t.batch_all_triplet(f, Arc::new(vec![0, 0, 1, 1]), 0.2);
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn maxpool_forward_values() {
        let mut t = Tape::new();
        let x = t.leaf(arr(
            &[1, 2, 2, 1],
            vec![1.0, 2.0, 3.0, 4.0],
        ));
        let y = t.maxpool2(x);
        assert_eq!(t.value(y).as_slice().unwrap(), &[4.0]);
    }

    #[test]
    fn max_frames_takes_first_on_ties() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2, 1, 1, 1], vec![3.0, 3.0]));
        let y = t.max_frames(x);
        let g = t.backward(vec![(y, arr(&[1, 1, 1], vec![1.0]))]);
        assert_eq!(g.get(x).unwrap().as_slice().unwrap(), &[1.0, 0.0]);
    }
}
