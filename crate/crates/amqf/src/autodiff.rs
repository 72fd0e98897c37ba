//! Reverse-mode autodiff over `f64` ndarray values.
//!
//! A [`Graph`] is a tape of eagerly evaluated nodes. In recording mode each
//! op registers a closure that maps the output gradient to per-parent
//! gradient contributions; in forward-only mode the same ops run without
//! registering anything, so finite-difference oracles can evaluate the
//! pipeline with no gradient machinery involved.

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView2, ArrayView4, Axis, IxDyn};

use crate::ops;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&ArrayD<f64>, &mut dyn FnMut(usize, ArrayD<f64>))>;

struct Node {
    value: ArrayD<f64>,
    needs_grad: bool,
    back: Option<BackFn>,
}

pub struct Graph {
    nodes: Vec<Node>,
    record: bool,
}

/// Gradients of one scalar node w.r.t. every graph node that needed them.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` did not require one.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v.0].as_ref()
    }
}

impl Graph {
    pub fn recording() -> Self {
        Graph {
            nodes: Vec::new(),
            record: true,
        }
    }

    /// Forward-only graph: values are computed, no backward closures exist.
    pub fn forward_only() -> Self {
        Graph {
            nodes: Vec::new(),
            record: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    fn push_leaf(&mut self, value: ArrayD<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            needs_grad: needs_grad && self.record,
            back: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: ArrayD<f64>, needs_grad: bool, back: BackFn) -> Var {
        let needs = needs_grad && self.record;
        self.nodes.push(Node {
            value,
            needs_grad: needs,
            back: if needs { Some(back) } else { None },
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: ArrayD<f64>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn param4(&mut self, value: Array4<f64>) -> Var {
        self.param(value.into_dyn())
    }

    pub fn param2(&mut self, value: Array2<f64>) -> Var {
        self.param(value.into_dyn())
    }

    pub fn param1(&mut self, value: Array1<f64>) -> Var {
        self.param(value.into_dyn())
    }

    pub fn param_scalar(&mut self, value: f64) -> Var {
        self.param(ArrayD::from_elem(IxDyn(&[]), value))
    }

    /// Non-trainable leaf (inputs, targets).
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push_leaf(value, false)
    }

    pub fn constant4(&mut self, value: Array4<f64>) -> Var {
        self.constant(value.into_dyn())
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn value4(&self, v: Var) -> ArrayView4<'_, f64> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality()
            .expect("node is not rank 4")
    }

    pub fn value2(&self, v: Var) -> ArrayView2<'_, f64> {
        self.nodes[v.0]
            .value
            .view()
            .into_dimensionality()
            .expect("node is not rank 2")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        assert_eq!(val.len(), 1, "node is not scalar");
        *val.iter().next().unwrap()
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(self.record, "backward on a forward-only graph");
        assert_eq!(self.nodes[root.0].value.len(), 1, "root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.nodes[root.0].value.raw_dim(), 1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if let Some(back) = &self.nodes[id].back {
                let mut sink = |pid: usize, contrib: ArrayD<f64>| match &mut grads[pid] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                };
                back(&g, &mut sink);
            }
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    // ---- elementwise and scalar ops ----

    /// Elementwise linear combination of same-shape nodes.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty());
        let mut value = self.value(terms[0].1).mapv(|v| v * terms[0].0);
        for &(c, t) in &terms[1..] {
            value.zip_mut_with(self.value(t), |acc, v| *acc += c * v);
        }
        let needs = terms.iter().any(|&(_, t)| self.needs(t));
        let captured: Vec<(f64, usize, bool)> = terms
            .iter()
            .map(|&(c, t)| (c, t.0, self.needs(t)))
            .collect();
        self.push_op(
            value,
            needs,
            Box::new(move |g, sink| {
                for &(c, pid, pneeds) in &captured {
                    if pneeds {
                        sink(pid, g.mapv(|v| v * c));
                    }
                }
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(&[(1.0, a), (1.0, b)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.lincomb(&[(c, a)])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        let needs = self.needs(x);
        let y = value.clone();
        let pid = x.0;
        self.push_op(
            value,
            needs,
            Box::new(move |g, sink| {
                let mut gi = y.mapv(|v| 1.0 - v * v);
                gi.zip_mut_with(g, |a, b| *a *= b);
                sink(pid, gi);
            }),
        )
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let needs = self.needs(x);
        let shape = self.value(x).raw_dim();
        let pid = x.0;
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), s),
            needs,
            Box::new(move |g, sink| {
                let gv = g.iter().next().copied().unwrap();
                sink(pid, ArrayD::from_elem(shape.clone(), gv));
            }),
        )
    }

    /// Mean of scalar nodes, as a scalar node.
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let c = 1.0 / xs.len() as f64;
        let terms: Vec<(f64, Var)> = xs.iter().map(|&x| (c, x)).collect();
        self.lincomb(&terms)
    }

    // ---- spatial ops ----

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value4(x).to_owned();
        let wv = self.value4(w).to_owned();
        let bv: Array1<f64> = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality()
            .expect("bias is not rank 1")
            .to_owned();
        let out = ops::conv2d(&xv.view(), &wv.view(), &bv, stride, pad);
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(bias));
        let (xid, wid, bid) = (x.0, w.0, bias.0);
        let kernel = (wv.dim().0, wv.dim().1);
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                if nx {
                    let gi = ops::conv2d_grad_input(&g4, &wv.view(), stride, pad, xv.dim());
                    sink(xid, gi.into_dyn());
                }
                if nw {
                    let gw = ops::conv2d_grad_weight(&g4, &xv.view(), stride, pad, kernel);
                    sink(wid, gw.into_dyn());
                }
                if nb {
                    let gb = g4.sum_axis(Axis(0)).sum_axis(Axis(0)).sum_axis(Axis(0));
                    sink(bid, gb.into_dyn());
                }
            }),
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xv = self.value4(x).to_owned();
        let wv = self.value4(w).to_owned();
        let bv: Array1<f64> = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality()
            .expect("bias is not rank 1")
            .to_owned();
        let out = ops::conv_transpose2d(&xv.view(), &wv.view(), &bv, stride, pad);
        let needs = self.needs(x) || self.needs(w) || self.needs(bias);
        let (nx, nw, nb) = (self.needs(x), self.needs(w), self.needs(bias));
        let (xid, wid, bid) = (x.0, w.0, bias.0);
        let kernel = (wv.dim().0, wv.dim().1);
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                if nx {
                    let gi =
                        ops::conv_transpose2d_grad_input(&g4, &wv.view(), stride, pad, xv.dim());
                    sink(xid, gi.into_dyn());
                }
                if nw {
                    let gw = ops::conv_transpose2d_grad_weight(&g4, &xv.view(), stride, pad, kernel);
                    sink(wid, gw.into_dyn());
                }
                if nb {
                    let gb = g4.sum_axis(Axis(0)).sum_axis(Axis(0)).sum_axis(Axis(0));
                    sink(bid, gb.into_dyn());
                }
            }),
        )
    }

    pub fn pointwise(&mut self, x: Var, w: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let wv = self.value2(w).to_owned();
        let out = ops::pointwise(&xv.view(), &wv.view());
        let needs = self.needs(x) || self.needs(w);
        let (nx, nw) = (self.needs(x), self.needs(w));
        let (xid, wid) = (x.0, w.0);
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                let (b, h, wd, cout) = g4.dim();
                let gflat = g4.to_shape((b * h * wd, cout)).unwrap();
                if nx {
                    let gx = gflat.dot(&wv.t());
                    sink(
                        xid,
                        gx.into_shape_with_order(xv.raw_dim()).unwrap().into_dyn(),
                    );
                }
                if nw {
                    let cin = xv.dim().3;
                    let xflat = xv.to_shape((b * h * wd, cin)).unwrap();
                    let gw = xflat.t().dot(&gflat);
                    sink(wid, gw.into_dyn());
                }
            }),
        )
    }

    pub fn l2_normalize_last(&mut self, x: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let out = ops::l2_normalize_last(&xv.view());
        let needs = self.needs(x);
        let pid = x.0;
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                sink(pid, ops::l2_normalize_last_grad(&g4, &xv.view()).into_dyn());
            }),
        )
    }

    pub fn respond(&mut self, features: Var, words: Var) -> Var {
        let fv = self.value4(features).to_owned();
        let wv = self.value2(words).to_owned();
        let out = ops::respond_kernel(&fv.view(), &wv.view());
        let needs = self.needs(features) || self.needs(words);
        let (nf, nw) = (self.needs(features), self.needs(words));
        let (fid, wid) = (features.0, words.0);
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                let (b, h, wd, n) = g4.dim();
                let d = fv.dim().3;
                let gflat = g4.to_shape((b * h * wd, n)).unwrap();
                if nf {
                    let gf = gflat.dot(&wv);
                    sink(
                        fid,
                        gf.into_shape_with_order(fv.raw_dim()).unwrap().into_dyn(),
                    );
                }
                if nw {
                    let fflat = fv.to_shape((b * h * wd, d)).unwrap();
                    let gw = gflat.t().dot(&fflat);
                    sink(wid, gw.into_dyn());
                }
            }),
        )
    }

    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let out = ops::spatial_mean(&xv.view());
        let needs = self.needs(x);
        let pid = x.0;
        let (b, h, wd, n) = xv.dim();
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g2: ArrayView2<f64> = g.view().into_dimensionality().unwrap();
                let scale = 1.0 / (h * wd) as f64;
                let mut gi = Array4::zeros((b, h, wd, n));
                for bi in 0..b {
                    for y in 0..h {
                        for xi in 0..wd {
                            for k in 0..n {
                                gi[(bi, y, xi, k)] = g2[(bi, k)] * scale;
                            }
                        }
                    }
                }
                sink(pid, gi.into_dyn());
            }),
        )
    }

    /// Row-wise cosine similarity of two `[B, N]` nodes; degenerate rows
    /// (norm below `NORM_EPS`) score 0 with zero gradient.
    pub fn cosine_rows(&mut self, u: Var, v: Var) -> Var {
        let uv = self.value2(u).to_owned();
        let vv = self.value2(v).to_owned();
        assert_eq!(uv.dim(), vv.dim(), "cosine shape mismatch");
        let b = uv.dim().0;
        let mut out = Array1::zeros(b);
        for i in 0..b {
            let (q, _) = cosine_with_flag(uv.row(i).as_slice().unwrap(), vv.row(i).as_slice().unwrap());
            out[i] = q;
        }
        let needs = self.needs(u) || self.needs(v);
        let (nu, nv) = (self.needs(u), self.needs(v));
        let (uid, vid) = (u.0, v.0);
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g1 = g.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let mut gu = Array2::zeros(uv.dim());
                let mut gv = Array2::zeros(vv.dim());
                for i in 0..uv.dim().0 {
                    let ur = uv.row(i);
                    let vr = vv.row(i);
                    let nu_ = ur.dot(&ur).sqrt();
                    let nv_ = vr.dot(&vr).sqrt();
                    if nu_ < ops::NORM_EPS || nv_ < ops::NORM_EPS {
                        continue;
                    }
                    let q = ur.dot(&vr) / (nu_ * nv_);
                    for k in 0..ur.len() {
                        gu[(i, k)] = g1[i] * (vr[k] / (nu_ * nv_) - q * ur[k] / (nu_ * nu_));
                        gv[(i, k)] = g1[i] * (ur[k] / (nu_ * nv_) - q * vr[k] / (nv_ * nv_));
                    }
                }
                if nu {
                    sink(uid, gu.into_dyn());
                }
                if nv {
                    sink(vid, gv.into_dyn());
                }
            }),
        )
    }

    /// `a * x + b` with scalar nodes `a`, `b` broadcast over `x`.
    pub fn affine(&mut self, x: Var, a: Var, b: Var) -> Var {
        let av = self.scalar(a);
        let bv = self.scalar(b);
        let xv = self.value(x).clone();
        let out = xv.mapv(|t| av * t + bv);
        let needs = self.needs(x) || self.needs(a) || self.needs(b);
        let (nx, na, nb) = (self.needs(x), self.needs(a), self.needs(b));
        let (xid, aid, bid) = (x.0, a.0, b.0);
        self.push_op(
            out,
            needs,
            Box::new(move |g, sink| {
                if nx {
                    sink(xid, g.mapv(|t| t * av));
                }
                if na {
                    let da = (g * &xv).sum();
                    sink(aid, ArrayD::from_elem(IxDyn(&[]), da));
                }
                if nb {
                    sink(bid, ArrayD::from_elem(IxDyn(&[]), g.sum()));
                }
            }),
        )
    }

    // ---- losses ----

    /// Mean squared error against a constant target.
    pub fn mse_const(&mut self, pred: Var, target: &[f64]) -> Var {
        let pv = self.value(pred).clone();
        assert_eq!(pv.len(), target.len(), "mse target length mismatch");
        let n = target.len() as f64;
        let mse = pv
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let needs = self.needs(pred);
        let pid = pred.0;
        let tv = target.to_vec();
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), mse),
            needs,
            Box::new(move |g, sink| {
                let gs = g.iter().next().copied().unwrap();
                let mut gi = pv.clone();
                for (slot, t) in gi.iter_mut().zip(&tv) {
                    *slot = gs * 2.0 * (*slot - t) / n;
                }
                sink(pid, gi);
            }),
        )
    }

    /// Mean absolute difference against a constant target (L1).
    pub fn l1_mean_const(&mut self, x: Var, target: &ArrayD<f64>) -> Var {
        let xv = self.value(x).clone();
        assert_eq!(xv.shape(), target.shape(), "l1 target shape mismatch");
        let n = xv.len() as f64;
        let loss = xv
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n;
        let needs = self.needs(x);
        let pid = x.0;
        let tv = target.clone();
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), loss),
            needs,
            Box::new(move |g, sink| {
                let gs = g.iter().next().copied().unwrap();
                let mut gi = xv.clone();
                for (slot, t) in gi.iter_mut().zip(tv.iter()) {
                    *slot = gs * (*slot - t).signum_or_zero() / n;
                }
                sink(pid, gi);
            }),
        )
    }

    pub fn diff_rows(&mut self, x: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let out = ops::diff_rows(&xv.view());
        let needs = self.needs(x);
        let pid = x.0;
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                sink(pid, ops::diff_rows_grad(&g4).into_dyn());
            }),
        )
    }

    pub fn diff_cols(&mut self, x: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let out = ops::diff_cols(&xv.view());
        let needs = self.needs(x);
        let pid = x.0;
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g4: ArrayView4<f64> = g.view().into_dimensionality().unwrap();
                sink(pid, ops::diff_cols_grad(&g4).into_dyn());
            }),
        )
    }

    /// Reshape `[B,H,W,D]` into a `[B*H*W, D]` sample matrix.
    pub fn flatten_samples(&mut self, x: Var) -> Var {
        let xv = self.value4(x).to_owned();
        let (b, h, wd, d) = xv.dim();
        let flat = xv
            .to_shape((b * h * wd, d))
            .unwrap()
            .to_owned();
        let needs = self.needs(x);
        let pid = x.0;
        self.push_op(
            flat.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let gr = g
                    .view()
                    .into_dimensionality::<ndarray::Ix2>()
                    .unwrap()
                    .to_owned();
                sink(
                    pid,
                    gr.into_shape_with_order((b, h, wd, d)).unwrap().into_dyn(),
                );
            }),
        )
    }

    /// Stack two sample matrices along rows.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let av = self.value2(a).to_owned();
        let bv = self.value2(b).to_owned();
        let out = ndarray::concatenate(Axis(0), &[av.view(), bv.view()]).unwrap();
        let needs = self.needs(a) || self.needs(b);
        let (na, nb) = (self.needs(a), self.needs(b));
        let (aid, bid) = (a.0, b.0);
        let split = av.dim().0;
        self.push_op(
            out.into_dyn(),
            needs,
            Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                if na {
                    sink(aid, g2.slice(ndarray::s![..split, ..]).to_owned().into_dyn());
                }
                if nb {
                    sink(bid, g2.slice(ndarray::s![split.., ..]).to_owned().into_dyn());
                }
            }),
        )
    }

    /// Decorrelation penalty of a `[M, D]` sample matrix.
    pub fn decorrelation(&mut self, samples: Var) -> Var {
        let xv = self.value2(samples).to_owned();
        let loss = ops::decorrelation_kernel(&xv.view());
        let needs = self.needs(samples);
        let pid = samples.0;
        self.push_op(
            ArrayD::from_elem(IxDyn(&[]), loss),
            needs,
            Box::new(move |g, sink| {
                let gs = g.iter().next().copied().unwrap();
                let gi = ops::decorrelation_grad(&xv.view()).mapv(|v| v * gs);
                sink(pid, gi.into_dyn());
            }),
        )
    }
}

/// Cosine similarity of two equal-length slices with the degenerate-norm
/// guard; the flag reports degeneracy.
pub fn cosine_with_flag(u: &[f64], v: &[f64]) -> (f64, bool) {
    debug_assert_eq!(u.len(), v.len());
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < ops::NORM_EPS || nv < ops::NORM_EPS {
        return (0.0, true);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    ((dot / (nu * nv)).clamp(-1.0, 1.0), false)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn rand_dyn(shape: &[usize], seed: u64) -> ArrayD<f64> {
        let mut rng = rng_for(seed, &[99]);
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    /// Central-difference gradient of a scalar-valued rebuild function.
    fn numeric_grad(
        base: &ArrayD<f64>,
        eval: impl Fn(&ArrayD<f64>) -> f64,
        eps: f64,
    ) -> ArrayD<f64> {
        let mut grad = ArrayD::zeros(base.raw_dim());
        let mut work = base.clone();
        for idx in 0..base.len() {
            let orig = work.as_slice_mut().unwrap()[idx];
            work.as_slice_mut().unwrap()[idx] = orig + eps;
            let plus = eval(&work);
            work.as_slice_mut().unwrap()[idx] = orig - eps;
            let minus = eval(&work);
            work.as_slice_mut().unwrap()[idx] = orig;
            grad.as_slice_mut().unwrap()[idx] = (plus - minus) / (2.0 * eps);
        }
        grad
    }

    fn assert_close(analytic: &ArrayD<f64>, numeric: &ArrayD<f64>, rtol: f64) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let tol = 1e-8 + rtol * a.abs().max(n.abs());
            assert!(
                (a - n).abs() <= tol,
                "gradient mismatch: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn tanh_and_lincomb_gradients() {
        let x0 = rand_dyn(&[2, 3, 3, 2], 1);
        let eval = |x: &ArrayD<f64>| {
            let mut g = Graph::forward_only();
            let xv = g.constant(x.clone());
            let t = g.tanh(xv);
            let s = g.lincomb(&[(0.5, t), (2.0, xv)]);
            let out = g.sum_all(s);
            g.scalar(out)
        };
        let mut g = Graph::recording();
        let xv = g.param(x0.clone());
        let t = g.tanh(xv);
        let s = g.lincomb(&[(0.5, t), (2.0, xv)]);
        let out = g.sum_all(s);
        let grads = g.backward(out);
        let numeric = numeric_grad(&x0, eval, 1e-6);
        assert_close(grads.get(xv).unwrap(), &numeric, 1e-6);
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let x0 = rand_dyn(&[1, 6, 6, 2], 2);
        let w0 = rand_dyn(&[3, 3, 2, 3], 3);
        let b0 = rand_dyn(&[3], 4);
        let eval = |x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>| {
            let mut g = Graph::forward_only();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv2d(xv, wv, bv, 2, 1);
            let t = g.tanh(y);
            let out = g.sum_all(t);
            g.scalar(out)
        };
        let mut g = Graph::recording();
        let (xv, wv, bv) = (g.param(x0.clone()), g.param(w0.clone()), g.param(b0.clone()));
        let y = g.conv2d(xv, wv, bv, 2, 1);
        let t = g.tanh(y);
        let out = g.sum_all(t);
        let grads = g.backward(out);
        assert_close(
            grads.get(xv).unwrap(),
            &numeric_grad(&x0, |x| eval(x, &w0, &b0), 1e-6),
            1e-5,
        );
        assert_close(
            grads.get(wv).unwrap(),
            &numeric_grad(&w0, |w| eval(&x0, w, &b0), 1e-6),
            1e-5,
        );
        assert_close(
            grads.get(bv).unwrap(),
            &numeric_grad(&b0, |b| eval(&x0, &w0, b), 1e-6),
            1e-5,
        );
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let x0 = rand_dyn(&[1, 3, 3, 2], 5);
        let w0 = rand_dyn(&[4, 4, 2, 2], 6);
        let b0 = rand_dyn(&[2], 7);
        let eval = |x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>| {
            let mut g = Graph::forward_only();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
            let y = g.conv_transpose2d(xv, wv, bv, 2, 1);
            let out = g.sum_all(y);
            g.scalar(out).powi(2)
        };
        let mut g = Graph::recording();
        let (xv, wv, bv) = (g.param(x0.clone()), g.param(w0.clone()), g.param(b0.clone()));
        let y = g.conv_transpose2d(xv, wv, bv, 2, 1);
        let s = g.sum_all(y);
        // square the scalar through lincomb of itself is unavailable; emulate
        // f = s^2 by backpropagating and comparing against d(s^2)/dp = 2 s ds/dp.
        let grads = g.backward(s);
        let sval = g.scalar(s);
        let gx = grads.get(xv).unwrap().mapv(|v| 2.0 * sval * v);
        assert_close(&gx, &numeric_grad(&x0, |x| eval(x, &w0, &b0), 1e-6), 1e-5);
        let gw = grads.get(wv).unwrap().mapv(|v| 2.0 * sval * v);
        assert_close(&gw, &numeric_grad(&w0, |w| eval(&x0, w, &b0), 1e-6), 1e-5);
        let gb = grads.get(bv).unwrap().mapv(|v| 2.0 * sval * v);
        assert_close(&gb, &numeric_grad(&b0, |b| eval(&x0, &w0, b), 1e-6), 1e-5);
    }

    #[test]
    fn forward_only_graph_registers_no_backward() {
        let mut g = Graph::forward_only();
        let x = g.param(rand_dyn(&[1, 2, 2, 1], 8));
        let y = g.tanh(x);
        assert!(!g.is_recording());
        assert!(g.nodes[y.0].back.is_none());
        assert!(!g.nodes[y.0].needs_grad);
    }

    #[test]
    fn needs_grad_skips_constant_branches() {
        let mut g = Graph::recording();
        let x = g.constant(rand_dyn(&[1, 4, 4, 2], 9));
        let w = g.param(rand_dyn(&[3, 3, 2, 2], 10));
        let b = g.param(rand_dyn(&[2], 11));
        let y = g.conv2d(x, w, b, 1, 1);
        let out = g.sum_all(y);
        let grads = g.backward(out);
        assert!(grads.get(x).is_none());
        assert!(grads.get(w).is_some());
    }

    #[test]
    fn mse_and_affine_gradients() {
        let x0 = rand_dyn(&[5], 12);
        let target = [0.1, 0.4, -0.2, 0.9, 0.3];
        let eval = |x: &ArrayD<f64>, a: f64, b: f64| {
            let mut g = Graph::forward_only();
            let xv = g.constant(x.clone());
            let av = g.param_scalar(a);
            let bv = g.param_scalar(b);
            let cal = g.affine(xv, av, bv);
            let out = g.mse_const(cal, &target);
            g.scalar(out)
        };
        let mut g = Graph::recording();
        let xv = g.param(x0.clone());
        let av = g.param_scalar(0.7);
        let bv = g.param_scalar(-0.1);
        let cal = g.affine(xv, av, bv);
        let out = g.mse_const(cal, &target);
        let grads = g.backward(out);
        let gx_num = numeric_grad(&x0, |x| eval(x, 0.7, -0.1), 1e-6);
        assert_close(grads.get(xv).unwrap(), &gx_num, 1e-6);
        let da_num = (eval(&x0, 0.7 + 1e-6, -0.1) - eval(&x0, 0.7 - 1e-6, -0.1)) / 2e-6;
        let da = grads.get(av).unwrap().iter().next().copied().unwrap();
        assert!((da - da_num).abs() < 1e-6 * da.abs().max(1.0));
    }
}
