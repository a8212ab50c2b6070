//! Operation set for the tape. Each method validates shapes eagerly (shape
//! bugs are programmer errors, so these are `assert!`s, not `Result`s),
//! computes the forward value, and registers a closure producing the
//! vector-Jacobian product for each differentiable parent.

use super::{Tensor, Value};
use ndarray::{Array1, Array2, ArrayD, ArrayView2, Axis, Dimension, Ix1, Ix2, Ix3, IxDyn};
use std::rc::Rc;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn as2(v: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    v.view().into_dimensionality::<Ix2>().expect("expected 2-D value")
}

impl<'t> Tensor<'t> {
    fn binary_needs_grad(self, rhs: Tensor<'t>) -> bool {
        self.needs_grad() || rhs.needs_grad()
    }

    // ---- elementwise arithmetic -------------------------------------------

    pub fn add(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let out = &*a + &*b;
        let (ia, ib, ga, gb) = (self.id, rhs.id, self.needs_grad(), rhs.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(rhs),
            Some(Box::new(move |g| {
                let mut v = Vec::new();
                if ga {
                    v.push((ia, g.clone()));
                }
                if gb {
                    v.push((ib, g.clone()));
                }
                v
            })),
        )
    }

    pub fn sub(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        let out = &*a - &*b;
        let (ia, ib, ga, gb) = (self.id, rhs.id, self.needs_grad(), rhs.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(rhs),
            Some(Box::new(move |g| {
                let mut v = Vec::new();
                if ga {
                    v.push((ia, g.clone()));
                }
                if gb {
                    v.push((ib, -g));
                }
                v
            })),
        )
    }

    pub fn mul(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), rhs.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let out = &*a * &*b;
        let (ia, ib, ga, gb) = (self.id, rhs.id, self.needs_grad(), rhs.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(rhs),
            Some(Box::new(move |g| {
                let mut v = Vec::new();
                if ga {
                    v.push((ia, g * &*b));
                }
                if gb {
                    v.push((ib, g * &*a));
                }
                v
            })),
        )
    }

    pub fn mul_scalar(self, s: f64) -> Tensor<'t> {
        let a = self.value();
        let out = &*a * s;
        let ia = self.id;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| vec![(ia, g * s)])),
        )
    }

    pub fn add_scalar(self, s: f64) -> Tensor<'t> {
        let a = self.value();
        let out = &*a + s;
        let ia = self.id;
        self.tape
            .push(out, self.needs_grad(), Some(Box::new(move |g| vec![(ia, g.clone())])))
    }

    // ---- broadcasting helpers over (rows, cols) ---------------------------

    /// `(n, c) + (c)` — bias addition.
    pub fn add_rowvec(self, v: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), v.value());
        let (a2, b1) = (as2(&a), b.view().into_dimensionality::<Ix1>().expect("bias must be 1-D"));
        assert_eq!(a2.ncols(), b1.len(), "add_rowvec: width mismatch");
        let out = (&a2 + &b1).into_dyn();
        let (ia, ib, ga, gb) = (self.id, v.id, self.needs_grad(), v.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(v),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut out = Vec::new();
                if ga {
                    out.push((ia, g.clone()));
                }
                if gb {
                    out.push((ib, g2.sum_axis(Axis(0)).into_dyn()));
                }
                out
            })),
        )
    }

    /// `(n, c) * (c)` — per-channel scaling.
    pub fn mul_rowvec(self, v: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), v.value());
        let (a2, b1) = (as2(&a), b.view().into_dimensionality::<Ix1>().expect("scale must be 1-D"));
        assert_eq!(a2.ncols(), b1.len(), "mul_rowvec: width mismatch");
        let out = (&a2 * &b1).into_dyn();
        let (ia, ib, ga, gb) = (self.id, v.id, self.needs_grad(), v.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(v),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut out = Vec::new();
                if ga {
                    out.push((ia, (&g2 * &b.view().into_dimensionality::<Ix1>().unwrap()).into_dyn()));
                }
                if gb {
                    out.push((ib, (&g2 * &as2(&a)).sum_axis(Axis(0)).into_dyn()));
                }
                out
            })),
        )
    }

    /// `(n, c) * (n)` — per-row scaling (spatial gates, attention maps).
    pub fn mul_colvec(self, v: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), v.value());
        let a2 = as2(&a);
        let b1 = b.view().into_dimensionality::<Ix1>().expect("gate must be 1-D");
        assert_eq!(a2.nrows(), b1.len(), "mul_colvec: height mismatch");
        let col = b1.view().insert_axis(Axis(1));
        let out = (&a2 * &col).into_dyn();
        let (ia, ib, ga, gb) = (self.id, v.id, self.needs_grad(), v.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(v),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut out = Vec::new();
                if ga {
                    let col = b.view().into_dimensionality::<Ix1>().unwrap().insert_axis(Axis(1));
                    out.push((ia, (&g2 * &col).into_dyn()));
                }
                if gb {
                    out.push((ib, (&g2 * &as2(&a)).sum_axis(Axis(1)).into_dyn()));
                }
                out
            })),
        )
    }

    // ---- linear algebra ---------------------------------------------------

    /// `(n, k) x (k, m)`.
    pub fn matmul(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), rhs.value());
        let (a2, b2) = (as2(&a), as2(&b));
        assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dim mismatch");
        let out = a2.dot(&b2).into_dyn();
        let (ia, ib, ga, gb) = (self.id, rhs.id, self.needs_grad(), rhs.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(rhs),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut out = Vec::new();
                if ga {
                    out.push((ia, g2.dot(&as2(&b).t()).into_dyn()));
                }
                if gb {
                    out.push((ib, as2(&a).t().dot(&g2).into_dyn()));
                }
                out
            })),
        )
    }

    /// Batched matmul: `(b, n, k) x (b, k, m)`.
    pub fn bmm(self, rhs: Tensor<'t>) -> Tensor<'t> {
        let (a, b) = (self.value(), rhs.value());
        let a3 = a.view().into_dimensionality::<Ix3>().expect("bmm lhs must be 3-D");
        let b3 = b.view().into_dimensionality::<Ix3>().expect("bmm rhs must be 3-D");
        assert_eq!(a3.shape()[0], b3.shape()[0], "bmm: batch mismatch");
        assert_eq!(a3.shape()[2], b3.shape()[1], "bmm: inner dim mismatch");
        let (nb, n, m) = (a3.shape()[0], a3.shape()[1], b3.shape()[2]);
        let mut out = ArrayD::zeros(IxDyn(&[nb, n, m]));
        {
            let mut o3 = out.view_mut().into_dimensionality::<Ix3>().unwrap();
            for i in 0..nb {
                o3.index_axis_mut(Axis(0), i)
                    .assign(&a3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i)));
            }
        }
        let (ia, ib, ga, gb) = (self.id, rhs.id, self.needs_grad(), rhs.needs_grad());
        self.tape.push(
            out,
            self.binary_needs_grad(rhs),
            Some(Box::new(move |g| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
                let b3 = b.view().into_dimensionality::<Ix3>().unwrap();
                let mut out = Vec::new();
                if ga {
                    let mut da = ArrayD::zeros(a.raw_dim());
                    {
                        let mut d3 = da.view_mut().into_dimensionality::<Ix3>().unwrap();
                        for i in 0..g3.shape()[0] {
                            d3.index_axis_mut(Axis(0), i).assign(
                                &g3.index_axis(Axis(0), i).dot(&b3.index_axis(Axis(0), i).t()),
                            );
                        }
                    }
                    out.push((ia, da));
                }
                if gb {
                    let mut db = ArrayD::zeros(b.raw_dim());
                    {
                        let mut d3 = db.view_mut().into_dimensionality::<Ix3>().unwrap();
                        for i in 0..g3.shape()[0] {
                            d3.index_axis_mut(Axis(0), i).assign(
                                &a3.index_axis(Axis(0), i).t().dot(&g3.index_axis(Axis(0), i)),
                            );
                        }
                    }
                    out.push((ib, db));
                }
                out
            })),
        )
    }

    // ---- nonlinearities ---------------------------------------------------

    pub fn relu(self) -> Tensor<'t> {
        let a = self.value();
        let out = a.mapv(|x| x.max(0.0));
        let ia = self.id;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let mask = a.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                vec![(ia, g * &mask)]
            })),
        )
    }

    pub fn sigmoid(self) -> Tensor<'t> {
        let a = self.value();
        let out = a.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let y = Rc::new(out.clone());
        let ia = self.id;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let d = y.mapv(|s| s * (1.0 - s));
                vec![(ia, g * &d)]
            })),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Tensor<'t> {
        let a = self.value();
        let out = a.mapv(|x| {
            let u = GELU_C * (x + GELU_A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        let ia = self.id;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let d = a.mapv(|x| {
                    let u = GELU_C * (x + GELU_A * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
                });
                vec![(ia, g * &d)]
            })),
        )
    }

    // ---- normalization ----------------------------------------------------

    /// Row-wise layer norm over `(n, c)` with per-channel affine.
    pub fn layer_norm(self, gamma: Tensor<'t>, beta: Tensor<'t>, eps: f64) -> Tensor<'t> {
        let (x, gv, bv) = (self.value(), gamma.value(), beta.value());
        let x2 = as2(&x);
        let c = x2.ncols();
        assert_eq!(gv.len(), c, "layer_norm: gamma width mismatch");
        assert_eq!(bv.len(), c, "layer_norm: beta width mismatch");
        let mu = x2.mean_axis(Axis(1)).unwrap();
        let var = x2.var_axis(Axis(1), 0.0);
        let inv_std: Array1<f64> = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut xhat = Array2::<f64>::zeros(x2.raw_dim());
        for (i, mut row) in xhat.rows_mut().into_iter().enumerate() {
            let xr = x2.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o = (xr[j] - mu[i]) * inv_std[i];
            }
        }
        let g1 = gv.view().into_dimensionality::<Ix1>().unwrap();
        let b1 = bv.view().into_dimensionality::<Ix1>().unwrap();
        let out = (&xhat * &g1 + &b1).into_dyn();
        let xhat = Rc::new(xhat);
        let inv_std = Rc::new(inv_std);
        let (ix, ig, ib) = (self.id, gamma.id, beta.id);
        let (nx, ng, nb) = (self.needs_grad(), gamma.needs_grad(), beta.needs_grad());
        self.tape.push(
            out,
            nx || ng || nb,
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut out = Vec::new();
                if nb {
                    out.push((ib, g2.sum_axis(Axis(0)).into_dyn()));
                }
                if ng {
                    out.push((ig, (&g2 * &*xhat).sum_axis(Axis(0)).into_dyn()));
                }
                if nx {
                    // dxhat = g * gamma; dx = inv_std*(dxhat - mean(dxhat)
                    //   - xhat * mean(dxhat*xhat)) per row.
                    let gam = gv.view().into_dimensionality::<Ix1>().unwrap();
                    let dxhat = &g2 * &gam;
                    let m1 = dxhat.mean_axis(Axis(1)).unwrap();
                    let m2 = (&dxhat * &*xhat).mean_axis(Axis(1)).unwrap();
                    let mut dx = Array2::<f64>::zeros(g2.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        for (j, o) in row.iter_mut().enumerate() {
                            *o = inv_std[i] * (dxhat[(i, j)] - m1[i] - xhat[(i, j)] * m2[i]);
                        }
                    }
                    out.push((ix, dx.into_dyn()));
                }
                out
            })),
        )
    }

    /// Softmax along the last axis, numerically stabilized.
    pub fn softmax_last(self) -> Tensor<'t> {
        let a = self.value();
        let last = a.ndim() - 1;
        let mut out = a.as_ref().clone();
        for mut lane in out.lanes_mut(Axis(last)) {
            let m = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|x| (x - m).exp());
            let s: f64 = lane.sum();
            lane.mapv_inplace(|x| x / s);
        }
        let y = Rc::new(out.clone());
        let ia = self.id;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                // dx = y * (g - sum(g*y)) along the softmax axis.
                let gy = g * &*y;
                let last = gy.ndim() - 1;
                let dots = gy.sum_axis(Axis(last));
                let mut dx = g.clone();
                for ((mut dlane, ylane), &d) in dx
                    .lanes_mut(Axis(last))
                    .into_iter()
                    .zip(y.lanes(Axis(last)))
                    .zip(dots.iter())
                {
                    for (o, &yv) in dlane.iter_mut().zip(ylane.iter()) {
                        *o = yv * (*o - d);
                    }
                }
                vec![(ia, dx)]
            })),
        )
    }

    // ---- reductions and reshaping -----------------------------------------

    pub fn sum_all(self) -> Tensor<'t> {
        let a = self.value();
        let s = a.sum();
        let shape = a.raw_dim();
        let ia = self.id;
        self.tape.push(
            ArrayD::from_elem(IxDyn(&[1]), s),
            self.needs_grad(),
            Some(Box::new(move |g| {
                let gv = g[[0]];
                vec![(ia, ArrayD::from_elem(shape.clone(), gv))]
            })),
        )
    }

    /// Mean over all elements.
    pub fn mean_all(self) -> Tensor<'t> {
        let n = self.value().len() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Column means of `(n, c)` -> `(c)`.
    pub fn mean_rows(self) -> Tensor<'t> {
        let a = self.value();
        let a2 = as2(&a);
        let n = a2.nrows() as f64;
        let out = a2.mean_axis(Axis(0)).unwrap().into_dyn();
        let ia = self.id;
        let shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let mut dx = ArrayD::zeros(shape.clone());
                for mut row in dx.view_mut().into_dimensionality::<Ix2>().unwrap().rows_mut() {
                    for (j, o) in row.iter_mut().enumerate() {
                        *o = g1[j] / n;
                    }
                }
                vec![(ia, dx)]
            })),
        )
    }

    /// Row means of `(n, c)` -> `(n, 1)` (channel pooling for spatial gates).
    pub fn mean_cols(self) -> Tensor<'t> {
        let a = self.value();
        let a2 = as2(&a);
        let c = a2.ncols() as f64;
        let out = a2
            .mean_axis(Axis(1))
            .unwrap()
            .insert_axis(Axis(1))
            .into_dyn();
        let ia = self.id;
        let shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let mut dx = ArrayD::zeros(shape.clone());
                {
                    let mut d2 = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for (i, mut row) in d2.rows_mut().into_iter().enumerate() {
                        let gi = g2[(i, 0)] / c;
                        row.fill(gi);
                    }
                }
                vec![(ia, dx)]
            })),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Tensor<'t> {
        let a = self.value();
        assert_eq!(
            a.len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch"
        );
        let out = a
            .as_ref()
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape on standard layout");
        let ia = self.id;
        let in_shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                vec![(
                    ia,
                    g.clone()
                        .into_shape_with_order(in_shape.clone())
                        .expect("reshape grad"),
                )]
            })),
        )
    }

    // ---- indexing ---------------------------------------------------------

    /// `out.flat[i] = in.flat[idx[i]]`. Indices may repeat.
    pub fn gather(self, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Tensor<'t> {
        let a = self.value();
        let flat = a.as_slice().expect("gather input must be standard layout");
        assert_eq!(
            idx.len(),
            out_shape.iter().product::<usize>(),
            "gather: index count mismatch"
        );
        let data: Vec<f64> = idx.iter().map(|&i| flat[i]).collect();
        let out = ArrayD::from_shape_vec(IxDyn(out_shape), data).unwrap();
        let ia = self.id;
        let in_shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let gflat = g.as_slice().expect("gather grad layout");
                let mut dx = vec![0.0; in_shape.size()];
                for (o, &i) in idx.iter().enumerate() {
                    dx[i] += gflat[o];
                }
                vec![(ia, ArrayD::from_shape_vec(in_shape.clone(), dx).unwrap())]
            })),
        )
    }

    /// `out.flat[idx[i]] += in.flat[i]` into a zeroed buffer of `out_shape`.
    /// Indices must be unique for the forward to be a pure placement.
    pub fn scatter(self, idx: Rc<Vec<usize>>, out_shape: &[usize]) -> Tensor<'t> {
        let a = self.value();
        let flat = a.as_slice().expect("scatter input must be standard layout");
        assert_eq!(idx.len(), flat.len(), "scatter: index count mismatch");
        let mut data = vec![0.0; out_shape.iter().product()];
        for (i, &o) in idx.iter().enumerate() {
            data[o] += flat[i];
        }
        let out = ArrayD::from_shape_vec(IxDyn(out_shape), data).unwrap();
        let ia = self.id;
        let in_shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let gflat = g.as_slice().expect("scatter grad layout");
                let data: Vec<f64> = idx.iter().map(|&o| gflat[o]).collect();
                vec![(ia, ArrayD::from_shape_vec(in_shape.clone(), data).unwrap())]
            })),
        )
    }

    /// Contiguous flat slice `[start, start+len)` viewed as `out_shape`.
    pub fn narrow_flat(self, start: usize, out_shape: &[usize]) -> Tensor<'t> {
        let a = self.value();
        let flat = a.as_slice().expect("narrow input must be standard layout");
        let len: usize = out_shape.iter().product();
        assert!(start + len <= flat.len(), "narrow_flat: out of range");
        let out = ArrayD::from_shape_vec(IxDyn(out_shape), flat[start..start + len].to_vec()).unwrap();
        let ia = self.id;
        let in_shape = a.raw_dim();
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                let gflat = g.as_slice().expect("narrow grad layout");
                let mut dx = vec![0.0; in_shape.size()];
                dx[start..start + gflat.len()].copy_from_slice(gflat);
                vec![(ia, ArrayD::from_shape_vec(in_shape.clone(), dx).unwrap())]
            })),
        )
    }

    // ---- convolutions over flattened (h*w, c) maps ------------------------

    /// Depthwise 3x3 convolution with zero padding ("same"), kernel `(c, 3, 3)`,
    /// bias `(c)`, input `(h*w, c)` in row-major spatial order.
    pub fn dwconv3x3(self, kernel: Tensor<'t>, bias: Tensor<'t>, h: usize, w: usize) -> Tensor<'t> {
        let (x, kv, bv) = (self.value(), kernel.value(), bias.value());
        let x2 = as2(&x);
        let c = x2.ncols();
        assert_eq!(x2.nrows(), h * w, "dwconv3x3: spatial size mismatch");
        assert_eq!(kv.shape(), [c, 3, 3], "dwconv3x3: kernel shape");
        assert_eq!(bv.len(), c, "dwconv3x3: bias shape");
        let k3 = kv.view().into_dimensionality::<Ix3>().unwrap();
        let b1 = bv.view().into_dimensionality::<Ix1>().unwrap();
        let mut out = Array2::<f64>::zeros((h * w, c));
        for y in 0..h {
            for xq in 0..w {
                for ch in 0..c {
                    let mut acc = b1[ch];
                    for dy in 0..3usize {
                        for dx in 0..3usize {
                            let sy = y as isize + dy as isize - 1;
                            let sx = xq as isize + dx as isize - 1;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                acc += k3[(ch, dy, dx)] * x2[((sy as usize) * w + sx as usize, ch)];
                            }
                        }
                    }
                    out[(y * w + xq, ch)] = acc;
                }
            }
        }
        let (ix, ik, ib) = (self.id, kernel.id, bias.id);
        let (nx, nk, nb) = (self.needs_grad(), kernel.needs_grad(), bias.needs_grad());
        self.tape.push(
            out.into_dyn(),
            nx || nk || nb,
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let x2 = as2(&x);
                let k3 = kv.view().into_dimensionality::<Ix3>().unwrap();
                let mut outv = Vec::new();
                if nb {
                    outv.push((ib, g2.sum_axis(Axis(0)).into_dyn()));
                }
                if nk {
                    let mut dk = ndarray::Array3::<f64>::zeros((k3.shape()[0], 3, 3));
                    for y in 0..h {
                        for xq in 0..w {
                            for ch in 0..k3.shape()[0] {
                                let go = g2[(y * w + xq, ch)];
                                if go == 0.0 {
                                    continue;
                                }
                                for dy in 0..3usize {
                                    for dx in 0..3usize {
                                        let sy = y as isize + dy as isize - 1;
                                        let sx = xq as isize + dx as isize - 1;
                                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                            dk[(ch, dy, dx)] +=
                                                go * x2[((sy as usize) * w + sx as usize, ch)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    outv.push((ik, dk.into_dyn()));
                }
                if nx {
                    let c = x2.ncols();
                    let mut dx = Array2::<f64>::zeros((h * w, c));
                    for y in 0..h {
                        for xq in 0..w {
                            for ch in 0..c {
                                let go = g2[(y * w + xq, ch)];
                                if go == 0.0 {
                                    continue;
                                }
                                for dy in 0..3usize {
                                    for dxq in 0..3usize {
                                        let sy = y as isize + dy as isize - 1;
                                        let sx = xq as isize + dxq as isize - 1;
                                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                            dx[((sy as usize) * w + sx as usize, ch)] +=
                                                go * k3[(ch, dy, dxq)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    outv.push((ix, dx.into_dyn()));
                }
                outv
            })),
        )
    }

    /// Dense 2-D convolution with zero padding chosen so that
    /// `out = ceil(in / stride)` per axis ("same" for stride 1). Kernel
    /// `(kh, kw, c_in, c_out)`, bias `(c_out)`, input `(h*w, c_in)`.
    pub fn conv2d(
        self,
        kernel: Tensor<'t>,
        bias: Tensor<'t>,
        h: usize,
        w: usize,
        stride: usize,
    ) -> Tensor<'t> {
        let (x, kv, bv) = (self.value(), kernel.value(), bias.value());
        let x2 = as2(&x);
        let ks = kv.shape().to_vec();
        assert_eq!(ks.len(), 4, "conv2d: kernel must be 4-D");
        let (kh, kw, cin, cout) = (ks[0], ks[1], ks[2], ks[3]);
        assert_eq!(x2.nrows(), h * w, "conv2d: spatial size mismatch");
        assert_eq!(x2.ncols(), cin, "conv2d: channel mismatch");
        assert_eq!(bv.len(), cout, "conv2d: bias shape");
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        // "Same"-style padding: total pad = (out-1)*stride + k - in, split
        // with the smaller half leading.
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
        let (ph0, pw0) = (pad_h / 2, pad_w / 2);
        let kvc = kv.as_slice().unwrap().to_vec();
        let bvc = bv.as_slice().unwrap().to_vec();
        let xf = x2.as_slice().unwrap();
        let mut out = vec![0.0; oh * ow * cout];
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..cout {
                    let mut acc = bvc[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let sy = (oy * stride + ky) as isize - ph0 as isize;
                            let sx = (ox * stride + kx) as isize - pw0 as isize;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                let xbase = ((sy as usize) * w + sx as usize) * cin;
                                let kbase = ((ky * kw + kx) * cin) * cout + co;
                                for ci in 0..cin {
                                    acc += kvc[kbase + ci * cout] * xf[xbase + ci];
                                }
                            }
                        }
                    }
                    out[(oy * ow + ox) * cout + co] = acc;
                }
            }
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[oh * ow, cout]), out).unwrap();
        let (ix, ik, ib) = (self.id, kernel.id, bias.id);
        let (nx, nk, nb) = (self.needs_grad(), kernel.needs_grad(), bias.needs_grad());
        self.tape.push(
            out,
            nx || nk || nb,
            Some(Box::new(move |g| {
                let g2 = as2(g);
                let gf = g2.as_slice().unwrap();
                let x2 = as2(&x);
                let xf = x2.as_slice().unwrap();
                let kf = kv.as_slice().unwrap();
                let mut outv = Vec::new();
                if nb {
                    outv.push((
                        ib,
                        g2.sum_axis(Axis(0)).into_dyn(),
                    ));
                }
                if nk {
                    let mut dk = vec![0.0; kh * kw * cin * cout];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let sy = (oy * stride + ky) as isize - ph0 as isize;
                                    let sx = (ox * stride + kx) as isize - pw0 as isize;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        let xbase = ((sy as usize) * w + sx as usize) * cin;
                                        let gbase = (oy * ow + ox) * cout;
                                        let kbase = (ky * kw + kx) * cin * cout;
                                        for ci in 0..cin {
                                            let xv = xf[xbase + ci];
                                            for co in 0..cout {
                                                dk[kbase + ci * cout + co] += xv * gf[gbase + co];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    outv.push((
                        ik,
                        ArrayD::from_shape_vec(IxDyn(&[kh, kw, cin, cout]), dk).unwrap(),
                    ));
                }
                if nx {
                    let mut dx = vec![0.0; h * w * cin];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let sy = (oy * stride + ky) as isize - ph0 as isize;
                                    let sx = (ox * stride + kx) as isize - pw0 as isize;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        let xbase = ((sy as usize) * w + sx as usize) * cin;
                                        let gbase = (oy * ow + ox) * cout;
                                        let kbase = (ky * kw + kx) * cin * cout;
                                        for ci in 0..cin {
                                            let mut acc = 0.0;
                                            for co in 0..cout {
                                                acc += kf[kbase + ci * cout + co] * gf[gbase + co];
                                            }
                                            dx[xbase + ci] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    outv.push((
                        ix,
                        ArrayD::from_shape_vec(IxDyn(&[h * w, cin]), dx).unwrap(),
                    ));
                }
                outv
            })),
        )
    }

    // ---- channel-specific fused ops ---------------------------------------

    /// Rescale so the squared L2 norm of the output equals `target_sq`.
    /// A zero input is passed through unchanged.
    pub fn power_normalize(self, target_sq: f64) -> Tensor<'t> {
        let a = self.value();
        let ssq: f64 = a.iter().map(|v| v * v).sum();
        let ia = self.id;
        if ssq == 0.0 {
            let out = a.as_ref().clone();
            return self.tape.push(
                out,
                self.needs_grad(),
                Some(Box::new(move |g| vec![(ia, g.clone())])),
            );
        }
        let s = (target_sq / ssq).sqrt();
        let out = &*a * s;
        self.tape.push(
            out,
            self.needs_grad(),
            Some(Box::new(move |g| {
                // y = s(x)·x with s = sqrt(T/Σx²):
                // dL/dx = s·(g − x·⟨g,x⟩/Σx²).
                let dot: f64 = g.iter().zip(a.iter()).map(|(gi, xi)| gi * xi).sum();
                let dx = g - &(&*a * (dot / ssq));
                vec![(ia, dx * s)]
            })),
        )
    }
}

/// Concatenate flat along a new leading axis is not needed; row-stacking of
/// 2-D tensors is.
pub fn concat_rows<'t>(parts: &[Tensor<'t>]) -> Tensor<'t> {
    assert!(!parts.is_empty(), "concat_rows: empty input");
    let tape = parts[0].tape;
    let vals: Vec<Value> = parts.iter().map(|p| p.value()).collect();
    let c = as2(&vals[0]).ncols();
    let mut rows = 0usize;
    for v in &vals {
        assert_eq!(as2(v).ncols(), c, "concat_rows: width mismatch");
        rows += as2(v).nrows();
    }
    let mut data = Vec::with_capacity(rows * c);
    for v in &vals {
        data.extend_from_slice(v.as_slice().unwrap());
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[rows, c]), data).unwrap();
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let needs: Vec<bool> = parts.iter().map(|p| p.needs_grad()).collect();
    let shapes: Vec<Vec<usize>> = vals.iter().map(|v| v.shape().to_vec()).collect();
    let any = needs.iter().any(|&b| b);
    tape.push(
        out,
        any,
        Some(Box::new(move |g| {
            let gflat = g.as_slice().unwrap();
            let mut outv = Vec::new();
            let mut off = 0usize;
            for (i, shp) in shapes.iter().enumerate() {
                let len: usize = shp.iter().product();
                if needs[i] {
                    outv.push((
                        ids[i],
                        ArrayD::from_shape_vec(IxDyn(shp), gflat[off..off + len].to_vec()).unwrap(),
                    ));
                }
                off += len;
            }
            outv
        })),
    )
}
