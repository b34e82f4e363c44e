//! Reverse-mode differentiation tape.
//!
//! A [`Graph`] records every forward operation as a node holding its value
//! and a backward closure that maps the upstream gradient to contributions
//! for the node's parents. [`Graph::backward`] walks the tape in reverse
//! creation order, which is always a valid reverse-topological order.
//!
//! One graph per forward pass; graphs are cheap and single-threaded by
//! design (no shared mutable state between passes).

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<(usize, Tensor<T>)>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    op: &'static str,
    label: Option<String>,
    back: Option<BackFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    zero_norm_clamps: Cell<u64>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    by_id: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_id.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            zero_norm_clamps: Cell::new(0),
        }
    }

    /// Number of norm clamps applied by [`Graph::cosine`] so far.
    pub fn zero_norm_clamps(&self) -> u64 {
        self.zero_norm_clamps.get()
    }

    fn push(&self, value: Tensor<T>, op: &'static str, back: Option<BackFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            label: None,
            back,
        });
        Var(nodes.len() - 1)
    }

    fn rc_value(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        (*self.nodes.borrow()[v.0].value).clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes.borrow()[v.0].value.dims2()
    }

    /// Extract a 1x1 node's value.
    pub fn scalar(&self, v: Var) -> Result<T> {
        let t = self.rc_value(v);
        if t.len() != 1 {
            return Err(Error::Dimension(format!(
                "expected scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    pub fn input(&self, t: Tensor<T>) -> Var {
        self.push(t, "input", None)
    }

    pub fn input_labeled(&self, t: Tensor<T>, label: impl Into<String>) -> Var {
        let v = self.push(t, "input", None);
        self.nodes.borrow_mut()[v.0].label = Some(label.into());
        v
    }

    pub fn set_label(&self, v: Var, label: impl Into<String>) {
        self.nodes.borrow_mut()[v.0].label = Some(label.into());
    }

    /// First node (in creation order) holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let nodes = self.nodes.borrow();
        for (id, n) in nodes.iter().enumerate() {
            if !n.value.is_finite_all() {
                let label = n
                    .label
                    .as_deref()
                    .map(|l| format!(" '{l}'"))
                    .unwrap_or_default();
                return Some(format!("node #{id} ({}{label})", n.op));
            }
        }
        None
    }

    // ---- elementwise ----

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let vb = self.rc_value(b);
        let out = va.add(&vb)?;
        let back: BackFn<T> = Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.clone())]);
        Ok(self.push(out, "add", Some(back)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let vb = self.rc_value(b);
        let out = va.sub(&vb)?;
        let back: BackFn<T> =
            Box::new(move |g| vec![(a.0, g.clone()), (b.0, g.scale(-T::one()))]);
        Ok(self.push(out, "sub", Some(back)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let vb = self.rc_value(b);
        let out = va.mul(&vb)?;
        let back: BackFn<T> = Box::new(move |g| {
            vec![
                (a.0, g.mul(&vb).expect("shape fixed at forward")),
                (b.0, g.mul(&va).expect("shape fixed at forward")),
            ]
        });
        Ok(self.push(out, "mul", Some(back)))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let vb = self.rc_value(b);
        let out = va.zip_map(&vb, |x, y| x / y)?;
        let back: BackFn<T> = Box::new(move |g| {
            let da = g.zip_map(&vb, |gi, y| gi / y).expect("shape fixed");
            let db = g
                .zip_map(&va, |gi, x| gi * x)
                .and_then(|t| t.zip_map(&vb, |n, y| -n / (y * y)))
                .expect("shape fixed");
            vec![(a.0, da), (b.0, db)]
        });
        Ok(self.push(out, "div", Some(back)))
    }

    pub fn scale(&self, a: Var, k: T) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.scale(k);
        let back: BackFn<T> = Box::new(move |g| vec![(a.0, g.scale(k))]);
        Ok(self.push(out, "scale", Some(back)))
    }

    /// n x d plus a 1 x d bias row broadcast over rows.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let vx = self.rc_value(x);
        let vb = self.rc_value(bias);
        let (n, d) = vx.dims2()?;
        let (bn, bd) = vb.dims2()?;
        if bn != 1 || bd != d {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not broadcast over {n}x{d}",
                vb.shape()
            )));
        }
        let mut out = (*vx).clone();
        for i in 0..n {
            for j in 0..d {
                let v = out.at(i, j) + vb.at(0, j);
                out.set(i, j, v);
            }
        }
        let back: BackFn<T> = Box::new(move |g| {
            let (gn, gd) = g.dims2().expect("rank fixed");
            let mut db = Tensor::zeros(&[1, gd]);
            for i in 0..gn {
                for j in 0..gd {
                    let v = db.at(0, j) + g.at(i, j);
                    db.set(0, j, v);
                }
            }
            vec![(x.0, g.clone()), (bias.0, db)]
        });
        Ok(self.push(out, "add_bias", Some(back)))
    }

    // ---- unary nonlinearities ----

    pub fn relu(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.map(|x| if x > T::zero() { x } else { T::zero() });
        let back: BackFn<T> = Box::new(move |g| {
            let da = g
                .zip_map(&va, |gi, x| if x > T::zero() { gi } else { T::zero() })
                .expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "relu", Some(back)))
    }

    pub fn gelu(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let c = T::cast((2.0 / std::f64::consts::PI).sqrt());
        let k = T::cast(0.044715);
        let half = T::cast(0.5);
        let out = va.map(|x| {
            let u = c * (x + k * x * x * x);
            half * x * (T::one() + u.tanh())
        });
        let back: BackFn<T> = Box::new(move |g| {
            let da = g
                .zip_map(&va, |gi, x| {
                    let u = c * (x + k * x * x * x);
                    let t = u.tanh();
                    let du = c * (T::one() + T::cast(3.0) * k * x * x);
                    gi * (half * (T::one() + t) + half * x * (T::one() - t * t) * du)
                })
                .expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "gelu", Some(back)))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.map(|x| x.exp());
        let out_saved = out.clone();
        let back: BackFn<T> = Box::new(move |g| {
            let da = g.mul(&out_saved).expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "exp", Some(back)))
    }

    pub fn ln(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.map(|x| x.ln());
        let back: BackFn<T> = Box::new(move |g| {
            let da = g.zip_map(&va, |gi, x| gi / x).expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "ln", Some(back)))
    }

    pub fn sqrt(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.map(|x| x.sqrt());
        let out_saved = out.clone();
        let half = T::cast(0.5);
        let back: BackFn<T> = Box::new(move |g| {
            let da = g
                .zip_map(&out_saved, |gi, y| gi * half / y)
                .expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "sqrt", Some(back)))
    }

    /// Elementwise max(x, floor). Gradient passes through where x > floor.
    pub fn clamp_min(&self, a: Var, floor: T) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.map(|x| if x > floor { x } else { floor });
        let back: BackFn<T> = Box::new(move |g| {
            let da = g
                .zip_map(&va, |gi, x| if x > floor { gi } else { T::zero() })
                .expect("shape fixed");
            vec![(a.0, da)]
        });
        Ok(self.push(out, "clamp_min", Some(back)))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let vb = self.rc_value(b);
        let out = va.matmul(&vb)?;
        let back: BackFn<T> = Box::new(move |g| {
            let bt = vb.transpose().expect("rank fixed");
            let at = va.transpose().expect("rank fixed");
            vec![
                (a.0, g.matmul(&bt).expect("shape fixed")),
                (b.0, at.matmul(g).expect("shape fixed")),
            ]
        });
        Ok(self.push(out, "matmul", Some(back)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.transpose()?;
        let back: BackFn<T> =
            Box::new(move |g| vec![(a.0, g.transpose().expect("rank fixed"))]);
        Ok(self.push(out, "transpose", Some(back)))
    }

    // ---- row-wise ops ----

    /// Softmax along the last axis, independently per row.
    pub fn softmax_rows(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let (n, d) = va.dims2()?;
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let row = va.row_slice(i);
            let max = row
                .iter()
                .copied()
                .fold(row[0], |m, x| if x > m { x } else { m });
            let mut sum = T::zero();
            let mut exps = vec![T::zero(); d];
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                exps[j] = e;
                sum += e;
            }
            for j in 0..d {
                out.set(i, j, exps[j] / sum);
            }
        }
        let y = out.clone();
        let back: BackFn<T> = Box::new(move |g| {
            let (n, d) = y.dims2().expect("rank fixed");
            let mut da = Tensor::zeros(&[n, d]);
            for i in 0..n {
                let mut dot = T::zero();
                for j in 0..d {
                    dot += g.at(i, j) * y.at(i, j);
                }
                for j in 0..d {
                    da.set(i, j, y.at(i, j) * (g.at(i, j) - dot));
                }
            }
            vec![(a.0, da)]
        });
        Ok(self.push(out, "softmax_rows", Some(back)))
    }

    /// Row-wise layer normalization with learned gain and shift (both 1 x d).
    pub fn layer_norm_rows(&self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let eps = T::cast(1e-5);
        let vx = self.rc_value(x);
        let vg = self.rc_value(gamma);
        let vb = self.rc_value(beta);
        let (n, d) = vx.dims2()?;
        if vg.shape() != [1, d] || vb.shape() != [1, d] {
            return Err(Error::Dimension(format!(
                "layer norm params must be 1x{d}, got {:?} and {:?}",
                vg.shape(),
                vb.shape()
            )));
        }
        let inv_d = T::one() / T::from_usize(d).expect("width fits scalar");
        let mut xhat = Tensor::zeros(&[n, d]);
        let mut inv_std = vec![T::zero(); n];
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let row = vx.row_slice(i);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row
                .iter()
                .map(|&v| (v - mean) * (v - mean))
                .sum::<T>()
                * inv_d;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..d {
                let h = (row[j] - mean) * istd;
                xhat.set(i, j, h);
                out.set(i, j, h * vg.at(0, j) + vb.at(0, j));
            }
        }
        let back: BackFn<T> = Box::new(move |g| {
            let mut dx = Tensor::zeros(&[n, d]);
            let mut dgamma = Tensor::zeros(&[1, d]);
            let mut dbeta = Tensor::zeros(&[1, d]);
            for i in 0..n {
                let mut mean_a = T::zero();
                let mut mean_ah = T::zero();
                for j in 0..d {
                    let a = g.at(i, j) * vg.at(0, j);
                    mean_a += a;
                    mean_ah += a * xhat.at(i, j);
                    dgamma.set(0, j, dgamma.at(0, j) + g.at(i, j) * xhat.at(i, j));
                    dbeta.set(0, j, dbeta.at(0, j) + g.at(i, j));
                }
                mean_a *= inv_d;
                mean_ah *= inv_d;
                for j in 0..d {
                    let a = g.at(i, j) * vg.at(0, j);
                    dx.set(i, j, (a - mean_a - xhat.at(i, j) * mean_ah) * inv_std[i]);
                }
            }
            vec![(x.0, dx), (gamma.0, dgamma), (beta.0, dbeta)]
        });
        Ok(self.push(out, "layer_norm", Some(back)))
    }

    // ---- shape ops ----

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.rc_value(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_cols(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let widths: Vec<usize> = values
            .iter()
            .map(|v| v.dims2().expect("rank fixed").1)
            .collect();
        let back: BackFn<T> = Box::new(move |g| {
            let mut offset = 0;
            let mut contributions = Vec::with_capacity(ids.len());
            for (&id, &w) in ids.iter().zip(widths.iter()) {
                let part = g.slice_cols(offset, offset + w).expect("widths fixed");
                contributions.push((id, part));
                offset += w;
            }
            contributions
        });
        Ok(self.push(out, "concat_cols", Some(back)))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|&p| self.rc_value(p)).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_rows(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let heights: Vec<usize> = values
            .iter()
            .map(|v| v.dims2().expect("rank fixed").0)
            .collect();
        let back: BackFn<T> = Box::new(move |g| {
            let (_, d) = g.dims2().expect("rank fixed");
            let mut offset = 0;
            let mut contributions = Vec::with_capacity(ids.len());
            for (&id, &h) in ids.iter().zip(heights.iter()) {
                let mut part = Tensor::zeros(&[h, d]);
                for i in 0..h {
                    for j in 0..d {
                        part.set(i, j, g.at(offset + i, j));
                    }
                }
                contributions.push((id, part));
                offset += h;
            }
            contributions
        });
        Ok(self.push(out, "concat_rows", Some(back)))
    }

    pub fn slice_cols(&self, a: Var, lo: usize, hi: usize) -> Result<Var> {
        let va = self.rc_value(a);
        let out = va.slice_cols(lo, hi)?;
        let (n, d) = va.dims2()?;
        let back: BackFn<T> = Box::new(move |g| {
            let mut da = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for (jj, j) in (lo..hi).enumerate() {
                    da.set(i, j, g.at(i, jj));
                }
            }
            vec![(a.0, da)]
        });
        Ok(self.push(out, "slice_cols", Some(back)))
    }

    /// Replicate a 1 x d row n times.
    pub fn broadcast_row(&self, a: Var, n: usize) -> Result<Var> {
        let va = self.rc_value(a);
        let (rows, d) = va.dims2()?;
        if rows != 1 {
            return Err(Error::Dimension(format!(
                "broadcast_row expects a 1xd row, got {:?}",
                va.shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, d]);
        for i in 0..n {
            for j in 0..d {
                out.set(i, j, va.at(0, j));
            }
        }
        let back: BackFn<T> = Box::new(move |g| {
            let mut da = Tensor::zeros(&[1, d]);
            for i in 0..n {
                for j in 0..d {
                    da.set(0, j, da.at(0, j) + g.at(i, j));
                }
            }
            vec![(a.0, da)]
        });
        Ok(self.push(out, "broadcast_row", Some(back)))
    }

    /// Column-wise mean collapsing rows: n x d -> 1 x d.
    pub fn mean_rows(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let (n, d) = va.dims2()?;
        let out = va.mean_rows()?;
        let inv_n = T::one() / T::from_usize(n).expect("row count fits scalar");
        let back: BackFn<T> = Box::new(move |g| {
            let mut da = Tensor::zeros(&[n, d]);
            for i in 0..n {
                for j in 0..d {
                    da.set(i, j, g.at(0, j) * inv_n);
                }
            }
            vec![(a.0, da)]
        });
        Ok(self.push(out, "mean_rows", Some(back)))
    }

    /// Sum of all entries as a 1 x 1 node.
    pub fn sum_all(&self, a: Var) -> Result<Var> {
        let va = self.rc_value(a);
        let out = Tensor::scalar(va.sum());
        let shape = va.shape().to_vec();
        let back: BackFn<T> = Box::new(move |g| {
            let gv = g.data()[0];
            vec![(a.0, Tensor::filled(&shape, gv))]
        });
        Ok(self.push(out, "sum_all", Some(back)))
    }

    /// Mean binary cross-entropy with logits against constant soft targets.
    ///
    /// Stable form per entry: max(x, 0) - x*t + ln(1 + exp(-|x|)).
    pub fn bce_with_logits_mean(&self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        let vx = self.rc_value(logits);
        if vx.shape() != targets.shape() {
            return Err(Error::Dimension(format!(
                "logits shape {:?} vs targets {:?}",
                vx.shape(),
                targets.shape()
            )));
        }
        let count = T::from_usize(vx.len()).expect("count fits scalar");
        let mut total = T::zero();
        for (&x, &t) in vx.data().iter().zip(targets.data().iter()) {
            let pos = if x > T::zero() { x } else { T::zero() };
            total += pos - x * t + (T::one() + (-x.abs()).exp()).ln();
        }
        let out = Tensor::scalar(total / count);
        let t_saved = targets.clone();
        let back: BackFn<T> = Box::new(move |g| {
            let gv = g.data()[0] / count;
            let da = vx
                .zip_map(&t_saved, |x, t| {
                    let sigma = T::one() / (T::one() + (-x).exp());
                    gv * (sigma - t)
                })
                .expect("shape fixed");
            vec![(logits.0, da)]
        });
        Ok(self.push(out, "bce_with_logits", Some(back)))
    }

    /// Cosine similarity of two 1 x d rows as a 1 x 1 node.
    ///
    /// Norms are clamped at 1e-12 (squared norms at 1e-24, before the square
    /// root, so gradients stay finite); each clamp bumps the graph's
    /// diagnostic counter instead of producing NaN.
    pub fn cosine(&self, a: Var, b: Var) -> Result<Var> {
        let floor = T::cast(1e-24);
        let dot = self.sum_all(self.mul(a, b)?)?;
        let qa = self.sum_all(self.mul(a, a)?)?;
        let qb = self.sum_all(self.mul(b, b)?)?;
        if self.scalar(qa)? < floor {
            self.zero_norm_clamps.set(self.zero_norm_clamps.get() + 1);
        }
        if self.scalar(qb)? < floor {
            self.zero_norm_clamps.set(self.zero_norm_clamps.get() + 1);
        }
        let na = self.sqrt(self.clamp_min(qa, floor)?)?;
        let nb = self.sqrt(self.clamp_min(qb, floor)?)?;
        self.div(dot, self.mul(na, nb)?)
    }

    // ---- backward ----

    /// Reverse-accumulate gradients of a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(Tensor::filled(nodes[loss.0].value.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            if let Some(back) = &nodes[id].back {
                for (pid, contribution) in back(&g) {
                    match &mut grads[pid] {
                        Some(acc) => {
                            *acc = acc.add(&contribution)?;
                        }
                        slot @ None => *slot = Some(contribution),
                    }
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { by_id: grads })
    }
}
