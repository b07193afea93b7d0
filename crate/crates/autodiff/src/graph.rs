//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is a tape of nodes. Each node owns its forward value (an
//! `ArrayD<f64>` behind an `Rc`) plus an optional backward closure that maps
//! the gradient at the node to gradient contributions for its parents.
//! Graphs are built per forward pass and dropped afterwards; parameters live
//! outside the graph and are attached as leaf inputs each pass.
//!
//! All arithmetic is f64. Shapes are checked eagerly so mistakes surface at
//! the op that introduced them, not three layers downstream.

use ndarray::{concatenate, ArrayD, Axis, Ix1, Ix2, IxDyn, Slice, Zip};
use std::cell::RefCell;
use std::rc::Rc;

/// Shared immutable tensor value.
pub type Value = Rc<ArrayD<f64>>;

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VarId(pub(crate) usize);

/// Backward closure: receives the gradient w.r.t. the node's output and a
/// sink; calls `sink(parent_slot, contribution)` for each differentiable
/// parent. Contributions must match the parent's value shape.
pub type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &mut dyn FnMut(usize, ArrayD<f64>))>;

struct Node {
    value: Value,
    parents: Vec<VarId>,
    backward: Option<BackwardFn>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`VarId`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient for `id`, if any path from the root reached it.
    pub fn get(&self, id: VarId) -> Option<&ArrayD<f64>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `id`.
    pub fn take(&mut self, id: VarId) -> Option<ArrayD<f64>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Value, parents: Vec<VarId>, backward: Option<BackwardFn>) -> VarId {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        VarId(nodes.len() - 1)
    }

    /// Leaf node from an owned array. Gradients can flow to it.
    pub fn input(&self, value: ArrayD<f64>) -> VarId {
        self.push(Rc::new(value), vec![], None)
    }

    /// Leaf node sharing an existing array without copying.
    pub fn input_shared(&self, value: Value) -> VarId {
        self.push(value, vec![], None)
    }

    /// Forward value of a node (cheap Rc clone).
    pub fn value(&self, id: VarId) -> Value {
        Rc::clone(&self.nodes.borrow()[id.0].value)
    }

    pub fn shape(&self, id: VarId) -> Vec<usize> {
        self.nodes.borrow()[id.0].value.shape().to_vec()
    }

    /// Extract the value of a single-element node.
    pub fn scalar(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on node with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    /// Register a custom op. `backward` receives the output gradient and a
    /// sink keyed by position in `parents`. Pass `None` to mark the op as
    /// non-differentiable (gradient flow stops there).
    pub fn custom(
        &self,
        parents: &[VarId],
        value: ArrayD<f64>,
        backward: Option<BackwardFn>,
    ) -> VarId {
        self.push(Rc::new(value), parents.to_vec(), backward)
    }

    /// Reverse pass from a scalar root. Returns gradients for every node the
    /// root depends on; nodes created after the root are ignored.
    pub fn backward(&self, root: VarId) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[root.0].value.len(),
            1,
            "backward root must be a scalar node"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[root.0] = Some(ArrayD::ones(nodes[root.0].value.raw_dim()));

        for id in (0..=root.0).rev() {
            if grads[id].is_none() {
                continue;
            }
            let node = &nodes[id];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            // Take the gradient: reverse order guarantees nothing later will
            // add to it, and dropping it early bounds peak memory.
            let g = grads[id].take().unwrap();
            let parents = &node.parents;
            back(&g, &mut |slot, contrib| {
                let pid = parents[slot].0;
                debug_assert_eq!(
                    contrib.shape(),
                    nodes[pid].value.shape(),
                    "gradient shape mismatch flowing into node {pid}"
                );
                match &mut grads[pid] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            });
        }
        Gradients { grads }
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

fn assert_same_shape(op: &str, a: &ArrayD<f64>, b: &ArrayD<f64>) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl Graph {
    pub fn add(&self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_same_shape("add", &av, &bv);
        let out = &*av + &*bv;
        self.push(
            Rc::new(out),
            vec![a, b],
            Some(Box::new(move |g, sink| {
                sink(0, g.clone());
                sink(1, g.clone());
            })),
        )
    }

    pub fn sub(&self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_same_shape("sub", &av, &bv);
        let out = &*av - &*bv;
        self.push(
            Rc::new(out),
            vec![a, b],
            Some(Box::new(move |g, sink| {
                sink(0, g.clone());
                sink(1, -g);
            })),
        )
    }

    pub fn mul(&self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_same_shape("mul", &av, &bv);
        let out = &*av * &*bv;
        self.push(
            Rc::new(out),
            vec![a, b],
            Some(Box::new(move |g, sink| {
                sink(0, g * &*bv);
                sink(1, g * &*av);
            })),
        )
    }

    pub fn div(&self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_same_shape("div", &av, &bv);
        let out = &*av / &*bv;
        self.push(
            Rc::new(out),
            vec![a, b],
            Some(Box::new(move |g, sink| {
                sink(0, g / &*bv);
                let mut gb = g * &*av;
                Zip::from(&mut gb).and(&*bv).for_each(|gb, &b| {
                    *gb = -*gb / (b * b);
                });
                sink(1, gb);
            })),
        )
    }
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

impl Graph {
    /// Generic unary op: `fwd` maps the input value, `dfdx` maps (x, y) to
    /// the local derivative dy/dx.
    fn unary(
        &self,
        x: VarId,
        fwd: impl Fn(f64) -> f64,
        dfdx: impl Fn(f64, f64) -> f64 + 'static,
    ) -> VarId {
        let xv = self.value(x);
        let out = Rc::new(xv.mapv(&fwd));
        let yv = Rc::clone(&out);
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g, sink| {
                let mut gx = g.clone();
                Zip::from(&mut gx).and(&*xv).and(&*yv).for_each(|gx, &x, &y| {
                    *gx *= dfdx(x, y);
                });
                sink(0, gx);
            })),
        )
    }

    pub fn neg(&self, x: VarId) -> VarId {
        self.scale(x, -1.0)
    }

    pub fn scale(&self, x: VarId, c: f64) -> VarId {
        self.unary(x, move |v| v * c, move |_, _| c)
    }

    pub fn add_scalar(&self, x: VarId, c: f64) -> VarId {
        self.unary(x, move |v| v + c, |_, _| 1.0)
    }

    pub fn exp(&self, x: VarId) -> VarId {
        self.unary(x, f64::exp, |_, y| y)
    }

    pub fn ln(&self, x: VarId) -> VarId {
        self.unary(x, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self, x: VarId) -> VarId {
        self.unary(x, f64::sqrt, |_, y| if y > 0.0 { 0.5 / y } else { 0.0 })
    }

    pub fn square(&self, x: VarId) -> VarId {
        self.unary(x, |v| v * v, |x, _| 2.0 * x)
    }

    pub fn abs(&self, x: VarId) -> VarId {
        self.unary(x, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn relu(&self, x: VarId) -> VarId {
        self.unary(
            x,
            |v| v.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn leaky_relu(&self, x: VarId, slope: f64) -> VarId {
        self.unary(
            x,
            move |v| if v >= 0.0 { v } else { slope * v },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&self, x: VarId) -> VarId {
        self.unary(
            x,
            |v| if v >= 0.0 { v } else { v.exp_m1() },
            |x, y| if x >= 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(&self, x: VarId) -> VarId {
        self.unary(
            x,
            |v| 1.0 / (1.0 + (-v).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn tanh(&self, x: VarId) -> VarId {
        self.unary(x, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn cos(&self, x: VarId) -> VarId {
        self.unary(x, f64::cos, |x, _| -x.sin())
    }

    pub fn sin(&self, x: VarId) -> VarId {
        self.unary(x, f64::sin, |x, _| x.cos())
    }

    /// Hinge `max(0, 1 - x)` applied elementwise.
    pub fn hinge_one_minus(&self, x: VarId) -> VarId {
        self.unary(
            x,
            |v| (1.0 - v).max(0.0),
            |x, _| if 1.0 - x > 0.0 { -1.0 } else { 0.0 },
        )
    }

    /// Four-quadrant arctangent, elementwise: `atan2(y, x)`.
    pub fn atan2(&self, y: VarId, x: VarId) -> VarId {
        let (yv, xv) = (self.value(y), self.value(x));
        assert_same_shape("atan2", &yv, &xv);
        let mut out = ArrayD::zeros(yv.raw_dim());
        Zip::from(&mut out).and(&*yv).and(&*xv).for_each(|o, &y, &x| {
            *o = y.atan2(x);
        });
        self.push(
            Rc::new(out),
            vec![y, x],
            Some(Box::new(move |g, sink| {
                let mut gy = g.clone();
                let mut gx = g.clone();
                Zip::from(&mut gy)
                    .and(&mut gx)
                    .and(&*yv)
                    .and(&*xv)
                    .for_each(|gy, gx, &y, &x| {
                        let r2 = x * x + y * y;
                        if r2 > 0.0 {
                            let s = *gy;
                            *gy = s * x / r2;
                            *gx = -s * y / r2;
                        } else {
                            *gy = 0.0;
                            *gx = 0.0;
                        }
                    });
                sink(0, gy);
                sink(1, gx);
            })),
        )
    }
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

impl Graph {
    pub fn sum_all(&self, x: VarId) -> VarId {
        let xv = self.value(x);
        let out = ArrayD::from_elem(IxDyn(&[]), xv.sum());
        let dim = xv.raw_dim();
        self.push(
            Rc::new(out),
            vec![x],
            Some(Box::new(move |g, sink| {
                let gs = g[[]];
                sink(0, ArrayD::from_elem(dim.clone(), gs));
            })),
        )
    }

    pub fn mean_all(&self, x: VarId) -> VarId {
        let n = self.value(x).len();
        assert!(n > 0, "mean_all on empty tensor");
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row sums of a 2-D tensor: `(m, n) -> (m,)`.
    pub fn row_sums(&self, x: VarId) -> VarId {
        let xv = self.value(x);
        let x2 = xv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("row_sums expects a 2-D tensor");
        let (m, n) = x2.dim();
        let out = x2.sum_axis(Axis(1)).into_dyn();
        self.push(
            Rc::new(out),
            vec![x],
            Some(Box::new(move |g, sink| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let mut gx = ArrayD::zeros(IxDyn(&[m, n]));
                {
                    let mut gx2 = gx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for (mut row, &gv) in gx2.rows_mut().into_iter().zip(g1.iter()) {
                        row.fill(gv);
                    }
                }
                sink(0, gx);
            })),
        )
    }

    /// Row means of a 2-D tensor: `(m, n) -> (m,)`.
    pub fn row_means(&self, x: VarId) -> VarId {
        let shape = self.shape(x);
        assert_eq!(shape.len(), 2, "row_means expects a 2-D tensor");
        let s = self.row_sums(x);
        self.scale(s, 1.0 / shape[1] as f64)
    }
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

impl Graph {
    /// Reshape to `shape` (same element count, C order).
    pub fn reshape(&self, x: VarId, shape: &[usize]) -> VarId {
        let xv = self.value(x);
        let old_dim = xv.raw_dim();
        assert_eq!(
            xv.len(),
            shape.iter().product::<usize>(),
            "reshape: element count mismatch {:?} -> {:?}",
            xv.shape(),
            shape
        );
        let out = xv
            .to_shape(IxDyn(shape))
            .expect("reshape: non-contiguous input")
            .to_owned();
        self.push(
            Rc::new(out),
            vec![x],
            Some(Box::new(move |g, sink| {
                let gx = g
                    .to_shape(old_dim.clone())
                    .expect("reshape backward: non-contiguous gradient")
                    .to_owned();
                sink(0, gx);
            })),
        )
    }

    /// Transpose a 2-D tensor (materialized copy).
    pub fn transpose2d(&self, x: VarId) -> VarId {
        let xv = self.value(x);
        let x2 = xv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("transpose2d expects a 2-D tensor");
        let out = x2.t().to_owned().into_dyn();
        self.push(
            Rc::new(out),
            vec![x],
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                sink(0, g2.t().to_owned().into_dyn());
            })),
        )
    }

    /// Concatenate along `axis`. All inputs must agree on the other axes.
    pub fn concat(&self, axis: usize, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let values: Vec<Value> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push(
            Rc::new(out),
            parts.to_vec(),
            Some(Box::new(move |g, sink| {
                let mut start = 0isize;
                for (slot, &len) in sizes.iter().enumerate() {
                    let piece = g
                        .slice_axis(Axis(axis), Slice::from(start..start + len as isize))
                        .to_owned();
                    sink(slot, piece);
                    start += len as isize;
                }
            })),
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn slice_axis(&self, x: VarId, axis: usize, start: usize, len: usize) -> VarId {
        let xv = self.value(x);
        assert!(
            start + len <= xv.shape()[axis],
            "slice_axis: {}..{} out of bounds for axis {} of size {}",
            start,
            start + len,
            axis,
            xv.shape()[axis]
        );
        let out = xv
            .slice_axis(
                Axis(axis),
                Slice::from(start as isize..(start + len) as isize),
            )
            .to_owned();
        let full_dim = xv.raw_dim();
        self.push(
            Rc::new(out),
            vec![x],
            Some(Box::new(move |g, sink| {
                let mut gx = ArrayD::zeros(full_dim.clone());
                gx.slice_axis_mut(
                    Axis(axis),
                    Slice::from(start as isize..(start + len) as isize),
                )
                .assign(g);
                sink(0, gx);
            })),
        )
    }
}

// ---------------------------------------------------------------------------
// Linear algebra and broadcasting helpers
// ---------------------------------------------------------------------------

impl Graph {
    /// Matrix product of 2-D tensors: `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&self, a: VarId, b: VarId) -> VarId {
        let (av, bv) = (self.value(a), self.value(b));
        let a2 = av
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul lhs must be 2-D");
        let b2 = bv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("matmul rhs must be 2-D");
        assert_eq!(
            a2.ncols(),
            b2.nrows(),
            "matmul: inner dims {} vs {}",
            a2.ncols(),
            b2.nrows()
        );
        let out = a2.dot(&b2).into_dyn();
        self.push(
            Rc::new(out),
            vec![a, b],
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a2 = av.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = bv.view().into_dimensionality::<Ix2>().unwrap();
                sink(0, g2.dot(&b2.t()).into_dyn());
                sink(1, a2.t().dot(&g2).into_dyn());
            })),
        )
    }

    /// Add a per-channel bias over axis 0: `(c, ...) + (c,)`.
    pub fn add_bias_axis0(&self, x: VarId, b: VarId) -> VarId {
        let (xv, bv) = (self.value(x), self.value(b));
        let c = xv.shape()[0];
        assert_eq!(bv.shape(), [c], "add_bias_axis0: bias must be ({c},)");
        let mut out = (*xv).clone();
        for (mut lane, &bc) in out.axis_iter_mut(Axis(0)).zip(bv.iter()) {
            lane += bc;
        }
        self.push(
            Rc::new(out),
            vec![x, b],
            Some(Box::new(move |g, sink| {
                sink(0, g.clone());
                let mut gb = ArrayD::zeros(IxDyn(&[c]));
                for (gc, lane) in gb.iter_mut().zip(g.axis_iter(Axis(0))) {
                    *gc = lane.sum();
                }
                sink(1, gb);
            })),
        )
    }

    /// Add a bias over the last axis: `(..., d) + (d,)`.
    pub fn add_bias_last(&self, x: VarId, b: VarId) -> VarId {
        let (xv, bv) = (self.value(x), self.value(b));
        let d = *xv.shape().last().expect("add_bias_last on 0-D tensor");
        assert_eq!(bv.shape(), [d], "add_bias_last: bias must be ({d},)");
        let last = xv.ndim() - 1;
        let mut out = (*xv).clone();
        for (mut lane, &bc) in out.axis_iter_mut(Axis(last)).zip(bv.iter()) {
            lane += bc;
        }
        self.push(
            Rc::new(out),
            vec![x, b],
            Some(Box::new(move |g, sink| {
                sink(0, g.clone());
                let mut gb = ArrayD::zeros(IxDyn(&[d]));
                for (gc, lane) in gb.iter_mut().zip(g.axis_iter(Axis(last))) {
                    *gc = lane.sum();
                }
                sink(1, gb);
            })),
        )
    }

    /// Scale each row of a 2-D tensor by a per-row factor: `(m, n) * (m,)`.
    pub fn mul_rows(&self, x: VarId, s: VarId) -> VarId {
        let (xv, sv) = (self.value(x), self.value(s));
        let x2 = xv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("mul_rows expects a 2-D tensor");
        let (m, _n) = x2.dim();
        assert_eq!(sv.shape(), [m], "mul_rows: scale must be ({m},)");
        let mut out = x2.to_owned();
        for (mut row, &sc) in out.rows_mut().into_iter().zip(sv.iter()) {
            row *= sc;
        }
        self.push(
            Rc::new(out.into_dyn()),
            vec![x, s],
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let x2 = xv.view().into_dimensionality::<Ix2>().unwrap();
                let mut gx = g2.to_owned();
                for (mut row, &sc) in gx.rows_mut().into_iter().zip(sv.iter()) {
                    row *= sc;
                }
                let mut gs = ArrayD::zeros(IxDyn(&[m]));
                for ((gsc, grow), xrow) in
                    gs.iter_mut().zip(g2.rows()).zip(x2.rows())
                {
                    *gsc = grow.dot(&xrow);
                }
                sink(0, gx.into_dyn());
                sink(1, gs);
            })),
        )
    }

    /// Row-wise softmax of a 2-D tensor with an optional additive mask.
    /// The mask is a constant (it does not participate in differentiation);
    /// entries around `-1e9` zero out the corresponding attention weights.
    pub fn softmax_rows(&self, x: VarId, mask: Option<Rc<ArrayD<f64>>>) -> VarId {
        let xv = self.value(x);
        let x2 = xv
            .view()
            .into_dimensionality::<Ix2>()
            .expect("softmax_rows expects a 2-D tensor");
        if let Some(m) = &mask {
            assert_eq!(m.shape(), xv.shape(), "softmax_rows: mask shape mismatch");
        }
        let (rows, cols) = x2.dim();
        let mut out = x2.to_owned();
        if let Some(m) = &mask {
            let m2 = m.view().into_dimensionality::<Ix2>().unwrap();
            out += &m2;
        }
        for mut row in out.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row /= sum;
        }
        let out = Rc::new(out.into_dyn());
        let yv = Rc::clone(&out);
        self.push(
            out,
            vec![x],
            Some(Box::new(move |g, sink| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let y2 = yv.view().into_dimensionality::<Ix2>().unwrap();
                let mut gx = ArrayD::zeros(IxDyn(&[rows, cols]));
                {
                    let mut gx2 = gx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for ((mut gxr, gr), yr) in
                        gx2.rows_mut().into_iter().zip(g2.rows()).zip(y2.rows())
                    {
                        let dot = gr.dot(&yr);
                        for ((gx, &g), &y) in gxr.iter_mut().zip(gr).zip(yr) {
                            *gx = y * (g - dot);
                        }
                    }
                }
                sink(0, gx);
            })),
        )
    }
}
