//! Parameter storage and neural-network layers.
//!
//! Parameters live in a [`ParamStore`] that outlives any single graph. Each
//! forward pass creates a [`Binding`] that lazily attaches parameters to the
//! graph as shared leaves and remembers the mapping so gradients can be read
//! back per parameter after `backward`.

use crate::conv::{Conv2dGeom, ConvT2dGeom};
use crate::graph::{Gradients, Graph, VarId};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Handle to a parameter in a [`ParamStore`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

pub struct Param {
    name: String,
    value: Rc<ArrayD<f64>>,
    /// Adam first/second-moment state, allocated on first optimizer step.
    pub(crate) moments: Option<(ArrayD<f64>, ArrayD<f64>)>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name:?}"
        );
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            value: Rc::new(value),
            moments: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elems(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> Rc<ArrayD<f64>> {
        Rc::clone(&self.params[id.0].value)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Replace a parameter's value (shape must match).
    pub fn set_value(&mut self, id: ParamId, value: ArrayD<f64>) {
        assert_eq!(
            self.params[id.0].value.shape(),
            value.shape(),
            "set_value: shape mismatch for {:?}",
            self.params[id.0].name
        );
        self.params[id.0].value = Rc::new(value);
    }

    /// Mutable access for in-place optimizer updates. Clones only if an old
    /// graph still shares the array.
    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<f64> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    pub(crate) fn moments_mut(
        &mut self,
        id: ParamId,
    ) -> &mut Option<(ArrayD<f64>, ArrayD<f64>)> {
        &mut self.params[id.0].moments
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    /// Iterate `(name, value)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.params.iter().map(|p| (p.name.as_str(), &*p.value))
    }

    /// Adam moment state for checkpointing: `(name, m, v)` for every
    /// parameter that has been stepped at least once.
    pub fn iter_moments(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>, &ArrayD<f64>)> {
        self.params
            .iter()
            .filter_map(|p| p.moments.as_ref().map(|(m, v)| (p.name.as_str(), m, v)))
    }

    pub fn set_moments(&mut self, id: ParamId, m: ArrayD<f64>, v: ArrayD<f64>) {
        let shape = self.params[id.0].value.shape().to_vec();
        assert_eq!(m.shape(), &shape[..], "moment shape mismatch");
        assert_eq!(v.shape(), &shape[..], "moment shape mismatch");
        self.params[id.0].moments = Some((m, v));
    }
}

/// Per-forward-pass attachment of a [`ParamStore`] to a [`Graph`].
pub struct Binding<'g> {
    pub graph: &'g Graph,
    store: &'g ParamStore,
    vars: RefCell<HashMap<usize, VarId>>,
}

impl<'g> Binding<'g> {
    pub fn new(graph: &'g Graph, store: &'g ParamStore) -> Self {
        Binding {
            graph,
            store,
            vars: RefCell::new(HashMap::new()),
        }
    }

    /// Graph node for a parameter (created once per binding).
    pub fn var(&self, id: ParamId) -> VarId {
        if let Some(&v) = self.vars.borrow().get(&id.0) {
            return v;
        }
        let v = self.graph.input_shared(self.store.value(id));
        self.vars.borrow_mut().insert(id.0, v);
        v
    }

    /// Extract per-parameter gradients after a backward pass. Parameters the
    /// loss never touched get zero gradients.
    pub fn gradients(&self, grads: &mut Gradients) -> Vec<(ParamId, ArrayD<f64>)> {
        let vars = self.vars.borrow();
        let mut keys: Vec<_> = vars.keys().copied().collect();
        keys.sort_unstable();
        keys.into_iter()
            .map(|k| {
                let id = ParamId(k);
                let g = grads
                    .take(vars[&k])
                    .unwrap_or_else(|| ArrayD::zeros(self.store.value(id).raw_dim()));
                (id, g)
            })
            .collect()
    }
}

/// Accumulates per-parameter gradients across a batch.
pub struct GradBuffer {
    sums: Vec<Option<ArrayD<f64>>>,
    count: usize,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        let mut sums = Vec::with_capacity(store.len());
        sums.resize_with(store.len(), || None);
        GradBuffer { sums, count: 0 }
    }

    pub fn add(&mut self, grads: Vec<(ParamId, ArrayD<f64>)>) {
        for (id, g) in grads {
            match &mut self.sums[id.0] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        self.count += 1;
    }

    /// Mean gradient over the accumulated items.
    pub fn average(self) -> Vec<(ParamId, ArrayD<f64>)> {
        let n = self.count.max(1) as f64;
        self.sums
            .into_iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|mut g| {
                g.mapv_inplace(|v| v / n);
                (ParamId(i), g)
            }))
            .collect()
    }
}

fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// Fully connected layer `y = x W^T + b` for `(t, in)` inputs.
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w = store.add(format!("{name}.w"), uniform_init(rng, &[out_dim, in_dim], bound));
        let b = bias.then(|| store.add(format!("{name}.b"), uniform_init(rng, &[out_dim], bound)));
        Linear { w, b }
    }

    pub fn forward(&self, bind: &Binding, x: VarId) -> VarId {
        let g = bind.graph;
        let wt = g.transpose2d(bind.var(self.w));
        let y = g.matmul(x, wt);
        match self.b {
            Some(b) => g.add_bias_last(y, bind.var(b)),
            None => y,
        }
    }
}

/// 2-D convolution layer with optional weight normalization
/// (`w = gain * v / ||v||` per output channel).
pub struct Conv2d {
    pub kernel: (usize, usize),
    pub geom: Conv2dGeom,
    w: ParamId,
    gain: Option<ParamId>,
    b: Option<ParamId>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geom: Conv2dGeom,
        bias: bool,
        weight_norm: bool,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel.0 * kernel.1) as f64).sqrt();
        let shape = [cout, cin, kernel.0, kernel.1];
        let v = uniform_init(rng, &shape, bound);
        let gain = if weight_norm {
            // gain starts at ||v|| per row so the initial effective weight is v.
            let row = cin * kernel.0 * kernel.1;
            let flat = v.as_slice().unwrap();
            let norms: Vec<f64> = (0..cout)
                .map(|o| flat[o * row..(o + 1) * row].iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            let w = store.add(format!("{name}.v"), v);
            let gain = store.add(
                format!("{name}.gain"),
                ArrayD::from_shape_vec(IxDyn(&[cout]), norms).unwrap(),
            );
            return Conv2d {
                kernel,
                geom,
                w,
                gain: Some(gain),
                b: bias.then(|| {
                    store.add(format!("{name}.b"), uniform_init(rng, &[cout], bound))
                }),
            };
        } else {
            None
        };
        let w = store.add(format!("{name}.w"), v);
        let b = bias.then(|| store.add(format!("{name}.b"), uniform_init(rng, &[cout], bound)));
        Conv2d {
            kernel,
            geom,
            w,
            gain,
            b,
        }
    }

    /// Effective weight tensor (applies weight normalization in-graph).
    fn weight(&self, bind: &Binding) -> VarId {
        let g = bind.graph;
        let w = bind.var(self.w);
        match self.gain {
            None => w,
            Some(gain) => {
                let shape = bind.graph.shape(w);
                let rows = shape[0];
                let cols: usize = shape[1..].iter().product();
                let v2 = g.reshape(w, &[rows, cols]);
                let norms = g.sqrt(g.row_sums(g.square(v2)));
                let scale = g.div(bind.var(gain), norms);
                g.reshape(g.mul_rows(v2, scale), &shape)
            }
        }
    }

    pub fn forward(&self, bind: &Binding, x: VarId) -> VarId {
        let g = bind.graph;
        let y = g.conv2d(x, self.weight(bind), self.geom);
        match self.b {
            Some(b) => g.add_bias_axis0(y, bind.var(b)),
            None => y,
        }
    }
}

/// Transposed 2-D convolution layer.
pub struct ConvT2d {
    pub kernel: (usize, usize),
    pub geom: ConvT2dGeom,
    w: ParamId,
    b: Option<ParamId>,
}

impl ConvT2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        geom: ConvT2dGeom,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel.0 * kernel.1) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            uniform_init(rng, &[cin, cout, kernel.0, kernel.1], bound),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), uniform_init(rng, &[cout], bound)));
        ConvT2d { kernel, geom, w, b }
    }

    pub fn forward(&self, bind: &Binding, x: VarId) -> VarId {
        let g = bind.graph;
        let y = g.conv_transpose2d(x, bind.var(self.w), self.geom);
        match self.b {
            Some(b) => g.add_bias_axis0(y, bind.var(b)),
            None => y,
        }
    }
}

/// Stacked unidirectional LSTM.
pub struct Lstm {
    layers: Vec<(ParamId, ParamId, ParamId)>,
}

impl Lstm {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        hidden: usize,
        num_layers: usize,
    ) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        let bound = 1.0 / (hidden as f64).sqrt();
        for l in 0..num_layers {
            let d = if l == 0 { in_dim } else { hidden };
            let w_ih = store.add(
                format!("{name}.l{l}.w_ih"),
                uniform_init(rng, &[4 * hidden, d], bound),
            );
            let w_hh = store.add(
                format!("{name}.l{l}.w_hh"),
                uniform_init(rng, &[4 * hidden, hidden], bound),
            );
            let b = store.add(format!("{name}.l{l}.b"), uniform_init(rng, &[4 * hidden], bound));
            layers.push((w_ih, w_hh, b));
        }
        Lstm { layers }
    }

    /// `(t, in) -> (t, hidden)`, final layer's hidden sequence.
    pub fn forward(&self, bind: &Binding, x: VarId) -> VarId {
        let mut h = x;
        for &(w_ih, w_hh, b) in &self.layers {
            h = bind
                .graph
                .lstm_seq(h, bind.var(w_ih), bind.var(w_hh), bind.var(b));
        }
        h
    }
}

/// Channel-wise layer norm over `(c, t, f)`.
pub struct ChannelNorm {
    gamma: ParamId,
    beta: ParamId,
    eps: f64,
}

impl ChannelNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        ChannelNorm {
            gamma: store.add(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[c]))),
            beta: store.add(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[c]))),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, bind: &Binding, x: VarId) -> VarId {
        bind.graph
            .channel_norm(x, bind.var(self.gamma), bind.var(self.beta), self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn binding_reuses_one_leaf_per_parameter() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, &mut rng, "lin", 3, 2, true);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let a = bind.var(lin.w);
        let b = bind.var(lin.w);
        assert_eq!(a, b);
    }

    #[test]
    fn linear_forward_matches_manual_matmul() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let lin = Linear::new(&mut store, &mut rng, "lin", 3, 2, true);
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let x = g.input(crate::gradcheck::seeded_tensor(&[4, 3], 5));
        let y = lin.forward(&bind, x);
        assert_eq!(g.shape(y), vec![4, 2]);

        let xv = g.value(x);
        let wv = store.value(lin.w);
        let bv = store.value(lin.b.unwrap());
        let yv = g.value(y);
        for t in 0..4 {
            for o in 0..2 {
                let mut acc = bv[[o]];
                for i in 0..3 {
                    acc += xv[[t, i]] * wv[[o, i]];
                }
                assert!((yv[[t, o]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_norm_initial_weight_equals_direction() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let conv = Conv2d::new(
            &mut store,
            &mut rng,
            "c",
            2,
            3,
            (3, 3),
            Conv2dGeom {
                stride: (1, 1),
                dilation: (1, 1),
                pad: (1, 1, 1, 1),
            },
            false,
            true,
        );
        let g = Graph::new();
        let bind = Binding::new(&g, &store);
        let w = conv.weight(&bind);
        let wv = g.value(w);
        let v = store.value(store.find("c.v").unwrap());
        for (a, b) in wv.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_buffer_averages_across_items() {
        let mut store = ParamStore::new();
        let p = store.add("p", ArrayD::zeros(IxDyn(&[2])));
        let mut buf = GradBuffer::new(&store);
        buf.add(vec![(p, ArrayD::from_elem(IxDyn(&[2]), 1.0))]);
        buf.add(vec![(p, ArrayD::from_elem(IxDyn(&[2]), 3.0))]);
        let avg = buf.average();
        assert_eq!(avg.len(), 1);
        assert!((avg[0].1[[0]] - 2.0).abs() < 1e-15);
    }
}
