//! Finite-difference gradient checking.
//!
//! Every op in this crate is validated against central differences at f64
//! precision. The checker rebuilds the graph for each probe, so the builder
//! closure must be a pure function of its inputs.

use crate::graph::{Graph, VarId};
use ndarray::{ArrayD, IxDyn};

/// Deterministic pseudo-random tensor with entries in roughly [-1.5, 1.5].
/// Uses splitmix64 so results are identical on every platform.
pub fn seeded_tensor(shape: &[usize], seed: u64) -> ArrayD<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let u = next() as f64 / u64::MAX as f64; // [0, 1]
            (u - 0.5) * 3.0
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("seeded_tensor shape")
}

/// Relative-error comparison with an absolute floor.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= abs + rel * a.abs().max(b.abs())
}

fn eval(build: &impl Fn(&Graph, &[VarId]) -> VarId, inputs: &[ArrayD<f64>]) -> f64 {
    let g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let root = build(&g, &ids);
    g.scalar(root)
}

/// Check analytic gradients of `build` against central finite differences
/// for every input coordinate (inputs are seeded from `seed`). Panics with a
/// description of the first mismatch.
pub fn check_grads(shapes: &[&[usize]], seed: u64, build: impl Fn(&Graph, &[VarId]) -> VarId) {
    let inputs: Vec<ArrayD<f64>> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| seeded_tensor(s, seed.wrapping_add(i as u64 * 7919)))
        .collect();

    let g = Graph::new();
    let ids: Vec<VarId> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let root = build(&g, &ids);
    let grads = g.backward(root);

    let eps = 1e-5;
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ids[i])
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(x.raw_dim()));
        let n = x.len();
        // Probe every coordinate for small tensors, a deterministic stride
        // of them for large ones.
        let step = (n / 64).max(1);
        for flat in (0..n).step_by(step) {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            {
                let p = plus[i].as_slice_mut().unwrap();
                p[flat] += eps;
                let m = minus[i].as_slice_mut().unwrap();
                m[flat] -= eps;
            }
            let numeric = (eval(&build, &plus) - eval(&build, &minus)) / (2.0 * eps);
            let a = analytic.as_slice().unwrap()[flat];
            assert!(
                close(a, numeric, 1e-4, 1e-7),
                "gradient mismatch: input {i} flat index {flat}: analytic {a:.9e} vs numeric {numeric:.9e}"
            );
        }
    }
}
