//! Shared graph-building blocks used by more than one model.

use autodiff::{Graph, VarId};

/// Flattens a (c, t, f) feature map to per-frame vectors (t, f*c).
/// Features are ordered frequency-major, channel-minor; [`unflatten_cf`]
/// is the exact inverse, so the ordering is a private convention.
pub fn flatten_cf(g: &Graph, x: VarId) -> VarId {
    let s = g.shape(x);
    assert_eq!(s.len(), 3, "flatten_cf expects (c, t, f)");
    let (c, t, f) = (s[0], s[1], s[2]);
    let two_d = g.reshape(x, &[c, t * f]);
    let swapped = g.transpose2d(two_d); // (t*f, c)
    g.reshape(swapped, &[t, f * c])
}

/// Inverse of [`flatten_cf`]: (t, f*c) back to (c, t, f).
pub fn unflatten_cf(g: &Graph, y: VarId, c: usize, f: usize) -> VarId {
    let s = g.shape(y);
    assert_eq!(s.len(), 2, "unflatten_cf expects (t, f*c)");
    let t = s[0];
    assert_eq!(s[1], f * c, "feature width must equal f*c");
    let swapped = g.reshape(y, &[t * f, c]);
    let two_d = g.transpose2d(swapped); // (c, t*f)
    g.reshape(two_d, &[c, t, f])
}

/// Complex multiplication of two (T, F) plane pairs:
/// (xr + i xi)(mr + i mi).
pub fn complex_mul(
    g: &Graph,
    xr: VarId,
    xi: VarId,
    mr: VarId,
    mi: VarId,
) -> (VarId, VarId) {
    let re = g.sub(g.mul(xr, mr), g.mul(xi, mi));
    let im = g.add(g.mul(xr, mi), g.mul(xi, mr));
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::gradcheck::seeded_tensor;

    #[test]
    fn flatten_roundtrips() {
        let x = seeded_tensor(&[3, 4, 5], 1);
        let g = Graph::new();
        let node = g.input(x.clone());
        let flat = flatten_cf(&g, node);
        assert_eq!(g.shape(flat), vec![4, 15]);
        let back = unflatten_cf(&g, flat, 3, 5);
        assert_eq!(&*g.value(back), &x);
    }

    #[test]
    fn flatten_groups_by_frame() {
        // every output row must be a permutation of that frame's (c, f)
        // values and contain nothing from other frames
        let x = seeded_tensor(&[2, 3, 4], 2);
        let g = Graph::new();
        let flat = g.value(flatten_cf(&g, g.input(x.clone())));
        for t in 0..3 {
            let mut want: Vec<f64> = Vec::new();
            for c in 0..2 {
                for f in 0..4 {
                    want.push(x[[c, t, f]]);
                }
            }
            let mut got: Vec<f64> = (0..8).map(|j| flat[[t, j]]).collect();
            want.sort_by(f64::total_cmp);
            got.sort_by(f64::total_cmp);
            assert_eq!(got, want);
        }
    }

    #[test]
    fn complex_mul_matches_identity_and_rotation() {
        let g = Graph::new();
        let xr = g.input(seeded_tensor(&[2, 3], 3));
        let xi = g.input(seeded_tensor(&[2, 3], 4));
        let one = g.input(ndarray::ArrayD::ones(ndarray::IxDyn(&[2, 3])));
        let zero = g.input(ndarray::ArrayD::zeros(ndarray::IxDyn(&[2, 3])));
        // multiply by 1 + 0i: identity
        let (re, im) = complex_mul(&g, xr, xi, one, zero);
        assert_eq!(&*g.value(re), &*g.value(xr));
        assert_eq!(&*g.value(im), &*g.value(xi));
        // multiply by 0 + 1i: rotation re -> -im, im -> re
        let (re, im) = complex_mul(&g, xr, xi, zero, one);
        assert_eq!(&*g.value(re), &*g.value(g.neg(xi)));
        assert_eq!(&*g.value(im), &*g.value(xr));
    }
}
