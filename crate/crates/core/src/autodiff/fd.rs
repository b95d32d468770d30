//! Central-difference probes used to validate analytic gradients.

use ndarray::Array2;

use super::ParamSet;

/// Full finite-difference gradient of `f` at `at`. Cost is two evaluations
/// per scalar parameter, so this is for small parameter sets only; larger
/// models should probe sampled coordinates with [`fd_grad_at`].
pub fn fd_grad_full<F: FnMut(&ParamSet) -> f64>(at: &ParamSet, eps: f64, mut f: F) -> ParamSet {
    let mut out = at.zeros_like();
    let names: Vec<String> = at.names().map(str::to_string).collect();
    for name in names {
        let dim = at.get(&name).unwrap().dim();
        let mut g = Array2::zeros(dim);
        for r in 0..dim.0 {
            for c in 0..dim.1 {
                g[[r, c]] = fd_coord(at, &name, r, c, eps, &mut f);
            }
        }
        *out.get_mut(&name).unwrap() = g;
    }
    out
}

/// Finite-difference partial derivatives of `f` at the listed
/// `(name, row, col)` coordinates.
pub fn fd_grad_at<F: FnMut(&ParamSet) -> f64>(
    at: &ParamSet,
    coords: &[(String, usize, usize)],
    eps: f64,
    mut f: F,
) -> Vec<f64> {
    coords
        .iter()
        .map(|(name, r, c)| fd_coord(at, name, *r, *c, eps, &mut f))
        .collect()
}

fn fd_coord<F: FnMut(&ParamSet) -> f64>(
    at: &ParamSet,
    name: &str,
    r: usize,
    c: usize,
    eps: f64,
    f: &mut F,
) -> f64 {
    let mut probe = at.clone();
    probe.get_mut(name).unwrap()[[r, c]] += eps;
    let hi = f(&probe);
    probe.get_mut(name).unwrap()[[r, c]] -= 2.0 * eps;
    let lo = f(&probe);
    (hi - lo) / (2.0 * eps)
}

/// Central-difference directional derivative of a gradient map: an estimate
/// of `H(at) . v` given only a function computing gradients. This is the
/// generic Hessian-vector fallback for models without an analytic one.
pub fn fd_grad_of_grads<G: FnMut(&ParamSet) -> ParamSet>(
    at: &ParamSet,
    v: &ParamSet,
    eps: f64,
    mut grad: G,
) -> ParamSet {
    let mut hi = at.clone();
    hi.add_scaled(eps, v);
    let mut lo = at.clone();
    lo.add_scaled(-eps, v);
    let mut out = grad(&hi);
    let glo = grad(&lo);
    out.add_scaled(-1.0, &glo);
    out.scale(1.0 / (2.0 * eps));
    out
}

/// Largest guarded relative discrepancy between two aligned sets:
/// `max |a - b| / (|a| + |b| + 1e-4)`. The additive guard keeps
/// finite-difference noise on near-zero coordinates from dominating.
pub fn max_rel_err(a: &ParamSet, b: &ParamSet) -> f64 {
    assert!(a.aligned_with(b), "sets are not aligned");
    let mut worst = 0.0f64;
    for ((_, av), (_, bv)) in a.iter().zip(b.iter()) {
        for (x, y) in av.iter().zip(bv.iter()) {
            let err = (x - y).abs() / (x.abs() + y.abs() + 1e-4);
            worst = worst.max(err);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fd_quadratic_matches_analytic() {
        let mut ps = ParamSet::new();
        ps.insert("x", array![[3.0, -1.0]]);
        let g = fd_grad_full(&ps, 1e-6, |p| {
            let x = p.get("x").unwrap();
            x[[0, 0]] * x[[0, 0]] + 2.0 * x[[0, 1]]
        });
        assert!((g.get("x").unwrap()[[0, 0]] - 6.0).abs() < 1e-6);
        assert!((g.get("x").unwrap()[[0, 1]] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn fd_hvp_matches_known_hessian() {
        // f(x) = x0^2 + 3 x0 x1, H = [[2, 3], [3, 0]].
        let mut ps = ParamSet::new();
        ps.insert("x", array![[1.0, 2.0]]);
        let mut v = ps.zeros_like();
        *v.get_mut("x").unwrap() = array![[1.0, -1.0]];
        let hvp = fd_grad_of_grads(&ps, &v, 1e-5, |p| {
            let x = p.get("x").unwrap();
            let mut g = p.zeros_like();
            *g.get_mut("x").unwrap() = array![[2.0 * x[[0, 0]] + 3.0 * x[[0, 1]], 3.0 * x[[0, 0]]]];
            g
        });
        let h = hvp.get("x").unwrap();
        assert!((h[[0, 0]] - (2.0 - 3.0)).abs() < 1e-6);
        assert!((h[[0, 1]] - 3.0).abs() < 1e-6);
    }
}
