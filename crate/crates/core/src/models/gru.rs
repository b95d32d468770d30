//! Single-layer GRU cell expressed as tape ops.

use crate::autodiff::{Tape, Var};
use crate::error::ModelError;

use super::Binder;

/// One GRU step. Expects parameters named `<prefix>.{wxr,whr,br,wxu,whu,bu,
/// wxn,whn,bn}` with input-to-hidden matrices `[d_in, d_h]`, hidden-to-hidden
/// `[d_h, d_h]`, and bias rows `[1, d_h]`.
///
/// r = sigm(x Wxr + h Whr + br)
/// u = sigm(x Wxu + h Whu + bu)
/// n = tanh(x Wxn + (r * h) Whn + bn)
/// h' = (1 - u) * n + u * h
pub fn gru_step(
    tape: &mut Tape,
    bind: Binder,
    prefix: &str,
    x: Var,
    h: Var,
) -> Result<Var, ModelError> {
    let gate = |tape: &mut Tape, wx: Var, wh: Var, b: Var, x: Var, hin: Var| {
        let xs = tape.matmul(x, wx);
        let hs = tape.matmul(hin, wh);
        let s = tape.add(xs, hs);
        tape.add(s, b)
    };

    let wxr = bind.get(tape, &format!("{prefix}.wxr"))?;
    let whr = bind.get(tape, &format!("{prefix}.whr"))?;
    let br = bind.get(tape, &format!("{prefix}.br"))?;
    let r_pre = gate(tape, wxr, whr, br, x, h);
    let r = tape.sigmoid(r_pre);

    let wxu = bind.get(tape, &format!("{prefix}.wxu"))?;
    let whu = bind.get(tape, &format!("{prefix}.whu"))?;
    let bu = bind.get(tape, &format!("{prefix}.bu"))?;
    let u_pre = gate(tape, wxu, whu, bu, x, h);
    let u = tape.sigmoid(u_pre);

    let wxn = bind.get(tape, &format!("{prefix}.wxn"))?;
    let whn = bind.get(tape, &format!("{prefix}.whn"))?;
    let bn = bind.get(tape, &format!("{prefix}.bn"))?;
    let rh = tape.mul(r, h);
    let n_pre = gate(tape, wxn, whn, bn, x, rh);
    let n = tape.tanh(n_pre);

    // h' = n - u*n + u*h
    let un = tape.mul(u, n);
    let uh = tape.mul(u, h);
    let d = tape.sub(n, un);
    Ok(tape.add(d, uh))
}

/// Freezes finished rows: `h + mask * (h_new - h)` with `mask` a `[B,1]`
/// column of 0/1 flags. Rows past their length keep their last real state.
pub fn masked_update(tape: &mut Tape, h_prev: Var, h_new: Var, mask: &[f64]) -> Var {
    let m = tape.constant(ndarray::Array2::from_shape_vec((mask.len(), 1), mask.to_vec()).unwrap());
    let delta = tape.sub(h_new, h_prev);
    let gated = tape.mul(delta, m);
    tape.add(h_prev, gated)
}

/// Registers GRU parameters under `prefix` into a parameter set.
pub fn init_gru(
    ps: &mut crate::autodiff::ParamSet,
    rng: &mut rand_chacha::ChaCha8Rng,
    prefix: &str,
    d_in: usize,
    d_h: usize,
) {
    for gate in ["r", "u", "n"] {
        ps.insert(&format!("{prefix}.wx{gate}"), super::glorot(rng, d_in, d_h));
        ps.insert(&format!("{prefix}.wh{gate}"), super::glorot(rng, d_h, d_h));
        ps.insert(&format!("{prefix}.b{gate}"), ndarray::Array2::zeros((1, d_h)));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{fd_grad_full, max_rel_err, ParamSet, Tape};
    use crate::models::Binder;
    use crate::rng::substream;
    use ndarray::Array2;
    use rand::Rng;

    fn setup() -> (ParamSet, Array2<f64>, Array2<f64>) {
        let mut rng = substream(3, &["test", "gru"]);
        let mut ps = ParamSet::new();
        init_gru(&mut ps, &mut rng, "g", 4, 3);
        // Nonzero biases so their gradients are exercised.
        for gate in ["r", "u", "n"] {
            *ps.get_mut(&format!("g.b{gate}")).unwrap() =
                Array2::from_shape_fn((1, 3), |_| rng.gen_range(-0.5..0.5));
        }
        let x = Array2::from_shape_fn((2, 4), |_| rng.gen_range(-1.0..1.0));
        let h = Array2::from_shape_fn((2, 3), |_| rng.gen_range(-1.0..1.0));
        (ps, x, h)
    }

    #[test]
    fn gru_step_gradcheck() {
        let (ps, x, h) = setup();
        let build = |t: &mut Tape, p: &ParamSet| {
            let xv = t.constant(x.clone());
            let hv = t.constant(h.clone());
            let out = gru_step(t, Binder::tracked(p), "g", xv, hv).unwrap();
            let sq = t.mul(out, out);
            t.sum_all(sq)
        };
        let mut t = Tape::new();
        let root = build(&mut t, &ps);
        let analytic = t.grads(root, &ps);
        let numeric = fd_grad_full(&ps, 1e-5, |p| {
            let mut t = Tape::new();
            let root = build(&mut t, p);
            t.scalar(root)
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-6, "gru gradcheck err {err:.2e}");
    }

    #[test]
    fn masked_update_freezes_rows() {
        let (ps, x, h) = setup();
        let mut t = Tape::new();
        let xv = t.constant(x);
        let hv = t.constant(h.clone());
        let out = gru_step(&mut t, Binder::tracked(&ps), "g", xv, hv).unwrap();
        let frozen = masked_update(&mut t, hv, out, &[1.0, 0.0]);
        let fv = t.value(frozen);
        assert_ne!(fv.row(0), h.row(0));
        assert_eq!(fv.row(1), h.row(1));
    }
}
