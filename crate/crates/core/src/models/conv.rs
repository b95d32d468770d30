//! Convolution-over-time with max pooling, the shared feature extractor of
//! the adversarial discriminators and the transfer-accuracy classifier.

use crate::autodiff::{Tape, Var};
use crate::error::ModelError;

use super::Binder;

/// Convolves a `[T, D]` sequence with one filter bank per kernel width and
/// max-pools each over time, returning `[1, widths.len() * n_filters]`
/// features. Expects parameters `<prefix>.conv<k>.{w,b}` with `w` shaped
/// `[k*D, n_filters]`. Sequences shorter than the widest kernel are padded
/// with zero rows.
pub fn conv_pool(
    tape: &mut Tape,
    bind: Binder,
    prefix: &str,
    seq: Var,
    widths: &[usize],
    n_filters: usize,
) -> Result<Var, ModelError> {
    assert!(!widths.is_empty());
    let (t_len, d) = tape.dim(seq);
    let w_max = *widths.iter().max().unwrap();
    let (seq, t_len) = if t_len < w_max {
        let pad = tape.zeros(w_max - t_len, d);
        (tape.concat_rows(&[seq, pad]), w_max)
    } else {
        (seq, t_len)
    };

    let mut pooled = Vec::with_capacity(widths.len());
    for &k in widths {
        let w = bind.get(tape, &format!("{prefix}.conv{k}.w"))?;
        let b = bind.get(tape, &format!("{prefix}.conv{k}.b"))?;
        debug_assert_eq!(tape.dim(w), (k * d, n_filters));
        let n_pos = t_len - k + 1;
        let offs: Vec<Var> = (0..k)
            .map(|o| {
                let ids: Vec<usize> = (o..o + n_pos).collect();
                tape.rows(seq, &ids)
            })
            .collect();
        let windows = tape.concat_cols(&offs);
        let scored = tape.matmul(windows, w);
        let scored = tape.add(scored, b);
        let act = tape.relu(scored);
        let rows: Vec<Var> = (0..n_pos).map(|p| tape.rows(act, &[p])).collect();
        pooled.push(tape.max_many(&rows));
    }
    Ok(tape.concat_cols(&pooled))
}

/// Registers the filter banks used by [`conv_pool`].
pub fn init_conv(
    ps: &mut crate::autodiff::ParamSet,
    rng: &mut rand_chacha::ChaCha8Rng,
    prefix: &str,
    d: usize,
    widths: &[usize],
    n_filters: usize,
) {
    for &k in widths {
        ps.insert(
            &format!("{prefix}.conv{k}.w"),
            super::glorot(rng, k * d, n_filters),
        );
        ps.insert(
            &format!("{prefix}.conv{k}.b"),
            ndarray::Array2::zeros((1, n_filters)),
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{fd_grad_full, max_rel_err, ParamSet, Tape};
    use crate::rng::substream;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn conv_pool_gradcheck_and_shape() {
        let mut rng = substream(4, &["test", "conv"]);
        let mut ps = ParamSet::new();
        init_conv(&mut ps, &mut rng, "c", 3, &[2, 3], 4);
        for k in [2usize, 3] {
            *ps.get_mut(&format!("c.conv{k}.b")).unwrap() =
                Array2::from_shape_fn((1, 4), |_| rng.gen_range(-0.3..0.3));
        }
        let x = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));

        let build = |t: &mut Tape, p: &ParamSet| {
            let xv = t.constant(x.clone());
            let f = conv_pool(t, crate::models::Binder::tracked(p), "c", xv, &[2, 3], 4).unwrap();
            assert_eq!(t.dim(f), (1, 8));
            let sq = t.mul(f, f);
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
        assert!(err < 1e-6, "conv gradcheck err {err:.2e}");
    }

    #[test]
    fn short_sequences_are_zero_padded() {
        let mut rng = substream(5, &["test", "convpad"]);
        let mut ps = ParamSet::new();
        init_conv(&mut ps, &mut rng, "c", 2, &[4], 3);
        let mut t = Tape::new();
        let x = t.constant(Array2::from_elem((1, 2), 1.0));
        let f = conv_pool(&mut t, crate::models::Binder::tracked(&ps), "c", x, &[4], 3).unwrap();
        assert_eq!(t.dim(f), (1, 3));
        assert!(t.value(f).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn max_pool_picks_strongest_position() {
        // One identity-ish filter over width 1 reduces pooling to a plain
        // per-column max, checked against a direct computation.
        let mut ps = ParamSet::new();
        ps.insert("c.conv1.w", ndarray::array![[1.0, 0.0], [0.0, 1.0]]);
        ps.insert("c.conv1.b", Array2::zeros((1, 2)));
        let x = ndarray::array![[0.5, -1.0], [2.0, 0.25], [1.0, 0.75]];
        let mut t = Tape::new();
        let xv = t.constant(x);
        let f = conv_pool(&mut t, crate::models::Binder::tracked(&ps), "c", xv, &[1], 2).unwrap();
        assert_eq!(t.value(f), &ndarray::array![[2.0, 0.75]]);
    }
}
