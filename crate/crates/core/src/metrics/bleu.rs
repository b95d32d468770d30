//! Corpus-level BLEU with the counting conventions of the classic
//! multi-bleu script: clipped modified n-gram precisions up to 4-grams,
//! pooled over the whole corpus, with a brevity penalty on total lengths.

use std::collections::HashMap;

use crate::error::MetricError;

const MAX_ORDER: usize = 4;

/// Precision smoothing for tiny corpora. `None` reproduces the unsmoothed
/// script behavior where any empty n-gram order zeroes the score; `AddOne`
/// adds one to every order's match and total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Smoothing {
    #[default]
    None,
    AddOne,
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 of `hypotheses` against aligned single `references`,
/// in [0, 100].
pub fn bleu(
    hypotheses: &[String],
    references: &[String],
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if references.is_empty() {
        return Err(MetricError::InvalidArgument(
            "bleu needs at least one hypothesis/reference pair".to_string(),
        ));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let ht: Vec<&str> = hyp.split_whitespace().collect();
        let rt: Vec<&str> = reference.split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hg = ngram_counts(&ht, n);
            let rg = ngram_counts(&rt, n);
            for (gram, &count) in &hg {
                totals[n - 1] += count;
                matches[n - 1] += count.min(rg.get(gram).copied().unwrap_or(0));
            }
        }
    }

    let mut log_precision_sum = 0.0;
    for n in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::None => (matches[n] as f64, totals[n] as f64),
            Smoothing::AddOne => ((matches[n] + 1) as f64, (totals[n] + 1) as f64),
        };
        if m == 0.0 || t == 0.0 {
            return Ok(0.0);
        }
        log_precision_sum += (m / t).ln();
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * (log_precision_sum / MAX_ORDER as f64).exp())
}

/// BLEU of system outputs against the sentences they were produced from,
/// a proxy for content preservation when no references exist.
pub fn self_bleu(
    hypotheses: &[String],
    originals: &[String],
    smoothing: Smoothing,
) -> Result<f64, MetricError> {
    bleu(hypotheses, originals, smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    /// Test-local reimplementation with per-sentence accumulation and
    /// string-keyed grams, kept deliberately unlike the library code path.
    fn bleu_oracle(hyps: &[String], refs: &[String]) -> f64 {
        let mut m = vec![0.0; 4];
        let mut t = vec![0.0; 4];
        let (mut hl, mut rl) = (0.0, 0.0);
        for (h, r) in hyps.iter().zip(refs) {
            let ht: Vec<&str> = h.split_whitespace().collect();
            let rt: Vec<&str> = r.split_whitespace().collect();
            hl += ht.len() as f64;
            rl += rt.len() as f64;
            for n in 1..=4usize {
                let key = |w: &[&str]| w.join("\u{1}");
                let mut rc: HashMap<String, f64> = HashMap::new();
                if rt.len() >= n {
                    for w in rt.windows(n) {
                        *rc.entry(key(w)).or_default() += 1.0;
                    }
                }
                let mut hc: HashMap<String, f64> = HashMap::new();
                if ht.len() >= n {
                    for w in ht.windows(n) {
                        *hc.entry(key(w)).or_default() += 1.0;
                    }
                }
                for (g, c) in hc {
                    t[n - 1] += c;
                    m[n - 1] += c.min(rc.get(&g).copied().unwrap_or(0.0));
                }
            }
        }
        if m.iter().any(|&x| x == 0.0) || hl == 0.0 {
            return 0.0;
        }
        let lp: f64 = (0..4).map(|n| (m[n] / t[n]).ln()).sum::<f64>() / 4.0;
        let bp = if hl > rl { 1.0 } else { (1.0 - rl / hl).exp() };
        100.0 * bp * lp.exp()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = s(&["the cat sat on the mat", "a b c d e"]);
        assert_eq!(bleu(&c, &c, Smoothing::None).unwrap(), 100.0);
        assert_eq!(self_bleu(&c, &c, Smoothing::None).unwrap(), 100.0);
    }

    #[test]
    fn disjoint_vocabulary_scores_0() {
        let h = s(&["x y z w v u t s"]);
        let r = s(&["p q r m n o k l"]);
        assert_eq!(bleu(&h, &r, Smoothing::None).unwrap(), 0.0);
    }

    #[test]
    fn three_pair_hand_corpus_matches_reference_value() {
        // Hand-audited counts: totals 21/18/15/12, clipped matches
        // 17/10/5/2, hypothesis length 21 vs reference length 22.
        let h = s(&[
            "the cat sat on the mat",
            "a quick brown fox jumps over the dog",
            "hello world this is a test sentence",
        ]);
        let r = s(&[
            "the cat sat on a mat",
            "the quick brown fox jumped over the lazy dog",
            "hello world this is the test sentence",
        ]);
        let got = bleu(&h, &r, Smoothing::None).unwrap();
        assert!((got - 37.908837307683186).abs() < 0.1, "got {got}");
        assert!((got - bleu_oracle(&h, &r)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let h = s(&["a", "b"]);
        let r = s(&["a"]);
        assert!(matches!(
            bleu(&h, &r, Smoothing::None),
            Err(MetricError::LengthMismatch { hyps: 2, refs: 1 })
        ));
        assert!(matches!(
            bleu(&[], &[], Smoothing::None),
            Err(MetricError::InvalidArgument(_))
        ));
    }

    #[test]
    fn add_one_smoothing_rescues_short_corpora() {
        let h = s(&["a b"]);
        let r = s(&["a b"]);
        // No 3-grams or 4-grams exist, so the unsmoothed score collapses.
        assert_eq!(bleu(&h, &r, Smoothing::None).unwrap(), 0.0);
        let sm = bleu(&h, &r, Smoothing::AddOne).unwrap();
        assert!(sm > 0.0 && sm <= 100.0);
    }

    #[test]
    fn random_corpora_match_the_oracle_and_stay_bounded() {
        let mut rng = crate::rng::substream(11, &["test", "bleu"]);
        let vocab = ["a", "b", "c", "d", "e", "f", "g"];
        for _ in 0..50 {
            let n = rng.gen_range(1..6);
            let line = |rng: &mut rand_chacha::ChaCha8Rng| {
                let len = rng.gen_range(1..12);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let h: Vec<String> = (0..n).map(|_| line(&mut rng)).collect();
            let r: Vec<String> = (0..n).map(|_| line(&mut rng)).collect();
            let got = bleu(&h, &r, Smoothing::None).unwrap();
            assert!((0.0..=100.0).contains(&got));
            assert!((got - bleu_oracle(&h, &r)).abs() < 1e-9, "oracle mismatch");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Corpus-level counts make the score invariant to pair order.
        #[test]
        fn permutation_invariance(seed in 0u64..1000) {
            let mut rng = crate::rng::substream(seed, &["test", "bleu-perm"]);
            let vocab = ["u", "v", "w", "x", "y"];
            let line = |rng: &mut rand_chacha::ChaCha8Rng| {
                let len = rng.gen_range(1..9);
                (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>().join(" ")
            };
            let n = rng.gen_range(2..7);
            let h: Vec<String> = (0..n).map(|_| line(&mut rng)).collect();
            let r: Vec<String> = (0..n).map(|_| line(&mut rng)).collect();
            let base = bleu(&h, &r, Smoothing::None).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let hp: Vec<String> = order.iter().map(|&i| h[i].clone()).collect();
            let rp: Vec<String> = order.iter().map(|&i| r[i].clone()).collect();
            let perm = bleu(&hp, &rp, Smoothing::None).unwrap();
            prop_assert!((base - perm).abs() < 1e-12);
        }
    }
}
