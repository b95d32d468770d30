//! Datasets: vocabularies, style-pair tasks, and batching.

mod batch;
mod task;
mod vocab;

pub use batch::{batches, pair_batches, Batch, PairBatch};
pub use task::{
    dataset_text_files, load_dataset, load_dataset_with, load_task_dir, load_task_dir_with,
    Split, StyleTask, TestPair, DEFAULT_MAX_SEQ_LEN, DEFAULT_SUPPORT_FRACTION,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn token_strategy() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-z]{1,6}").unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Tokenize/detokenize round-trips whitespace-normalized lines made
        /// of in-vocabulary tokens.
        #[test]
        fn tokenize_round_trip(tokens in proptest::collection::vec(token_strategy(), 1..12)) {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            let vocab = Vocabulary::from_counts(&counts, 1);
            let line = tokens.join(" ");
            let ids = vocab.tokenize(&line);
            prop_assert_eq!(vocab.detokenize(&ids), line);
        }

        /// The id/token maps stay mutually inverse for arbitrary corpora.
        #[test]
        fn vocabulary_bijection(tokens in proptest::collection::vec(token_strategy(), 0..40),
                                min_count in 1usize..4) {
            let mut counts: HashMap<String, usize> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            let vocab = Vocabulary::from_counts(&counts, min_count);
            for id in 0..vocab.len() {
                prop_assert_eq!(vocab.id(vocab.token(id)), Some(id));
            }
        }

        /// Batches preserve row framing for arbitrary content.
        #[test]
        fn batch_rows_end_with_eos(rows in proptest::collection::vec(
            proptest::collection::vec(4usize..50, 1..9), 1..6)) {
            let refs: Vec<&[usize]> = rows.iter().map(|r| r.as_slice()).collect();
            let batch = Batch::from_content(&refs, 0);
            for (i, row) in rows.iter().enumerate() {
                prop_assert_eq!(batch.lengths[i], row.len() + 1);
                prop_assert_eq!(batch.token_ids[[i, row.len()]], EOS);
                for t in row.len() + 1..batch.width() {
                    prop_assert_eq!(batch.token_ids[[i, t]], PAD);
                }
            }
        }
    }
}
