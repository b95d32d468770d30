//! Padded single-style batches and the epoch batch stream.

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::error::DataError;
use crate::rng::substream;

use super::task::{Split, StyleTask};
use super::vocab::{EOS, PAD};

/// A padded batch of same-style sequences. Each row holds the sentence
/// content followed by EOS, then PAD out to the batch width; `lengths`
/// counts content plus EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub token_ids: Array2<usize>,
    pub lengths: Vec<usize>,
    pub style_label: Vec<u8>,
}

impl Batch {
    /// Frames and pads raw content sequences under one style label.
    pub fn from_content(rows: &[&[usize]], label: u8) -> Self {
        Self::from_labeled(rows, &vec![label; rows.len()])
    }

    /// Frames and pads raw content sequences with per-row style labels.
    pub fn from_labeled(rows: &[&[usize]], labels: &[u8]) -> Self {
        assert!(!rows.is_empty(), "batch must hold at least one sequence");
        assert_eq!(rows.len(), labels.len(), "one label per row");
        assert!(
            rows.iter().all(|r| !r.is_empty()),
            "batch rows must be nonempty"
        );
        let width = rows.iter().map(|r| r.len()).max().unwrap() + 1;
        let mut token_ids = Array2::from_elem((rows.len(), width), PAD);
        let mut lengths = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for (t, &id) in row.iter().enumerate() {
                token_ids[[i, t]] = id;
            }
            token_ids[[i, row.len()]] = EOS;
            lengths.push(row.len() + 1);
        }
        Self {
            token_ids,
            lengths,
            style_label: labels.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.token_ids.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.token_ids.ncols()
    }

    /// The single style side of this batch (batches are single-style).
    pub fn label(&self) -> u8 {
        self.style_label[0]
    }

    /// Token id of every row at position `t`.
    pub fn step_ids(&self, t: usize) -> Vec<usize> {
        (0..self.len()).map(|i| self.token_ids[[i, t]]).collect()
    }

    /// 1.0 for rows whose content-plus-EOS extends to position `t`.
    pub fn step_mask(&self, t: usize) -> Vec<f64> {
        self.lengths
            .iter()
            .map(|&l| if t < l { 1.0 } else { 0.0 })
            .collect()
    }

    /// Row content without EOS/PAD framing.
    pub fn row_content(&self, i: usize) -> Vec<usize> {
        (0..self.lengths[i] - 1)
            .map(|t| self.token_ids[[i, t]])
            .collect()
    }

    /// Total number of real (content plus EOS) positions in the batch.
    pub fn n_tokens(&self) -> usize {
        self.lengths.iter().sum()
    }
}

/// A pair of same-split batches, one per style side, for losses that
/// consume both sides at once.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub a: Batch,
    pub b: Batch,
}

impl PairBatch {
    /// Re-pads both sides into one mixed-label batch, a-rows first.
    pub fn merged(&self) -> Batch {
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(self.a.len() + self.b.len());
        let mut labels = Vec::with_capacity(rows.capacity());
        for side in [&self.a, &self.b] {
            for i in 0..side.len() {
                rows.push(side.row_content(i));
                labels.push(side.style_label[i]);
            }
        }
        let refs: Vec<&[usize]> = rows.iter().map(|r| r.as_slice()).collect();
        Batch::from_labeled(&refs, &labels)
    }
}

fn side_chunks(
    task: &StyleTask,
    label: u8,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    let side_name: &'static str = if label == 0 { "a" } else { "b" };
    let idx = task.split_indices(label, split);
    if idx.is_empty() {
        return Err(DataError::EmptySplit { side: side_name });
    }
    let mut order: Vec<usize> = idx.to_vec();
    let split_name = match split {
        Split::Support => "support",
        Split::Query => "query",
    };
    let mut rng = substream(seed, &["batch", &task.task_id, split_name, side_name]);
    order.shuffle(&mut rng);
    let seqs = task.side(label);
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<&[usize]> = chunk.iter().map(|&i| seqs[i].as_slice()).collect();
            Batch::from_content(&rows, label)
        })
        .collect())
}

/// One epoch of single-style batches over a split: every sequence of both
/// sides appears exactly once, sides alternate (a first), and the order is
/// fully determined by `seed`.
pub fn batches(
    task: &StyleTask,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<Batch>, DataError> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let a = side_chunks(task, 0, split, batch_size, seed)?;
    let b = side_chunks(task, 1, split, batch_size, seed)?;
    let mut out = Vec::with_capacity(a.len() + b.len());
    let mut ia = a.into_iter();
    let mut ib = b.into_iter();
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => break,
            (x, y) => {
                out.extend(x);
                out.extend(y);
            }
        }
    }
    Ok(out)
}

/// One epoch of side-aligned batch pairs over a split; stops at the shorter
/// side when the two sides have unequal batch counts.
pub fn pair_batches(
    task: &StyleTask,
    split: Split,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<PairBatch>, DataError> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let a = side_chunks(task, 0, split, batch_size, seed)?;
    let b = side_chunks(task, 1, split, batch_size, seed)?;
    Ok(a.into_iter()
        .zip(b)
        .map(|(a, b)| PairBatch { a, b })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::task::load_task_dir;
    use crate::corpus::vocab::Vocabulary;
    use std::io::Write as _;

    fn toy_task(n_per_side: usize) -> StyleTask {
        let tmp = tempfile::tempdir().unwrap();
        let mut fa = std::fs::File::create(tmp.path().join("a.train.txt")).unwrap();
        let mut fb = std::fs::File::create(tmp.path().join("b.train.txt")).unwrap();
        for i in 0..n_per_side {
            writeln!(fa, "alpha word{} tail", i % 3).unwrap();
            writeln!(fb, "beta word{}", i % 3).unwrap();
        }
        drop((fa, fb));
        let v = Vocabulary::build(
            &[
                &tmp.path().join("a.train.txt"),
                &tmp.path().join("b.train.txt"),
            ],
            1,
        )
        .unwrap();
        load_task_dir(tmp.path(), &v, 0.8, 11).unwrap()
    }

    #[test]
    fn epoch_visits_each_sequence_once_alternating() {
        let task = toy_task(10);
        let bs = batches(&task, Split::Support, 4, 1).unwrap();
        // 8 support per side, batch_size 4: two batches per side.
        assert_eq!(bs.len(), 4);
        assert_eq!(
            bs.iter().map(Batch::label).collect::<Vec<u8>>(),
            vec![0, 1, 0, 1]
        );
        let total: usize = bs.iter().map(Batch::len).sum();
        assert_eq!(total, 16);
    }

    #[test]
    fn same_seed_same_batches() {
        let task = toy_task(12);
        let b1 = batches(&task, Split::Support, 3, 7).unwrap();
        let b2 = batches(&task, Split::Support, 3, 7).unwrap();
        assert_eq!(b1, b2);
        let b3 = batches(&task, Split::Support, 3, 8).unwrap();
        assert_ne!(b1, b3);
    }

    #[test]
    fn padding_contract() {
        let b = Batch::from_content(&[&[7, 8], &[4, 5, 6, 9]], 1);
        assert_eq!(b.width(), 5);
        assert_eq!(b.lengths, vec![3, 5]);
        assert_eq!(b.token_ids.row(0).to_vec(), vec![7, 8, EOS, PAD, PAD]);
        assert_eq!(b.token_ids.row(1).to_vec(), vec![4, 5, 6, 9, EOS]);
        assert_eq!(b.step_mask(2), vec![1.0, 1.0]);
        assert_eq!(b.step_mask(3), vec![0.0, 1.0]);
        assert_eq!(b.row_content(0), vec![7, 8]);
    }

    #[test]
    fn empty_split_is_an_error() {
        let mut task = toy_task(10);
        task.query_b.clear();
        let err = batches(&task, Split::Query, 2, 1).unwrap_err();
        assert!(matches!(err, DataError::EmptySplit { side: "b" }));
    }

    #[test]
    fn pair_batches_align_sides() {
        let task = toy_task(9);
        let ps = pair_batches(&task, Split::Support, 2, 3).unwrap();
        assert!(!ps.is_empty());
        for p in &ps {
            assert_eq!(p.a.label(), 0);
            assert_eq!(p.b.label(), 1);
        }
    }
}
