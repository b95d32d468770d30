//! Style-pair tasks: two nonparallel training sides plus an optional
//! parallel test set, with a deterministic support/query split.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::DataError;
use crate::rng::substream;

use super::vocab::Vocabulary;

pub const DEFAULT_MAX_SEQ_LEN: usize = 32;
pub const DEFAULT_SUPPORT_FRACTION: f64 = 0.8;

/// Which half of the support/query split to draw from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Support,
    Query,
}

/// One aligned test example: source sentence, reference transfer, and the
/// style side (0 or 1) the source belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestPair {
    pub source: Vec<usize>,
    pub reference: Vec<usize>,
    pub source_style: u8,
}

/// A loaded style-transfer task. `train_a`/`train_b` hold token-id content
/// sequences without framing tokens; EOS/PAD are applied at batching. The
/// support/query split is stored as index lists over each side.
#[derive(Clone, Debug)]
pub struct StyleTask {
    pub task_id: String,
    pub style_a: String,
    pub style_b: String,
    pub train_a: Vec<Vec<usize>>,
    pub train_b: Vec<Vec<usize>>,
    pub support_fraction: f64,
    pub support_a: Vec<usize>,
    pub query_a: Vec<usize>,
    pub support_b: Vec<usize>,
    pub query_b: Vec<usize>,
    pub test_pairs: Option<Vec<TestPair>>,
}

impl StyleTask {
    /// Side's sequence list: 0 is `style_a`, 1 is `style_b`.
    pub fn side(&self, label: u8) -> &[Vec<usize>] {
        match label {
            0 => &self.train_a,
            1 => &self.train_b,
            other => panic!("style label {other} out of range"),
        }
    }

    pub fn split_indices(&self, label: u8, split: Split) -> &[usize] {
        match (label, split) {
            (0, Split::Support) => &self.support_a,
            (0, Split::Query) => &self.query_a,
            (1, Split::Support) => &self.support_b,
            (1, Split::Query) => &self.query_b,
            (other, _) => panic!("style label {other} out of range"),
        }
    }

    pub fn style_name(&self, label: u8) -> &str {
        match label {
            0 => &self.style_a,
            1 => &self.style_b,
            other => panic!("style label {other} out of range"),
        }
    }

    /// Resolves a style name to its side label.
    pub fn label_of(&self, style: &str) -> Result<u8, DataError> {
        if style == self.style_a {
            Ok(0)
        } else if style == self.style_b {
            Ok(1)
        } else {
            Err(DataError::UnknownStyle(style.to_string()))
        }
    }
}

#[derive(Deserialize)]
struct TaskMeta {
    style_a: String,
    style_b: String,
}

fn read_side(
    path: &Path,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<Vec<usize>>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            DataError::MissingCorpusFile(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    let seqs: Vec<Vec<usize>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut ids = vocab.tokenize(l);
            ids.truncate(max_len);
            ids
        })
        .filter(|ids| !ids.is_empty())
        .collect();
    if seqs.is_empty() {
        return Err(DataError::EmptyCorpus(path.display().to_string()));
    }
    Ok(seqs)
}

fn split_side(n: usize, fraction: f64, seed: u64, task_id: &str, side: &str) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, &["split", task_id, side]);
    idx.shuffle(&mut rng);
    let n_support = ((n as f64) * fraction).round() as usize;
    let n_support = n_support.min(n);
    let query = idx.split_off(n_support);
    (idx, query)
}

/// Loads `<dir>/{a.train.txt, b.train.txt}`, optional `test.tsv` (source TAB
/// reference TAB style-name), and optional `meta.json` naming the styles.
/// The support/query split is shuffled deterministically under `seed`.
pub fn load_task_dir(
    dir: &Path,
    vocab: &Vocabulary,
    support_fraction: f64,
    seed: u64,
) -> Result<StyleTask, DataError> {
    load_task_dir_with(dir, vocab, support_fraction, seed, DEFAULT_MAX_SEQ_LEN)
}

/// [`load_task_dir`] with an explicit content-length cap; longer sentences
/// are truncated before framing tokens are applied.
pub fn load_task_dir_with(
    dir: &Path,
    vocab: &Vocabulary,
    support_fraction: f64,
    seed: u64,
    max_len: usize,
) -> Result<StyleTask, DataError> {
    assert!(
        support_fraction > 0.0 && support_fraction < 1.0,
        "support_fraction must lie in (0,1)"
    );
    assert!(max_len >= 1, "max_len must be at least 1");
    let task_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());

    let train_a = read_side(&dir.join("a.train.txt"), vocab, max_len)?;
    let train_b = read_side(&dir.join("b.train.txt"), vocab, max_len)?;

    let meta_path = dir.join("meta.json");
    let (style_a, style_b) = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(|source| DataError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: TaskMeta = serde_json::from_str(&text).map_err(|_| {
            DataError::EmptyCorpus(format!("{} is not valid task metadata", meta_path.display()))
        })?;
        (meta.style_a, meta.style_b)
    } else {
        ("a".to_string(), "b".to_string())
    };
    if style_a == style_b {
        return Err(DataError::EmptyCorpus(format!(
            "task {task_id}: style names must differ, both are {style_a:?}"
        )));
    }

    let test_path = dir.join("test.tsv");
    let test_pairs = if test_path.exists() {
        let text = fs::read_to_string(&test_path).map_err(|source| DataError::Io {
            path: test_path.clone(),
            source,
        })?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(DataError::MalformedTestPair {
                    path: test_path.clone(),
                    line: i + 1,
                });
            }
            let source_style = if fields[2] == style_a {
                0
            } else if fields[2] == style_b {
                1
            } else {
                return Err(DataError::UnknownStyle(fields[2].to_string()));
            };
            let mut source = vocab.tokenize(fields[0]);
            let mut reference = vocab.tokenize(fields[1]);
            source.truncate(max_len);
            reference.truncate(max_len);
            if source.is_empty() || reference.is_empty() {
                return Err(DataError::MalformedTestPair {
                    path: test_path.clone(),
                    line: i + 1,
                });
            }
            pairs.push(TestPair {
                source,
                reference,
                source_style,
            });
        }
        Some(pairs)
    } else {
        None
    };

    let (support_a, query_a) = split_side(train_a.len(), support_fraction, seed, &task_id, "a");
    let (support_b, query_b) = split_side(train_b.len(), support_fraction, seed, &task_id, "b");

    Ok(StyleTask {
        task_id,
        style_a,
        style_b,
        train_a,
        train_b,
        support_fraction,
        support_a,
        query_a,
        support_b,
        query_b,
        test_pairs,
    })
}

/// Loads every task directory under `root`, sorted by task id.
pub fn load_dataset(
    root: &Path,
    vocab: &Vocabulary,
    support_fraction: f64,
    seed: u64,
) -> Result<Vec<StyleTask>, DataError> {
    load_dataset_with(root, vocab, support_fraction, seed, DEFAULT_MAX_SEQ_LEN)
}

pub fn load_dataset_with(
    root: &Path,
    vocab: &Vocabulary,
    support_fraction: f64,
    seed: u64,
    max_len: usize,
) -> Result<Vec<StyleTask>, DataError> {
    let mut dirs: Vec<std::path::PathBuf> = fs::read_dir(root)
        .map_err(|source| DataError::Io {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut tasks = Vec::new();
    for dir in dirs {
        tasks.push(load_task_dir_with(&dir, vocab, support_fraction, seed, max_len)?);
    }
    if tasks.is_empty() {
        return Err(DataError::EmptyCorpus(format!(
            "{} contains no task directories",
            root.display()
        )));
    }
    Ok(tasks)
}

/// The train-side text files of every task under `root`, for vocabulary
/// construction. Sorted for determinism.
pub fn dataset_text_files(root: &Path) -> Result<Vec<std::path::PathBuf>, DataError> {
    let mut files = Vec::new();
    let mut dirs: Vec<std::path::PathBuf> = fs::read_dir(root)
        .map_err(|source| DataError::Io {
            path: root.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        for name in ["a.train.txt", "b.train.txt"] {
            let p = dir.join(name);
            if p.exists() {
                files.push(p);
            }
        }
    }
    Ok(files)
}
