//! Synthetic style-pair task generator. Each task is a pair of nonparallel
//! training sides whose surface forms differ by one controlled
//! transformation, plus an exactly parallel test set produced by applying
//! the transformation to held-out sentences. Trees are byte-identical given
//! the same spec and seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::rng::substream;

/// Style transformation applied between the two sides of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleKind {
    /// Each side sprinkles its own task-specific marker words; the sides
    /// are related by a marker bijection.
    LexiconSwap,
    /// Side b carries a task-specific suffix token.
    AffixMarker,
    /// Side b replaces a fixed set of common words with task-specific
    /// synonyms.
    SynonymTable,
}

/// Deterministic recipe for one dataset of synthetic tasks.
///
/// `vocab_size` counts the shared content words; marker and synonym tokens
/// are task-specific and add roughly `2 * MARKERS_PER_SIDE * n_tasks` more
/// surface forms on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub kind: StyleKind,
    pub vocab_size: usize,
    pub sentences_per_side: usize,
    pub len_range: (usize, usize),
    pub test_pairs: usize,
    pub seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.vocab_size < 24 {
            return Err(DataError::EmptyCorpus(
                "synthetic vocab must have at least 24 content words".to_string(),
            ));
        }
        if self.sentences_per_side == 0 {
            return Err(DataError::EmptyCorpus(
                "sentences_per_side must be positive".to_string(),
            ));
        }
        let (lo, hi) = self.len_range;
        if lo < 1 || hi < lo {
            return Err(DataError::EmptyCorpus(format!(
                "invalid sentence length range {lo}..={hi}"
            )));
        }
        Ok(())
    }
}

pub const MARKERS_PER_SIDE: usize = 6;
const SYNONYM_WORDS: usize = 12;
const RARE_PER_SIDE: usize = 5;

/// One generated task, before any file is written.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedTask {
    pub name: String,
    pub style_a: String,
    pub style_b: String,
    pub a_train: Vec<String>,
    pub b_train: Vec<String>,
    /// `(source, reference, source_style)` rows.
    pub test: Vec<(String, String, String)>,
}

fn content_word(i: usize) -> String {
    format!("w{i:03}")
}

fn marker(task: usize, side: char, i: usize) -> String {
    format!("s{task}{side}{i}")
}

fn synonym(task: usize, i: usize) -> String {
    format!("y{task}x{i}")
}

/// Skewed content-word draw so the corpus has a frequent head and a long
/// tail, like natural text.
fn draw_content(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.gen();
    ((u * u) * n as f64) as usize % n
}

fn draw_sentence(rng: &mut ChaCha8Rng, spec: &SyntheticTaskSpec) -> Vec<String> {
    let (lo, hi) = spec.len_range;
    let len = rng.gen_range(lo..=hi);
    (0..len)
        .map(|_| content_word(draw_content(rng, spec.vocab_size)))
        .collect()
}

/// Replaces `1 + len/5` positions with markers from the given side set.
fn plant_markers(rng: &mut ChaCha8Rng, words: &mut [String], task: usize, side: char) {
    let n = 1 + words.len() / 5;
    for _ in 0..n {
        let pos = rng.gen_range(0..words.len());
        let m = rng.gen_range(0..MARKERS_PER_SIDE);
        words[pos] = marker(task, side, m);
    }
}

fn swap_markers(words: &[String], task: usize, from: char, to: char) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            for i in 0..MARKERS_PER_SIDE {
                if *w == marker(task, from, i) {
                    return marker(task, to, i);
                }
            }
            w.clone()
        })
        .collect()
}

/// The synonym table maps frequent content words (ranks 4..) onto
/// task-specific alternates.
fn synonym_base(i: usize) -> String {
    content_word(4 + i)
}

fn apply_synonyms(words: &[String], task: usize, forward: bool) -> Vec<String> {
    words
        .iter()
        .map(|w| {
            for i in 0..SYNONYM_WORDS {
                let (from, to) = if forward {
                    (synonym_base(i), synonym(task, i))
                } else {
                    (synonym(task, i), synonym_base(i))
                };
                if *w == from {
                    return to;
                }
            }
            w.clone()
        })
        .collect()
}

fn ensure_synonym_site(rng: &mut ChaCha8Rng, words: &mut [String]) {
    let hit = words
        .iter()
        .any(|w| (0..SYNONYM_WORDS).any(|i| *w == synonym_base(i)));
    if !hit {
        let pos = rng.gen_range(0..words.len());
        words[pos] = synonym_base(rng.gen_range(0..SYNONYM_WORDS));
    }
}

fn suffix_token(task: usize) -> String {
    format!("s{task}fx")
}

/// Draws one sentence already rendered in the given side's style.
fn styled_sentence(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticTaskSpec,
    task: usize,
    side: char,
) -> Vec<String> {
    let mut words = draw_sentence(rng, spec);
    match spec.kind {
        StyleKind::LexiconSwap => plant_markers(rng, &mut words, task, side),
        StyleKind::AffixMarker => {
            if side == 'b' {
                words.push(suffix_token(task));
            }
        }
        StyleKind::SynonymTable => {
            ensure_synonym_site(rng, &mut words);
            if side == 'b' {
                words = apply_synonyms(&words, task, true);
            }
        }
    }
    words
}

/// Rewrites a sentence into the opposite side's style; the parallel test
/// reference.
fn transform(spec: &SyntheticTaskSpec, task: usize, words: &[String], from: char) -> Vec<String> {
    match spec.kind {
        StyleKind::LexiconSwap => {
            let to = if from == 'a' { 'b' } else { 'a' };
            swap_markers(words, task, from, to)
        }
        StyleKind::AffixMarker => {
            if from == 'a' {
                let mut out = words.to_vec();
                out.push(suffix_token(task));
                out
            } else {
                words[..words.len() - 1].to_vec()
            }
        }
        StyleKind::SynonymTable => apply_synonyms(words, task, from == 'a'),
    }
}

/// Plants a handful of one-off rare tokens so a frequency-cutoff vocabulary
/// maps something to the unknown token and downstream language models see
/// it during training.
fn plant_rare(rng: &mut ChaCha8Rng, lines: &mut [Vec<String>], task: usize, side: char) {
    let n = RARE_PER_SIDE.min(lines.len());
    for j in 0..n {
        let li = rng.gen_range(0..lines.len());
        let line = &mut lines[li];
        let pos = rng.gen_range(0..=line.len());
        line.insert(pos, format!("r{task}{side}{j}"));
    }
}

pub fn task_name(idx: usize) -> String {
    format!("task{idx:02}")
}

/// Generates one task's sides and parallel test pairs in memory.
pub fn generate_task(spec: &SyntheticTaskSpec, idx: usize) -> Result<GeneratedTask, DataError> {
    spec.validate()?;
    let side = |side: char| {
        let mut rng = substream(spec.seed, &["synth", &task_name(idx), &side.to_string()]);
        let mut lines: Vec<Vec<String>> = (0..spec.sentences_per_side)
            .map(|_| styled_sentence(&mut rng, spec, idx, side))
            .collect();
        plant_rare(&mut rng, &mut lines, idx, side);
        lines
            .into_iter()
            .map(|w| w.join(" "))
            .collect::<Vec<String>>()
    };
    let a_train = side('a');
    let b_train = side('b');

    let mut rng = substream(spec.seed, &["synth", &task_name(idx), "test"]);
    let mut test = Vec::with_capacity(spec.test_pairs);
    for i in 0..spec.test_pairs {
        let from = if i % 2 == 0 { 'a' } else { 'b' };
        let src = styled_sentence(&mut rng, spec, idx, from);
        let reference = transform(spec, idx, &src, from);
        test.push((
            src.join(" "),
            reference.join(" "),
            from.to_string(),
        ));
    }
    Ok(GeneratedTask {
        name: task_name(idx),
        style_a: "a".to_string(),
        style_b: "b".to_string(),
        a_train,
        b_train,
        test,
    })
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    for line in lines {
        writeln!(f, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Writes `n_tasks` task directories under `root` in the corpus layout:
/// `a.train.txt`, `b.train.txt`, `meta.json`, and `test.tsv` per task.
pub fn write_dataset(
    spec: &SyntheticTaskSpec,
    n_tasks: usize,
    root: &Path,
) -> Result<(), DataError> {
    spec.validate()?;
    if n_tasks == 0 {
        return Err(DataError::EmptyCorpus(
            "a dataset needs at least one task".to_string(),
        ));
    }
    for idx in 0..n_tasks {
        let task = generate_task(spec, idx)?;
        let dir = root.join(&task.name);
        fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        write_lines(&dir.join("a.train.txt"), &task.a_train)?;
        write_lines(&dir.join("b.train.txt"), &task.b_train)?;
        let meta = format!(
            "{{\"style_a\": \"{}\", \"style_b\": \"{}\"}}",
            task.style_a, task.style_b
        );
        write_lines(&dir.join("meta.json"), &[meta])?;
        let rows: Vec<String> = task
            .test
            .iter()
            .map(|(s, r, st)| format!("{s}\t{r}\t{st}"))
            .collect();
        write_lines(&dir.join("test.tsv"), &rows)?;
    }
    Ok(())
}
