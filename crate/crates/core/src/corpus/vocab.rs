//! Shared token vocabulary with reserved special ids.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::DataError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection. Ids 0..=3 are the specials; corpus tokens follow,
/// ordered by descending frequency with lexicographic tie-break, so equal
/// corpora always produce equal vocabularies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    /// Builds a vocabulary from token frequency counts.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize) -> Self {
        assert!(min_count >= 1, "min_count must be at least 1");
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(tok, &n)| n >= min_count && !SPECIALS.contains(&tok.as_str()))
            .map(|(tok, &n)| (tok, n))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(kept.into_iter().map(|(tok, _)| tok.clone()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, tok)| (tok.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
            min_count,
        }
    }

    /// Counts whitespace tokens across the given files and builds the
    /// vocabulary from the pooled counts.
    pub fn build(files: &[&Path], min_count: usize) -> Result<Self, DataError> {
        if files.is_empty() {
            return Err(DataError::EmptyCorpus("no input files".to_string()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for path in files {
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
            for tok in text.split_whitespace() {
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        Ok(Self::from_counts(&counts, min_count))
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    /// Maps whitespace tokens to ids, unknown tokens to UNK. No BOS/EOS are
    /// added; sequence framing belongs to batching.
    pub fn tokenize(&self, line: &str) -> Vec<usize> {
        line.split_whitespace()
            .map(|tok| self.id(tok).unwrap_or(UNK))
            .collect()
    }

    /// Joins tokens with single spaces, skipping PAD/BOS/EOS framing.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| id != PAD && id != BOS && id != EOS)
            .map(|&id| self.token(id))
            .collect();
        toks.join(" ")
    }

    /// One token per line, in id order (specials included).
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for tok in &self.id_to_token {
            out.push_str(tok);
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        file.write_all(out.as_bytes()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        // min_count is a construction parameter, not part of the mapping;
        // it is not serialized.
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
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
        let id_to_token: Vec<String> = text.lines().map(str::to_string).collect();
        if id_to_token.len() < SPECIALS.len()
            || SPECIALS
                .iter()
                .zip(&id_to_token)
                .any(|(a, b)| a != b)
        {
            return Err(DataError::EmptyCorpus(format!(
                "{} is not a vocabulary file (missing special tokens)",
                path.display()
            )));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, tok)| (tok.clone(), i))
            .collect();
        Ok(Self {
            token_to_id,
            id_to_token,
            min_count: 1,
        })
    }
}
