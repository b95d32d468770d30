//! Style/content embedding extraction and a flat CSV archive of the
//! resulting vectors, one style row and one content row per sentence.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::ParamSet;
use crate::corpus::Batch;
use crate::error::{MetricError, ModelError};
use crate::models::{CrossAlign, Vae, VaeEps};

const CHUNK: usize = 64;

/// Per-sentence style and content codes under one model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub style: Vec<Vec<f64>>,
    pub content: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_inputs(seqs: &[Vec<usize>], labels: &[u8]) -> Result<(), MetricError> {
    if seqs.is_empty() {
        return Err(MetricError::InvalidArgument(
            "embedding export needs at least one sentence".to_string(),
        ));
    }
    if seqs.len() != labels.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} sentences but {} labels",
            seqs.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(MetricError::InvalidArgument(
            "style labels must be 0 or 1".to_string(),
        ));
    }
    Ok(())
}

/// Mean-free encodings of the variational model: the style and content
/// posterior means per sentence.
pub fn vae_embeddings(
    model: &Vae,
    ps: &ParamSet,
    seqs: &[Vec<usize>],
    labels: &[u8],
) -> Result<EmbeddingTable, MetricError> {
    check_inputs(seqs, labels)?;
    let cfg = model.config();
    let mut style = Vec::with_capacity(seqs.len());
    let mut content = Vec::with_capacity(seqs.len());
    for (chunk, lbl) in seqs.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        let rows: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
        let batch = Batch::from_labeled(&rows, lbl);
        let eps = VaeEps::zeros(batch.len(), cfg.d_s, cfg.d_c);
        let code = model.encode_with_eps(ps, &batch, &eps)?;
        for i in 0..batch.len() {
            style.push(code.style_mu.row(i).to_vec());
            content.push(code.content_mu.row(i).to_vec());
        }
    }
    Ok(EmbeddingTable {
        style,
        content,
        labels: labels.to_vec(),
    })
}

/// Encodings of the adversarial model: content is the final encoder state
/// and style is that state joined with the sentence's own label embedding,
/// the last row of the code sequence the discriminators judge.
pub fn crossalign_embeddings(
    model: &CrossAlign,
    ps: &ParamSet,
    seqs: &[Vec<usize>],
    labels: &[u8],
) -> Result<EmbeddingTable, MetricError> {
    check_inputs(seqs, labels)?;
    let style_embed = ps
        .get("style_embed")
        .ok_or_else(|| ModelError::MissingParam("style_embed".to_string()))?
        .clone();
    let mut style = Vec::with_capacity(seqs.len());
    let mut content = Vec::with_capacity(seqs.len());
    for (chunk, lbl) in seqs.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        let rows: Vec<&[usize]> = chunk.iter().map(|s| s.as_slice()).collect();
        let batch = Batch::from_labeled(&rows, lbl);
        let z = model.encode(ps, &batch)?;
        for i in 0..batch.len() {
            let zi = z.row(i).to_vec();
            let mut si = zi.clone();
            si.extend(style_embed.row(lbl[i] as usize).iter());
            content.push(zi);
            style.push(si);
        }
    }
    Ok(EmbeddingTable {
        style,
        content,
        labels: labels.to_vec(),
    })
}

/// Writes the table as CSV: header `vector_kind,label,dim0..dimN` sized to
/// the widest kind, then a style row and a content row per sentence. Rows
/// of the narrower kind simply carry fewer value fields.
pub fn write_embeddings_csv(path: &Path, table: &EmbeddingTable) -> Result<(), MetricError> {
    if table.is_empty() {
        return Err(MetricError::InvalidArgument(
            "refusing to write an empty embedding table".to_string(),
        ));
    }
    let io_err =
        |e: std::io::Error| MetricError::InvalidArgument(format!("{}: {e}", path.display()));
    let width = table
        .style
        .iter()
        .chain(&table.content)
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    let mut out = String::from("vector_kind,label");
    for d in 0..width {
        out.push_str(&format!(",dim{d}"));
    }
    out.push('\n');
    for i in 0..table.len() {
        for (kind, values) in [("style", &table.style[i]), ("content", &table.content[i])] {
            out.push_str(kind);
            out.push(',');
            out.push_str(&table.labels[i].to_string());
            for v in values {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
    }
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(out.as_bytes()).map_err(io_err)?;
    Ok(())
}

/// Reads a table written by [`write_embeddings_csv`].
pub fn read_embeddings_csv(path: &Path) -> Result<EmbeddingTable, MetricError> {
    let bad = |msg: String| MetricError::InvalidArgument(format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("vector_kind,label") => {}
        _ => return Err(bad("missing embedding CSV header".to_string())),
    }
    let mut style: Vec<(u8, Vec<f64>)> = Vec::new();
    let mut content: Vec<(u8, Vec<f64>)> = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let kind = fields.next().unwrap_or_default();
        let label: u8 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("line {}: bad label", ln + 2)))?;
        let values = fields
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(format!("line {}: {e}", ln + 2)))?;
        match kind {
            "style" => style.push((label, values)),
            "content" => content.push((label, values)),
            other => return Err(bad(format!("line {}: unknown kind {other:?}", ln + 2))),
        }
    }
    if style.len() != content.len() {
        return Err(bad(format!(
            "{} style rows but {} content rows",
            style.len(),
            content.len()
        )));
    }
    if style
        .iter()
        .zip(&content)
        .any(|((ls, _), (lc, _))| ls != lc)
    {
        return Err(bad("style/content label columns disagree".to_string()));
    }
    Ok(EmbeddingTable {
        labels: style.iter().map(|(l, _)| *l).collect(),
        style: style.into_iter().map(|(_, v)| v).collect(),
        content: content.into_iter().map(|(_, v)| v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CrossAlignConfig, VaeConfig};

    fn sample_seqs() -> (Vec<Vec<usize>>, Vec<u8>) {
        (
            vec![vec![4, 5, 6, 7], vec![8, 9], vec![10, 11, 12], vec![5, 13]],
            vec![0, 1, 0, 1],
        )
    }

    #[test]
    fn vae_export_has_one_row_pair_per_sentence() {
        let model = Vae::new(VaeConfig {
            vocab: 20,
            embed_dim: 6,
            hidden: 8,
            d_s: 3,
            d_c: 5,
            adv_entropy_max: true,
        });
        let ps = model.init_params(3);
        let (seqs, labels) = sample_seqs();
        let t = vae_embeddings(&model, &ps, &seqs, &labels).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.style.iter().all(|v| v.len() == 3));
        assert!(t.content.iter().all(|v| v.len() == 5));
        let again = vae_embeddings(&model, &ps, &seqs, &labels).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn crossalign_export_joins_label_embedding() {
        let model = CrossAlign::new(CrossAlignConfig {
            vocab: 20,
            embed_dim: 6,
            hidden: 7,
            style_dim: 4,
            disc_filters: 3,
            disc_widths: vec![2],
        });
        let ps = model.init_params(3);
        let (seqs, labels) = sample_seqs();
        let t = crossalign_embeddings(&model, &ps, &seqs, &labels).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.content.iter().all(|v| v.len() == 7));
        assert!(t.style.iter().all(|v| v.len() == 11));
        let emb = ps.get("style_embed").unwrap();
        for i in 0..4 {
            assert_eq!(t.style[i][..7], t.content[i][..]);
            let lbl = labels[i] as usize;
            for (k, v) in t.style[i][7..].iter().enumerate() {
                assert_eq!(*v, emb[[lbl, k]]);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let model = Vae::new(VaeConfig {
            vocab: 20,
            embed_dim: 6,
            hidden: 8,
            d_s: 3,
            d_c: 5,
            adv_entropy_max: true,
        });
        let ps = model.init_params(9);
        let (seqs, labels) = sample_seqs();
        let t = vae_embeddings(&model, &ps, &seqs, &labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        write_embeddings_csv(&path, &t).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(header, "vector_kind,label,dim0,dim1,dim2,dim3,dim4");
        assert_eq!(text.lines().count(), 1 + 2 * t.len());

        let back = read_embeddings_csv(&path).unwrap();
        assert_eq!(back.labels, t.labels);
        for i in 0..t.len() {
            for (a, b) in t.style[i].iter().zip(&back.style[i]) {
                assert!((a - b).abs() < 1e-8);
            }
            for (a, b) in t.content[i].iter().zip(&back.content[i]) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn malformed_csv_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "nope\n").unwrap();
        assert!(read_embeddings_csv(&path).is_err());
        fs::write(&path, "vector_kind,label,dim0\nstyle,0,1.0\n").unwrap();
        assert!(read_embeddings_csv(&path).is_err());
        fs::write(
            &path,
            "vector_kind,label,dim0\nstyle,0,1.0\ncontent,1,2.0\n",
        )
        .unwrap();
        assert!(read_embeddings_csv(&path).is_err());
        fs::write(&path, "vector_kind,label,dim0\nwhat,0,1.0\n").unwrap();
        assert!(read_embeddings_csv(&path).is_err());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let model = Vae::new(VaeConfig {
            vocab: 10,
            embed_dim: 4,
            hidden: 4,
            d_s: 2,
            d_c: 2,
            adv_entropy_max: true,
        });
        let ps = model.init_params(0);
        assert!(vae_embeddings(&model, &ps, &[], &[]).is_err());
        assert!(vae_embeddings(&model, &ps, &[vec![4]], &[0, 1]).is_err());
        assert!(vae_embeddings(&model, &ps, &[vec![4]], &[7]).is_err());
    }
}
