//! Mean silhouette coefficient over labeled embedding vectors, the numeric
//! stand-in for eyeballing cluster separation in projection plots.

use crate::error::MetricError;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette with Euclidean distance, in [-1, 1]. Points alone in
/// their cluster score zero, as do points whose neighborhood collapses to
/// a single location; a corpus of fully identical vectors is rejected.
pub fn separation_score(vectors: &[Vec<f64>], labels: &[u8]) -> Result<f64, MetricError> {
    if vectors.is_empty() {
        return Err(MetricError::InvalidArgument(
            "separation score needs at least one vector".to_string(),
        ));
    }
    if vectors.len() != labels.len() {
        return Err(MetricError::InvalidArgument(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    let dim = vectors[0].len();
    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(MetricError::InvalidArgument(
            "vectors must share one nonzero dimension".to_string(),
        ));
    }
    let mut distinct_labels: Vec<u8> = labels.to_vec();
    distinct_labels.sort_unstable();
    distinct_labels.dedup();
    if distinct_labels.len() < 2 {
        return Err(MetricError::InvalidArgument(
            "silhouette needs at least two distinct labels".to_string(),
        ));
    }
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Err(MetricError::DegenerateGeometry);
    }

    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        let mut own_sum = 0.0;
        let mut own_n = 0usize;
        // per-label (sum, count) over the other clusters
        let mut other: Vec<(f64, usize)> = vec![(0.0, 0); distinct_labels.len()];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclidean(&vectors[i], &vectors[j]);
            if labels[j] == own {
                own_sum += d;
                own_n += 1;
            } else {
                let k = distinct_labels.iter().position(|&l| l == labels[j]).unwrap();
                other[k].0 += d;
                other[k].1 += 1;
            }
        }
        if own_n == 0 {
            continue;
        }
        let a = own_sum / own_n as f64;
        let b = other
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|(s, c)| s / *c as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(total / n as f64)
}
