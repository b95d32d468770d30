//! Ordered, named collections of trainable matrices.
//!
//! A [`ParamSet`] is the flat parameter representation every model exposes:
//! meta-learning clones it, applies SGD steps to it, and sums gradients over
//! it. Gradients reuse the same type, aligned name-for-name with a model's
//! parameters, with zero entries where no gradient flows.

use ndarray::Array2;
use std::collections::HashMap;

use crate::error::ModelError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a named matrix. Names must be unique; insertion order is the
    /// canonical order used for iteration and serialization.
    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name:?}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>, ModelError> {
        self.get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index.get(name).copied().map(|i| &mut self.entries[i].1)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.entries.iter_mut().map(|(n, v)| (n.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// A set with the same names and shapes, all zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = Self::new();
        for (name, value) in self.iter() {
            out.insert(name, Array2::zeros(value.dim()));
        }
        out
    }

    /// True when `other` has exactly the same names, order, and shapes.
    pub fn aligned_with(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((an, av), (bn, bv))| an == bn && av.dim() == bv.dim())
    }

    /// `self += alpha * other`, name-aligned.
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        assert!(
            self.aligned_with(other),
            "parameter sets are not name/shape aligned"
        );
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(other.entries.iter()) {
            a.scaled_add(alpha, b);
        }
    }

    /// Sum over all entries of the elementwise product; the flat dot product.
    pub fn dot(&self, other: &Self) -> f64 {
        assert!(
            self.aligned_with(other),
            "parameter sets are not name/shape aligned"
        );
        self.entries
            .iter()
            .zip(other.entries.iter())
            .map(|((_, a), (_, b))| (a * b).sum())
            .sum()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.entries.iter().map(|(_, a)| a.mapv(|x| x * x).sum()).sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, a) in self.entries.iter_mut() {
            a.mapv_inplace(|x| x * alpha);
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|(_, a)| a.len()).sum()
    }
}

impl FromIterator<(String, Array2<f64>)> for ParamSet {
    fn from_iter<T: IntoIterator<Item = (String, Array2<f64>)>>(iter: T) -> Self {
        let mut out = Self::new();
        for (name, value) in iter {
            out.insert(&name, value);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", array![[1.0, 2.0], [3.0, 4.0]]);
        p.insert("b", array![[0.5, -0.5]]);
        p
    }

    #[test]
    fn insertion_order_is_preserved() {
        let p = sample();
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["w", "b"]);
    }

    #[test]
    fn add_scaled_is_elementwise() {
        let mut p = sample();
        let g = sample();
        p.add_scaled(-0.5, &g);
        assert_eq!(p.get("w").unwrap(), &array![[0.5, 1.0], [1.5, 2.0]]);
        assert_eq!(p.get("b").unwrap(), &array![[0.25, -0.25]]);
    }

    #[test]
    fn zeros_like_aligns() {
        let p = sample();
        let z = p.zeros_like();
        assert!(p.aligned_with(&z));
        assert_eq!(z.l2_norm_sq(), 0.0);
    }

    #[test]
    fn dot_matches_flat_product() {
        let p = sample();
        assert!((p.dot(&p) - p.l2_norm_sq()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut p = sample();
        p.insert("w", array![[0.0]]);
    }
}
