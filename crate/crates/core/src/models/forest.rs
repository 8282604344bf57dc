use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification, normalize_importance, GrowParams, Tree};
use super::Matrix;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    pub trees: Vec<Tree<T>>,
}

impl<T: Scalar> ForestModel<T> {
    /// Majority vote (ties negative) and the positive vote fraction.
    pub fn predict_row(&self, row: &[T]) -> (bool, T) {
        let pos = self.trees.iter().filter(|t| t.predict_row(row)).count();
        (
            2 * pos > self.trees.len(),
            T::of_usize(pos) / T::of_usize(self.trees.len()),
        )
    }

    pub fn importance(&self) -> Vec<T> {
        let d = self.trees.first().map_or(0, |t| t.n_features);
        let mut acc = vec![T::zero(); d];
        for t in &self.trees {
            for (a, v) in acc
                .iter_mut()
                .zip(normalize_importance(t.importance.clone()))
            {
                *a += v;
            }
        }
        acc
    }
}

/// Features examined per split: `ceil(fraction * d)`, at least one.
pub fn features_per_split(fraction: f64, d: usize) -> usize {
    ((fraction * d as f64).ceil() as usize).clamp(1, d.max(1))
}

/// Tree `t` draws from its own stream seeded by `derive_index(seed, t)`.
pub fn fit_random_forest<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    n_trees: usize,
    max_depth: usize,
    fraction: f64,
    bootstrap: bool,
    seed: u64,
) -> ForestModel<T> {
    let n = x.n_rows();
    let w = vec![T::one(); n];
    let params = GrowParams {
        max_depth,
        min_samples_split: 2,
        max_features: Some(features_per_split(fraction, x.n_cols())),
    };
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng = seed::rng(seed::derive_index(seed, t as u64));
            let idx: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_classification(x, y, &w, &idx, params, Some(&mut rng))
        })
        .collect();
    ForestModel { trees }
}
