use serde::{Deserialize, Serialize};

use super::tree::{fit_classification, normalize_importance, GrowParams, Tree};
use super::Matrix;
use crate::scalar::Scalar;

/// Floor on the weighted error when a round classifies every row correctly.
pub const EPS_MIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage<T> {
    pub alpha: T,
    pub tree: Tree<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel<T> {
    pub stages: Vec<Stage<T>>,
}

/// `1/2 ln((1 - eps) / eps)` with `eps` floored at `EPS_MIN`.
pub fn adaboost_alpha<T: Scalar>(eps: T) -> T {
    let e = eps.max(T::of(EPS_MIN));
    T::of(0.5) * ((T::one() - e) / e).ln()
}

fn pm<T: Scalar>(b: bool) -> T {
    if b {
        T::one()
    } else {
        -T::one()
    }
}

impl<T: Scalar> AdaBoostModel<T> {
    /// `sum_t alpha_t h_t(x)`; positive only when strictly above zero.
    pub fn margin_row(&self, row: &[T]) -> T {
        self.stages
            .iter()
            .map(|s| s.alpha * pm::<T>(s.tree.predict_row(row)))
            .sum()
    }

    pub fn importance(&self) -> Vec<T> {
        let d = self.stages.first().map_or(0, |s| s.tree.n_features);
        let mut acc = vec![T::zero(); d];
        for s in &self.stages {
            for (a, v) in acc
                .iter_mut()
                .zip(normalize_importance(s.tree.importance.clone()))
            {
                *a += s.alpha * v;
            }
        }
        acc
    }
}

/// Discrete AdaBoost. A round with weighted error at or above one half is
/// discarded and ends training; a perfect round is kept and ends training.
pub fn fit_adaboost<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    n_rounds: usize,
    stump_depth: usize,
) -> AdaBoostModel<T> {
    let n = y.len();
    let mut w = vec![T::one() / T::of_usize(n); n];
    let idx: Vec<usize> = (0..n).collect();
    let params = GrowParams {
        max_depth: stump_depth,
        min_samples_split: 2,
        max_features: None,
    };
    let mut stages = Vec::new();
    for _ in 0..n_rounds {
        let tree = fit_classification(x, y, &w, &idx, params, None);
        let h: Vec<bool> = (0..n).map(|i| tree.predict_row(x.row(i))).collect();
        let eps: T = (0..n).filter(|&i| h[i] != y[i]).map(|i| w[i]).sum();
        if eps >= T::of(0.5) {
            break;
        }
        let alpha = adaboost_alpha(eps);
        stages.push(Stage { alpha, tree });
        if eps <= T::zero() {
            break;
        }
        for i in 0..n {
            w[i] *= (-alpha * pm::<T>(y[i]) * pm::<T>(h[i])).exp();
        }
        let z: T = w.iter().copied().sum();
        w.iter_mut().for_each(|v| *v /= z);
    }
    AdaBoostModel { stages }
}
