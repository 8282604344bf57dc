//! Gradient boosting on the log-odds scale.
//!
//! Each round fits a squared-error regression tree to the residuals `y - p`
//! and sets every leaf to `lr * sum(r) / (sum(p(1-p)) + eps)`. A leaf whose
//! step would raise its own training loss is halved until it does not, so the
//! training loss never increases across rounds.

use serde::{Deserialize, Serialize};

use super::tree::{fit_regression, normalize_importance, GrowParams, Node, Tree};
use super::{sigmoid, softplus, Matrix, ModelError};
use crate::scalar::Scalar;

const NEWTON_EPS: f64 = 1e-12;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbModel<T> {
    /// Prior log-odds.
    pub base_score: T,
    /// Leaf values already include the learning rate.
    pub trees: Vec<Tree<T>>,
    /// Mean training log-loss after the prior and after each round.
    pub loss_history: Vec<T>,
}

impl<T: Scalar> GbModel<T> {
    pub fn raw_score_row(&self, row: &[T]) -> T {
        self.base_score + self.trees.iter().map(|t| t.leaf(row).0).sum::<T>()
    }

    pub fn predict_proba_row(&self, row: &[T]) -> T {
        sigmoid(self.raw_score_row(row))
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

fn point_loss<T: Scalar>(score: T, y: bool) -> T {
    if y {
        softplus(-score)
    } else {
        softplus(score)
    }
}

pub fn fit_gradient_boosting<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    n_trees: usize,
    lr: T,
    max_depth: usize,
) -> Result<GbModel<T>, ModelError> {
    let n = y.len();
    let n_pos = y.iter().filter(|&&b| b).count();
    let base_score = T::of_usize(n_pos).ln() - T::of_usize(n - n_pos).ln();
    let target: Vec<T> = y
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let mut score = vec![base_score; n];
    let mean_loss = |s: &[T]| {
        s.iter()
            .zip(y)
            .map(|(&v, &yi)| point_loss(v, yi))
            .sum::<T>()
            / T::of_usize(n)
    };
    let mut loss_history = vec![mean_loss(&score)];
    let params = GrowParams {
        max_depth,
        min_samples_split: 2,
        max_features: None,
    };
    let eps = T::of(NEWTON_EPS);
    let mut trees = Vec::with_capacity(n_trees);

    for _ in 0..n_trees {
        let p: Vec<T> = score.iter().map(|&s| sigmoid(s)).collect();
        let resid: Vec<T> = target.iter().zip(&p).map(|(&t, &pi)| t - pi).collect();
        let mut leaf_rule = |idx: &[usize]| {
            let g: T = idx.iter().map(|&i| resid[i]).sum();
            let h: T = idx.iter().map(|&i| p[i] * (T::one() - p[i])).sum();
            let mut v = lr * g / (h + eps);
            let before: T = idx.iter().map(|&i| point_loss(score[i], y[i])).sum();
            for _ in 0..MAX_HALVINGS {
                let after: T = idx.iter().map(|&i| point_loss(score[i] + v, y[i])).sum();
                if after <= before {
                    return v;
                }
                v /= T::of(2.0);
            }
            T::zero()
        };
        let tree = fit_regression(x, &resid, params, &mut leaf_rule);
        for (i, s) in score.iter_mut().enumerate() {
            *s += tree.leaf(x.row(i)).0;
        }
        let loss = mean_loss(&score);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite("gradient boosting training"));
        }
        loss_history.push(loss);
        trees.push(tree);
        if tree_is_null(trees.last().expect("just pushed")) {
            break;
        }
    }
    Ok(GbModel {
        base_score,
        trees,
        loss_history,
    })
}

/// A round that moved no score cannot be followed by a different one.
fn tree_is_null<T: Scalar>(t: &Tree<T>) -> bool {
    t.nodes.iter().all(|n| {
        matches!(n, Node::Leaf { value, .. } if *value == T::zero())
            || matches!(n, Node::Split { .. })
    })
}
