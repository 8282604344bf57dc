//! Six binary classifiers behind one train/predict interface.
//!
//! Labels are `bool` with `true` the positive class. Every tie in a vote,
//! leaf majority or decision value resolves to the negative class. Linear
//! models and the SVM standardize features with training-split moments;
//! tree models consume raw features.

mod adaboost;
mod boosting;
mod forest;
mod logistic;
mod matrix;
mod svm;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adaboost::{adaboost_alpha, fit_adaboost, AdaBoostModel, Stage, EPS_MIN};
pub use boosting::{fit_gradient_boosting, GbModel};
pub use forest::{fit_random_forest, ForestModel};
pub use logistic::{fit_logistic, logistic_objective, LogisticModel};
pub use matrix::{Matrix, Standardizer};
pub use svm::{dual_objective, fit_svm, solve_dual, DualSolution, Kernel, SvmModel, KKT_TOL};
pub use tree::{entropy, information_gain, Tree};

use crate::scalar::Scalar;

pub const MODEL_SCHEMA: &str = "wearscreen-model";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyData,
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("model file: {0}")]
    Serde(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Dt,
    Lr,
    Rf,
    Svm,
    Gb,
    Adaboost,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Dt,
        Family::Lr,
        Family::Rf,
        Family::Svm,
        Family::Gb,
        Family::Adaboost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Dt => "dt",
            Family::Lr => "lr",
            Family::Rf => "rf",
            Family::Svm => "svm",
            Family::Gb => "gb",
            Family::Adaboost => "adaboost",
        }
    }

    pub fn is_tree_based(self) -> bool {
        matches!(
            self,
            Family::Dt | Family::Rf | Family::Gb | Family::Adaboost
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

fn default_max_iter() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparams {
    Dt {
        max_depth: usize,
        min_samples_split: usize,
    },
    Lr {
        learning_rate: f64,
        l2_lambda: f64,
        epochs: usize,
    },
    Rf {
        n_trees: usize,
        max_depth: usize,
        feature_subsample_fraction: f64,
        bootstrap: bool,
    },
    Svm {
        kernel: Kernel,
        c: f64,
        gamma: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
    Gb {
        n_trees: usize,
        learning_rate: f64,
        max_depth: usize,
    },
    Adaboost {
        n_rounds: usize,
        stump_depth: usize,
    },
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Dt { .. } => Family::Dt,
            Hyperparams::Lr { .. } => Family::Lr,
            Hyperparams::Rf { .. } => Family::Rf,
            Hyperparams::Svm { .. } => Family::Svm,
            Hyperparams::Gb { .. } => Family::Gb,
            Hyperparams::Adaboost { .. } => Family::Adaboost,
        }
    }

    /// Moderate settings used when tuning is disabled.
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Dt => Hyperparams::Dt {
                max_depth: 4,
                min_samples_split: 2,
            },
            Family::Lr => Hyperparams::Lr {
                learning_rate: 0.1,
                l2_lambda: 0.01,
                epochs: 300,
            },
            Family::Rf => Hyperparams::Rf {
                n_trees: 100,
                max_depth: 8,
                feature_subsample_fraction: 0.3,
                bootstrap: true,
            },
            Family::Svm => Hyperparams::Svm {
                kernel: Kernel::Rbf,
                c: 1.0,
                gamma: 0.1,
                max_iter: default_max_iter(),
            },
            Family::Gb => Hyperparams::Gb {
                n_trees: 100,
                learning_rate: 0.1,
                max_depth: 3,
            },
            Family::Adaboost => Hyperparams::Adaboost {
                n_rounds: 100,
                stump_depth: 1,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidHyperparams(m.to_string()));
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Hyperparams::Dt {
                max_depth,
                min_samples_split,
            } if max_depth == 0 || min_samples_split == 0 => {
                bad("dt depth and min_samples_split must be positive")
            }
            Hyperparams::Lr {
                learning_rate,
                l2_lambda,
                epochs,
            } if !pos(learning_rate)
                || !(l2_lambda.is_finite() && l2_lambda >= 0.0)
                || epochs == 0 =>
            {
                bad("lr needs positive learning_rate and epochs, non-negative l2_lambda")
            }
            Hyperparams::Rf {
                n_trees,
                max_depth,
                feature_subsample_fraction: f,
                ..
            } if n_trees == 0 || max_depth == 0 || !(f > 0.0 && f <= 1.0) => {
                bad("rf needs positive n_trees and depth, fraction in (0,1]")
            }
            Hyperparams::Svm {
                c, gamma, max_iter, ..
            } if !pos(c) || !pos(gamma) || max_iter == 0 => {
                bad("svm needs positive C, gamma and max_iter")
            }
            Hyperparams::Gb {
                n_trees,
                learning_rate,
                max_depth,
            } if n_trees == 0 || !pos(learning_rate) || max_depth == 0 => {
                bad("gb needs positive n_trees, learning_rate and depth")
            }
            Hyperparams::Adaboost {
                n_rounds,
                stump_depth,
            } if n_rounds == 0 || stump_depth == 0 => {
                bad("adaboost needs positive n_rounds and stump_depth")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ModelParams<T> {
    /// Single-class training data.
    Constant {
        positive: bool,
    },
    Tree(Tree<T>),
    Logistic(LogisticModel<T>),
    Forest(ForestModel<T>),
    Svm(SvmModel<T>),
    Boosting(GbModel<T>),
    AdaBoost(AdaBoostModel<T>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<T> {
    pub family: Family,
    pub hyperparams: Hyperparams,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub params: ModelParams<T>,
    /// Non-fatal training notes such as SVM non-convergence.
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Hard labels plus a family-specific score: probability (LR, GB), margin
/// (SVM, AdaBoost) or positive fraction (RF votes, DT leaf purity).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub labels: Vec<bool>,
    pub scores: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile<T> {
    schema: String,
    version: u32,
    model: TrainedModel<T>,
}

pub fn train<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    feature_names: &[String],
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainedModel<T>, ModelError> {
    hp.validate()?;
    if x.n_rows() == 0 {
        return Err(ModelError::EmptyData);
    }
    if y.len() != x.n_rows() {
        return Err(ModelError::LengthMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if !feature_names.is_empty() && feature_names.len() != x.n_cols() {
        return Err(ModelError::DimensionMismatch {
            expected: x.n_cols(),
            got: feature_names.len(),
        });
    }
    if !x.is_finite() {
        return Err(ModelError::NonFinite("training features"));
    }
    let feature_names = if feature_names.is_empty() {
        (0..x.n_cols()).map(|j| format!("f{j}")).collect()
    } else {
        feature_names.to_vec()
    };
    let mut warnings = Vec::new();
    let n_pos = y.iter().filter(|&&b| b).count();
    let params = if n_pos == 0 || n_pos == y.len() {
        ModelParams::Constant {
            positive: n_pos > 0,
        }
    } else {
        match *hp {
            Hyperparams::Dt {
                max_depth,
                min_samples_split,
            } => {
                let w = vec![T::one(); y.len()];
                let idx: Vec<usize> = (0..y.len()).collect();
                let p = tree::GrowParams {
                    max_depth,
                    min_samples_split,
                    max_features: None,
                };
                ModelParams::Tree(tree::fit_classification(x, y, &w, &idx, p, None))
            }
            Hyperparams::Lr {
                learning_rate,
                l2_lambda,
                epochs,
            } => ModelParams::Logistic(fit_logistic(
                x,
                y,
                T::of(learning_rate),
                T::of(l2_lambda),
                epochs,
            )?),
            Hyperparams::Rf {
                n_trees,
                max_depth,
                feature_subsample_fraction,
                bootstrap,
            } => ModelParams::Forest(fit_random_forest(
                x,
                y,
                n_trees,
                max_depth,
                feature_subsample_fraction,
                bootstrap,
                seed,
            )),
            Hyperparams::Svm {
                kernel,
                c,
                gamma,
                max_iter,
            } => {
                let m = fit_svm(x, y, kernel, T::of(c), T::of(gamma), max_iter)?;
                if !m.converged {
                    warnings.push(format!(
                        "svm stopped after {} iterations without meeting the KKT tolerance",
                        m.iterations
                    ));
                }
                ModelParams::Svm(m)
            }
            Hyperparams::Gb {
                n_trees,
                learning_rate,
                max_depth,
            } => ModelParams::Boosting(fit_gradient_boosting(
                x,
                y,
                n_trees,
                T::of(learning_rate),
                max_depth,
            )?),
            Hyperparams::Adaboost {
                n_rounds,
                stump_depth,
            } => ModelParams::AdaBoost(fit_adaboost(x, y, n_rounds, stump_depth)),
        }
    };
    Ok(TrainedModel {
        family: hp.family(),
        hyperparams: hp.clone(),
        feature_names,
        seed,
        params,
        warnings,
    })
}

impl<T: Scalar> TrainedModel<T> {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Prediction<T>, ModelError> {
        if x.n_cols() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: x.n_cols(),
            });
        }
        let (labels, scores) = x.rows().map(|r| self.predict_row(r)).unzip();
        Ok(Prediction { labels, scores })
    }

    fn predict_row(&self, row: &[T]) -> (bool, T) {
        match &self.params {
            ModelParams::Constant { positive } => {
                (*positive, if *positive { T::one() } else { T::zero() })
            }
            ModelParams::Tree(t) => {
                let (v, p) = t.leaf(row);
                (p, v)
            }
            ModelParams::Logistic(m) => {
                let p = m.predict_proba_row(row);
                (p >= T::of(0.5), p)
            }
            ModelParams::Forest(m) => m.predict_row(row),
            ModelParams::Svm(m) => {
                let f = m.decision_row(row);
                (f > T::zero(), f)
            }
            ModelParams::Boosting(m) => {
                let p = m.predict_proba_row(row);
                (p >= T::of(0.5), p)
            }
            ModelParams::AdaBoost(m) => {
                let f = m.margin_row(row);
                (f > T::zero(), f)
            }
        }
    }

    /// Per-feature importance normalized to unit sum, aligned with `feature_names`.
    /// Tree families use impurity decrease; linear models use absolute
    /// standardized coefficients; RBF SVMs have none.
    pub fn feature_importance(&self) -> Option<Vec<T>> {
        let d = self.n_features();
        let v = match &self.params {
            ModelParams::Constant { .. } => vec![T::zero(); d],
            ModelParams::Tree(t) => t.importance.clone(),
            ModelParams::Logistic(m) => m.coef.iter().map(|c| c.abs()).collect(),
            ModelParams::Forest(m) => m.importance(),
            ModelParams::Svm(m) => m.linear_weights()?.into_iter().map(|w| w.abs()).collect(),
            ModelParams::Boosting(m) => m.importance(),
            ModelParams::AdaBoost(m) => m.importance(),
        };
        Some(tree::normalize_importance(v))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| ModelError::Serde(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let file: ModelFile<T> =
            serde_json::from_str(s).map_err(|e| ModelError::Serde(e.to_string()))?;
        if file.schema != MODEL_SCHEMA || file.version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::Serde(format!(
                "unsupported schema {} v{}",
                file.schema, file.version
            )));
        }
        Ok(file.model)
    }
}

/// Logistic function with `sigmoid(-z) == 1 - sigmoid(z)` exactly: the
/// negative branch subtracts a value in `[0.5, 1]`, which is exact.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        T::one() - T::one() / (T::one() + z.exp())
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}
