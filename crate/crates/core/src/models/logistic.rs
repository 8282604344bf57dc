use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus, Matrix, ModelError, Standardizer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel<T> {
    pub standardizer: Standardizer<T>,
    pub intercept: T,
    pub coef: Vec<T>,
    /// Training objective after each epoch.
    pub loss_history: Vec<T>,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn predict_proba_row(&self, row: &[T]) -> T {
        let z = row
            .iter()
            .zip(&self.standardizer.mean)
            .zip(&self.standardizer.scale)
            .zip(&self.coef)
            .map(|(((&v, &m), &s), &b)| b * (v - m) / s)
            .sum::<T>();
        sigmoid(self.intercept + z)
    }
}

/// Mean negative log-likelihood plus `l2/2 * |coef|^2` (intercept unpenalized),
/// with its gradient `(d/d intercept, d/d coef)`.
pub fn logistic_objective<T: Scalar>(
    z: &Matrix<T>,
    y: &[bool],
    intercept: T,
    coef: &[T],
    l2: T,
) -> (T, T, Vec<T>) {
    let n = T::of_usize(z.n_rows());
    let mut loss = T::zero();
    let mut g0 = T::zero();
    let mut g = vec![T::zero(); coef.len()];
    for (row, &yi) in z.rows().zip(y) {
        let s = intercept + row.iter().zip(coef).map(|(&a, &b)| a * b).sum::<T>();
        let t = if yi { T::one() } else { T::zero() };
        loss += softplus(s) - t * s;
        let r = sigmoid(s) - t;
        g0 += r;
        for (gj, &a) in g.iter_mut().zip(row) {
            *gj += r * a;
        }
    }
    let half = T::of(0.5);
    loss = loss / n + half * l2 * coef.iter().map(|&b| b * b).sum::<T>();
    g0 /= n;
    for (gj, &b) in g.iter_mut().zip(coef) {
        *gj = *gj / n + l2 * b;
    }
    (loss, g0, g)
}

/// Full-batch gradient descent from zero on standardized features.
pub fn fit_logistic<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    lr: T,
    l2: T,
    epochs: usize,
) -> Result<LogisticModel<T>, ModelError> {
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let mut intercept = T::zero();
    let mut coef = vec![T::zero(); x.n_cols()];
    let mut loss_history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let (_, g0, g) = logistic_objective(&z, y, intercept, &coef, l2);
        intercept -= lr * g0;
        for (b, gj) in coef.iter_mut().zip(g) {
            *b -= lr * gj;
        }
        let (loss, _, _) = logistic_objective(&z, y, intercept, &coef, l2);
        if !loss.is_finite() || !intercept.is_finite() || coef.iter().any(|b| !b.is_finite()) {
            return Err(ModelError::NonFinite("logistic regression training"));
        }
        loss_history.push(loss);
    }
    Ok(LogisticModel {
        standardizer,
        intercept,
        coef,
        loss_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_coefficients_give_one_half() {
        let m = LogisticModel {
            standardizer: Standardizer {
                mean: vec![0.0; 3],
                scale: vec![1.0; 3],
            },
            intercept: 0.0,
            coef: vec![0.0; 3],
            loss_history: vec![],
        };
        for row in [[1.0, -4.0, 9.0], [0.0, 0.0, 0.0], [1e6, 2.0, -3.0]] {
            assert_eq!(m.predict_proba_row(&row), 0.5);
        }
    }

    #[test]
    fn separable_loss_monotone() {
        let xs: Vec<f64> = (-10..10).map(|i| f64::from(i) + 0.5).collect();
        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let y: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        let m = fit_logistic(&x, &y, 0.5, 0.01, 400).unwrap();
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert!((0..y.len()).all(|i| (m.predict_proba_row(x.row(i)) >= 0.5) == y[i]));
    }

    #[test]
    fn huge_step_reports_non_finite() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let y = [true, false, false, true];
        assert_eq!(
            fit_logistic(&x, &y, 1e308, 1e3, 50).unwrap_err(),
            ModelError::NonFinite("logistic regression training")
        );
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(
            data in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), any::<bool>()), 2..15),
            beta in prop::collection::vec(-1.5f64..1.5, 4),
            l2 in 0.0f64..1.0,
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|d| d.0.clone()).collect();
            let y: Vec<bool> = data.iter().map(|d| d.1).collect();
            let z = Matrix::from_rows(&rows).unwrap();
            let (_, g0, g) = logistic_objective(&z, &y, beta[0], &beta[1..], l2);
            let h = 1e-5;
            let f = |b: &[f64]| logistic_objective(&z, &y, b[0], &b[1..], l2).0;
            let analytic: Vec<f64> = std::iter::once(g0).chain(g).collect();
            for k in 0..4 {
                let mut up = beta.clone();
                let mut dn = beta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                prop_assert!((fd - analytic[k]).abs() <= 1e-6, "k={k} fd={fd} an={}", analytic[k]);
            }
        }
    }
}
