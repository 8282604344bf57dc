//! Soft-margin SVM trained by SMO on the dual
//! `min_a 1/2 a'Qa - e'a  s.t.  0 <= a_i <= C, y'a = 0`, `Q_ij = y_i y_j K(x_i, x_j)`.
//! Working pairs are chosen by the maximal-violating-pair rule; training stops
//! when the violation `m(a) - M(a)` drops below the KKT tolerance.

use serde::{Deserialize, Serialize};

use super::{Matrix, ModelError, Standardizer};
use crate::scalar::Scalar;

pub const KKT_TOL: f64 = 1e-3;
const TAU: f64 = 1e-12;
/// Above this many rows the kernel matrix is computed on demand instead of cached.
const CACHE_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf,
}

impl Kernel {
    pub fn eval<T: Scalar>(self, gamma: T, u: &[T], v: &[T]) -> T {
        match self {
            Kernel::Linear => u.iter().zip(v).map(|(&a, &b)| a * b).sum(),
            Kernel::Rbf => {
                let d2: T = u.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel<T> {
    pub kernel: Kernel,
    pub gamma: T,
    pub standardizer: Standardizer<T>,
    /// Standardized support vectors.
    pub support: Vec<Vec<T>>,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<T>,
    pub bias: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Scalar> SvmModel<T> {
    /// `sum_i alpha_i y_i K(x_i, x) + b`.
    pub fn decision_row(&self, row: &[T]) -> T {
        let mut z = Vec::with_capacity(row.len());
        self.standardizer.transform_row(row, &mut z);
        self.support
            .iter()
            .zip(&self.coef)
            .map(|(sv, &c)| c * self.kernel.eval(self.gamma, sv, &z))
            .sum::<T>()
            + self.bias
    }

    /// Primal weights in standardized space for the linear kernel.
    pub fn linear_weights(&self) -> Option<Vec<T>> {
        if self.kernel != Kernel::Linear {
            return None;
        }
        let d = self.standardizer.mean.len();
        let mut w = vec![T::zero(); d];
        for (sv, &c) in self.support.iter().zip(&self.coef) {
            for (wj, &v) in w.iter_mut().zip(sv) {
                *wj += c * v;
            }
        }
        Some(w)
    }
}

fn sign<T: Scalar>(y: bool) -> T {
    if y {
        T::one()
    } else {
        -T::one()
    }
}

struct KernelRows<'a, T> {
    z: &'a Matrix<T>,
    kernel: Kernel,
    gamma: T,
    cache: Option<Vec<T>>,
}

impl<T: Scalar> KernelRows<'_, T> {
    fn k(&self, i: usize, j: usize) -> T {
        match &self.cache {
            Some(c) => c[i * self.z.n_rows() + j],
            None => self.kernel.eval(self.gamma, self.z.row(i), self.z.row(j)),
        }
    }
}

/// Dual objective `1/2 a'Qa - sum a` for standardized inputs `z`.
pub fn dual_objective<T: Scalar>(
    z: &Matrix<T>,
    y: &[bool],
    kernel: Kernel,
    gamma: T,
    alpha: &[T],
) -> T {
    let n = z.n_rows();
    let mut quad = T::zero();
    for i in 0..n {
        if alpha[i] == T::zero() {
            continue;
        }
        for j in 0..n {
            if alpha[j] == T::zero() {
                continue;
            }
            quad += alpha[i]
                * alpha[j]
                * sign::<T>(y[i])
                * sign::<T>(y[j])
                * kernel.eval(gamma, z.row(i), z.row(j));
        }
    }
    T::of(0.5) * quad - alpha.iter().copied().sum::<T>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution<T> {
    pub alpha: Vec<T>,
    pub bias: T,
    pub converged: bool,
    pub iterations: usize,
}

/// Solve the dual on already-standardized inputs.
pub fn solve_dual<T: Scalar>(
    z: &Matrix<T>,
    y: &[bool],
    kernel: Kernel,
    c: T,
    gamma: T,
    max_iter: usize,
) -> DualSolution<T> {
    let n = z.n_rows();
    let cache = (n <= CACHE_ROWS).then(|| {
        let mut k = vec![T::zero(); n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(gamma, z.row(i), z.row(j));
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    });
    let kr = KernelRows {
        z,
        kernel,
        gamma,
        cache,
    };
    let ys: Vec<T> = y.iter().map(|&b| sign(b)).collect();
    let q = |i: usize, j: usize| ys[i] * ys[j] * kr.k(i, j);
    let tol = T::of(KKT_TOL);
    let tau = T::of(TAU);

    let mut alpha = vec![T::zero(); n];
    let mut grad = vec![-T::one(); n];
    let in_up = |a: T, yi: T| (yi > T::zero() && a < c) || (yi < T::zero() && a > T::zero());
    let in_low = |a: T, yi: T| (yi > T::zero() && a > T::zero()) || (yi < T::zero() && a < c);

    let mut iter = 0;
    let mut converged = false;
    while iter < max_iter {
        let (mut gmax, mut i) = (-T::infinity(), usize::MAX);
        let (mut gmin, mut j) = (T::infinity(), usize::MAX);
        for t in 0..n {
            let v = -ys[t] * grad[t];
            if in_up(alpha[t], ys[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(alpha[t], ys[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            converged = true;
            break;
        }
        iter += 1;

        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let qij = q(i, j);
        let (qii, qjj) = (q(i, i), q(j, j));
        let (mut ai, mut aj) = (ai_old, aj_old);
        if ys[i] != ys[j] {
            let mut quad = qii + qjj + T::of(2.0) * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > T::zero() {
                if aj < T::zero() {
                    aj = T::zero();
                    ai = diff;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = -diff;
            }
            if diff > T::zero() {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - T::of(2.0) * qij;
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < T::zero() {
                aj = T::zero();
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < T::zero() {
                ai = T::zero();
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - ai_old, aj - aj_old);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(t, i) * di + q(t, j) * dj;
        }
    }

    // rho: mean of y_i G_i over free alphas, else midpoint of the feasible interval
    let (mut ub, mut lb) = (T::infinity(), -T::infinity());
    let (mut free, mut sum_free) = (0usize, T::zero());
    for t in 0..n {
        let yg = ys[t] * grad[t];
        if alpha[t] >= c {
            if ys[t] < T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= T::zero() {
            if ys[t] > T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / T::of_usize(free)
    } else {
        (ub + lb) / T::of(2.0)
    };
    DualSolution {
        alpha,
        bias: -rho,
        converged,
        iterations: iter,
    }
}

pub fn fit_svm<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    kernel: Kernel,
    c: T,
    gamma: T,
    max_iter: usize,
) -> Result<SvmModel<T>, ModelError> {
    let standardizer = Standardizer::fit(x);
    let z = standardizer.transform(x);
    let DualSolution {
        alpha,
        bias,
        converged,
        iterations,
    } = solve_dual(&z, y, kernel, c, gamma, max_iter);
    if !bias.is_finite() || alpha.iter().any(|a| !a.is_finite()) {
        return Err(ModelError::NonFinite("svm training"));
    }
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (t, &a) in alpha.iter().enumerate() {
        if a > T::zero() {
            support.push(z.row(t).to_vec());
            coef.push(a * sign::<T>(y[t]));
        }
    }
    Ok(SvmModel {
        kernel,
        gamma,
        standardizer,
        support,
        coef,
        bias,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> Standardizer<f64> {
        Standardizer {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    #[test]
    fn no_support_vectors_constant_sign() {
        let m = SvmModel {
            kernel: Kernel::Rbf,
            gamma: 1.0,
            standardizer: identity(2),
            support: vec![vec![0.0, 0.0]],
            coef: vec![0.0],
            bias: 1.0,
            converged: true,
            iterations: 0,
        };
        for row in [[5.0, -3.0], [0.0, 0.0], [-100.0, 7.0]] {
            assert_eq!(m.decision_row(&row), 1.0);
        }
    }

    #[test]
    fn two_points_separated() {
        let x = Matrix::<f64>::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let y = [false, true];
        let m = fit_svm(&x, &y, Kernel::Linear, 10.0, 1.0, 1000).unwrap();
        assert!(m.converged);
        assert!(m.decision_row(&[-1.0]) < 0.0);
        assert!(m.decision_row(&[1.0]) > 0.0);
        // hard-margin solution on standardized +-1: alpha = 1/2 each, b = 0
        assert!((m.coef[0] + 0.5).abs() < 1e-9 && (m.coef[1] - 0.5).abs() < 1e-9);
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![f64::from(i % 7), f64::from(i % 5)])
            .collect();
        let y: Vec<bool> = (0..30).map(|i| (i * 7) % 3 == 0).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let m = fit_svm(&x, &y, Kernel::Rbf, 10.0, 0.5, 1).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 1);
    }
}
