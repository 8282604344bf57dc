//! Axis-aligned binary trees shared by the tree families.
//!
//! Classification trees split on weighted entropy information gain (bits);
//! regression trees split on squared-error reduction and take leaf values from
//! a caller-supplied rule. Candidate thresholds are midpoints of consecutive
//! distinct values and rows with `x <= threshold` go left. Among equal gains the
//! first feature, then the lowest threshold, wins.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::scalar::{total_cmp, Scalar};

/// Shannon entropy in bits of (possibly weighted) class counts.
pub fn entropy<T: Scalar>(counts: &[T]) -> T {
    let total: T = counts.iter().copied().sum();
    if total <= T::zero() {
        return T::zero();
    }
    let h = counts
        .iter()
        .filter(|&&c| c > T::zero())
        .map(|&c| {
            let p = c / total;
            -(p * p.log2())
        })
        .sum::<T>();
    h.max(T::zero())
}

/// `H(Y) - sum_c (n_c/n) H(Y_c)` for the partition given by `goes_left`.
pub fn information_gain<T: Scalar>(labels: &[bool], goes_left: &[bool]) -> T {
    assert_eq!(
        labels.len(),
        goes_left.len(),
        "split must partition the labels"
    );
    let mut counts = [[T::zero(); 2]; 2];
    for (&y, &l) in labels.iter().zip(goes_left) {
        counts[usize::from(!l)][usize::from(y)] += T::one();
    }
    let n = T::of_usize(labels.len());
    let parent = entropy(&[counts[0][0] + counts[1][0], counts[0][1] + counts[1][1]]);
    let children = counts
        .iter()
        .map(|c| {
            let m = c[0] + c[1];
            if m > T::zero() {
                m / n * entropy(c)
            } else {
                T::zero()
            }
        })
        .sum::<T>();
    parent - children
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node<T> {
    /// `value` is the positive weight fraction (classification) or the leaf output (regression).
    Leaf { value: T, positive: bool },
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
    pub n_features: usize,
    /// Weighted impurity decrease per feature, unnormalized.
    pub importance: Vec<T>,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf_index(&self, row: &[T]) -> usize {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { .. } => return k,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    k = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn leaf(&self, row: &[T]) -> (T, bool) {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value, positive } => (value, positive),
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict_row(&self, row: &[T]) -> bool {
        self.leaf(row).1
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn has_tied_leaf(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Leaf { value, .. } if *value == T::of(0.5)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; `None` examines all in index order.
    pub max_features: Option<usize>,
}

fn min_gain<T: Scalar>() -> T {
    T::epsilon() * T::of(64.0)
}

/// Threshold between consecutive distinct sorted values `a < b`, guaranteed to keep `a` left and `b` right.
fn midpoint<T: Scalar>(a: T, b: T) -> T {
    let m = a + (b - a) / T::of(2.0);
    if m >= b || m < a {
        a
    } else {
        m
    }
}

fn candidate_features(
    n_features: usize,
    max_features: Option<usize>,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Vec<usize> {
    match (max_features, rng.as_deref_mut()) {
        (Some(k), Some(r)) if k < n_features => {
            let mut f = index::sample(r, n_features, k.max(1)).into_vec();
            f.sort_unstable();
            f
        }
        _ => (0..n_features).collect(),
    }
}

struct ClassGrower<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [bool],
    w: &'a [T],
    params: GrowParams,
    root_weight: T,
    tree: Tree<T>,
}

impl<T: Scalar> ClassGrower<'_, T> {
    fn grow(
        &mut self,
        idx: &mut [usize],
        depth: usize,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> usize {
        // positive and negative weight are summed separately so that flipping
        // every label swaps them exactly
        let pos: T = idx.iter().filter(|&&i| self.y[i]).map(|&i| self.w[i]).sum();
        let neg: T = idx
            .iter()
            .filter(|&&i| !self.y[i])
            .map(|&i| self.w[i])
            .sum();
        let total = pos + neg;
        let me = self.tree.nodes.len();
        let value = if total > T::zero() {
            pos / total
        } else {
            T::zero()
        };
        self.tree.nodes.push(Node::Leaf {
            value,
            positive: pos > neg,
        });

        if depth >= self.params.max_depth
            || idx.len() < self.params.min_samples_split.max(2)
            || pos <= T::zero()
            || neg <= T::zero()
        {
            return me;
        }

        let parent_h = entropy(&[pos, neg]);
        let mut best: Option<(T, usize, T)> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in candidate_features(self.x.n_cols(), self.params.max_features, rng) {
            order.sort_by(|&a, &b| total_cmp(&self.x.get(a, f), &self.x.get(b, f)));
            let (mut lp, mut ln) = (T::zero(), T::zero());
            for k in 0..order.len() - 1 {
                let i = order[k];
                if self.y[i] {
                    lp += self.w[i];
                } else {
                    ln += self.w[i];
                }
                let (a, b) = (self.x.get(i, f), self.x.get(order[k + 1], f));
                if a >= b {
                    continue;
                }
                let (rp, rn) = ((pos - lp).max(T::zero()), (neg - ln).max(T::zero()));
                let (lw, rw) = (lp + ln, rp + rn);
                if lw <= T::zero() || rw <= T::zero() {
                    continue;
                }
                let gain =
                    parent_h - lw / total * entropy(&[lp, ln]) - rw / total * entropy(&[rp, rn]);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, midpoint(a, b)));
                }
            }
        }

        let Some((gain, feature, threshold)) = best.filter(|b| b.0 > min_gain()) else {
            return me;
        };
        self.tree.importance[feature] += total / self.root_weight * gain;
        let split = partition(idx, |i| self.x.get(i, feature) <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.tree.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

/// Stable in-place partition; returns the count satisfying `pred`.
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let (mut yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| pred(i));
    let n = yes.len();
    yes.extend(no);
    idx.copy_from_slice(&yes);
    n
}

/// Grow a classification tree on the rows listed in `idx` (duplicates allowed) with sample weights `w`.
pub fn fit_classification<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    w: &[T],
    idx: &[usize],
    params: GrowParams,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Tree<T> {
    let mut idx = idx.to_vec();
    let root_weight: T = idx.iter().map(|&i| w[i]).sum();
    let mut g = ClassGrower {
        x,
        y,
        w,
        params,
        root_weight: if root_weight > T::zero() {
            root_weight
        } else {
            T::one()
        },
        tree: Tree {
            nodes: Vec::new(),
            n_features: x.n_cols(),
            importance: vec![T::zero(); x.n_cols()],
        },
    };
    g.grow(&mut idx, 0, &mut rng);
    g.tree
}

/// Grow a squared-error regression tree on targets `r`; leaves take `leaf_value(rows)`.
pub fn fit_regression<T: Scalar>(
    x: &Matrix<T>,
    r: &[T],
    params: GrowParams,
    leaf_value: &mut dyn FnMut(&[usize]) -> T,
) -> Tree<T> {
    #[allow(clippy::too_many_arguments)]
    fn grow<T: Scalar>(
        x: &Matrix<T>,
        r: &[T],
        params: GrowParams,
        leaf_value: &mut dyn FnMut(&[usize]) -> T,
        tree: &mut Tree<T>,
        idx: &mut [usize],
        depth: usize,
        root_n: T,
    ) -> usize {
        let me = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            value: T::zero(),
            positive: false,
        });
        let n = T::of_usize(idx.len());
        let sum: T = idx.iter().map(|&i| r[i]).sum();
        let mut best: Option<(T, usize, T)> = None;
        if depth < params.max_depth && idx.len() >= params.min_samples_split.max(2) {
            let base = sum * sum / n;
            let mut order = idx.to_vec();
            for f in 0..x.n_cols() {
                order.sort_by(|&a, &b| total_cmp(&x.get(a, f), &x.get(b, f)));
                let mut ls = T::zero();
                for k in 0..order.len() - 1 {
                    ls += r[order[k]];
                    let (a, b) = (x.get(order[k], f), x.get(order[k + 1], f));
                    if a >= b {
                        continue;
                    }
                    let nl = T::of_usize(k + 1);
                    let rs = sum - ls;
                    let gain = ls * ls / nl + rs * rs / (n - nl) - base;
                    if best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, f, midpoint(a, b)));
                    }
                }
            }
        }
        match best.filter(|b| b.0 > min_gain::<T>() * (T::one() + sum.abs())) {
            None => {
                let v = leaf_value(idx);
                tree.nodes[me] = Node::Leaf {
                    value: v,
                    positive: v > T::zero(),
                };
            }
            Some((gain, feature, threshold)) => {
                tree.importance[feature] += gain / root_n;
                let split = partition(idx, |i| x.get(i, feature) <= threshold);
                let (l, rr) = idx.split_at_mut(split);
                let left = grow(x, r, params, leaf_value, tree, l, depth + 1, root_n);
                let right = grow(x, r, params, leaf_value, tree, rr, depth + 1, root_n);
                tree.nodes[me] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
        }
        me
    }

    let mut tree = Tree {
        nodes: Vec::new(),
        n_features: x.n_cols(),
        importance: vec![T::zero(); x.n_cols()],
    };
    let mut idx: Vec<usize> = (0..x.n_rows()).collect();
    let root_n = T::of_usize(idx.len().max(1));
    grow(x, r, params, leaf_value, &mut tree, &mut idx, 0, root_n);
    tree
}

/// Normalize a non-negative importance vector to unit sum; all-zero becomes uniform.
pub fn normalize_importance<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let s: T = v.iter().copied().sum();
    if s > T::zero() {
        v.iter_mut().for_each(|x| *x /= s);
    } else if !v.is_empty() {
        let u = T::one() / T::of_usize(v.len());
        v.iter_mut().for_each(|x| *x = u);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FULL: GrowParams = GrowParams {
        max_depth: usize::MAX,
        min_samples_split: 2,
        max_features: None,
    };

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[3.0, 3.0]), 1.0);
        assert_eq!(entropy(&[6.0, 0.0]), 0.0);
        let h = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        assert!((entropy(&[1.0, 3.0]) - h).abs() < 1e-15);
        assert!((h - 0.8113).abs() < 1e-4);
    }

    #[test]
    fn information_gain_examples() {
        let y = [false, false, false, true, true, true];
        let perfect = [true, true, true, false, false, false];
        assert_eq!(information_gain::<f64>(&y, &perfect), 1.0);
        // both children keep the parent's 1:1 proportions
        let y4 = [false, true, false, true];
        let half = [true, true, false, false];
        assert_eq!(information_gain::<f64>(&y4, &[true; 4]), 0.0);
        assert!(information_gain::<f64>(&y4, &half).abs() < 1e-15);
    }

    #[test]
    fn midpoint_adjacent_floats() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
        assert_eq!(midpoint(1.0, 3.0), 2.0);
    }

    fn fit(x: &Matrix<f64>, y: &[bool], params: GrowParams) -> Tree<f64> {
        let w = vec![1.0; y.len()];
        let idx: Vec<usize> = (0..y.len()).collect();
        fit_classification(x, y, &w, &idx, params, None)
    }

    #[test]
    fn one_dimensional_sign_split() {
        let xs = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0];
        let x = Matrix::from_rows(&xs.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
        let y: Vec<bool> = xs.iter().map(|&v| v >= 0.0).collect();
        let t = fit(&x, &y, FULL);
        assert_eq!(t.depth(), 1);
        assert!(matches!(t.nodes[0], Node::Split { threshold, .. } if threshold == -0.5));
        assert!(xs.iter().zip(&y).all(|(&v, &c)| t.predict_row(&[v]) == c));
    }

    #[test]
    fn constant_labels_single_leaf() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let t = fit(&x, &[true; 3], FULL);
        assert_eq!(t.nodes.len(), 1);
        assert!(t.predict_row(&[10.0]));
    }

    fn xor() -> (Matrix<f64>, Vec<bool>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        // unequal cluster sizes give the first greedy split positive gain
        for ((a, b), m) in [
            ((0.0, 0.0), 3),
            ((0.0, 1.0), 2),
            ((1.0, 0.0), 2),
            ((1.0, 1.0), 1),
        ] {
            for _ in 0..m {
                rows.push(vec![a, b]);
                y.push((a > 0.5) != (b > 0.5));
            }
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor();
        let deep = fit(
            &x,
            &y,
            GrowParams {
                max_depth: 2,
                ..FULL
            },
        );
        assert!((0..y.len()).all(|i| deep.predict_row(x.row(i)) == y[i]));

        // every depth-1 tree: any feature, any threshold, any leaf labelling
        let mut best = 0;
        for f in 0..2 {
            for thr in [-1.0, 0.5, 2.0] {
                for (l, r) in [(false, false), (false, true), (true, false), (true, true)] {
                    let acc = (0..y.len())
                        .filter(|&i| (if x.get(i, f) <= thr { l } else { r }) == y[i])
                        .count();
                    best = best.max(acc);
                }
            }
        }
        let shallow = fit(
            &x,
            &y,
            GrowParams {
                max_depth: 1,
                ..FULL
            },
        );
        let acc = (0..y.len())
            .filter(|&i| shallow.predict_row(x.row(i)) == y[i])
            .count();
        assert!(acc <= best);
        assert!(4 * best <= 3 * y.len());
    }

    #[test]
    fn tie_leaf_is_negative() {
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let t = fit(&x, &[true, false], FULL);
        assert_eq!(t.nodes.len(), 1);
        assert!(!t.predict_row(&[1.0]));
        assert!(t.has_tied_leaf());
    }

    #[test]
    fn regression_tree_mean_leaves() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let r = [-1.0, -1.0, 2.0, 2.0];
        let p = GrowParams {
            max_depth: 1,
            min_samples_split: 2,
            max_features: None,
        };
        let t = fit_regression(&x, &r, p, &mut |idx| {
            idx.iter().map(|&i| r[i]).sum::<f64>() / idx.len() as f64
        });
        assert_eq!(t.leaf(&[0.5]).0, -1.0);
        assert_eq!(t.leaf(&[2.5]).0, 2.0);
    }

    fn brute_ig(labels: &[bool], left: &[bool]) -> f64 {
        let h = |v: &[bool]| {
            if v.is_empty() {
                return 0.0;
            }
            let p = v.iter().filter(|&&b| b).count() as f64 / v.len() as f64;
            [p, 1.0 - p]
                .iter()
                .filter(|&&q| q > 0.0)
                .map(|&q| -q * q.log2())
                .sum::<f64>()
        };
        let l: Vec<bool> = labels
            .iter()
            .zip(left)
            .filter(|p| *p.1)
            .map(|p| *p.0)
            .collect();
        let r: Vec<bool> = labels
            .iter()
            .zip(left)
            .filter(|p| !*p.1)
            .map(|p| *p.0)
            .collect();
        let n = labels.len() as f64;
        h(labels) - l.len() as f64 / n * h(&l) - r.len() as f64 / n * h(&r)
    }

    proptest! {
        #[test]
        fn information_gain_matches_brute_force(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
            let (y, l): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            prop_assert!((information_gain::<f64>(&y, &l) - brute_ig(&y, &l)).abs() < 1e-12);
        }

        #[test]
        fn split_is_the_best_single_threshold(rows in prop::collection::vec(((0i32..12), any::<bool>()), 2..30)) {
            let x = Matrix::from_rows(&rows.iter().map(|r| vec![f64::from(r.0)]).collect::<Vec<_>>()).unwrap();
            let y: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let t = fit(&x, &y, GrowParams { max_depth: 1, ..FULL });
            let mut best = 0.0f64;
            for thr in 0..12 {
                let l: Vec<bool> = rows.iter().map(|r| f64::from(r.0) <= f64::from(thr) + 0.5).collect();
                best = best.max(brute_ig(&y, &l));
            }
            let got = match t.nodes[0] {
                Node::Split { threshold, .. } => {
                    let l: Vec<bool> = rows.iter().map(|r| f64::from(r.0) <= threshold).collect();
                    brute_ig(&y, &l)
                }
                Node::Leaf { .. } => 0.0,
            };
            prop_assert!((got - best).abs() < 1e-9, "got {got} best {best}");
        }
    }
}
