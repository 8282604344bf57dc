use proptest::prelude::*;
use rand::Rng;
use wearscreen_core::models::tree::Node;
use wearscreen_core::models::{
    dual_objective, fit_adaboost, fit_gradient_boosting, solve_dual, train, Family, Hyperparams,
    Kernel, Matrix, ModelParams, Standardizer, TrainedModel,
};
use wearscreen_core::seed;

fn dataset(n: usize, d: usize, s: u64) -> (Matrix<f64>, Vec<bool>) {
    let mut rng = seed::rng(s);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2 == 0;
        let shift = if label { 0.8 } else { -0.8 };
        rows.push(
            (0..d)
                .map(|j| rng.random_range(-1.0..1.0) + if j == 0 { shift } else { 0.0 })
                .collect::<Vec<f64>>(),
        );
        y.push(label);
    }
    (Matrix::from_rows(&rows).unwrap(), y)
}

fn tree_families() -> Vec<Hyperparams> {
    vec![
        Hyperparams::Dt {
            max_depth: usize::MAX,
            min_samples_split: 2,
        },
        Hyperparams::Rf {
            n_trees: 7,
            max_depth: usize::MAX,
            feature_subsample_fraction: 0.5,
            bootstrap: true,
        },
        Hyperparams::Gb {
            n_trees: 15,
            learning_rate: 0.3,
            max_depth: 3,
        },
        Hyperparams::Adaboost {
            n_rounds: 15,
            stump_depth: 1,
        },
    ]
}

fn all_families() -> Vec<Hyperparams> {
    let mut v = tree_families();
    v.push(Hyperparams::Lr {
        learning_rate: 0.2,
        l2_lambda: 0.05,
        epochs: 200,
    });
    v.push(Hyperparams::Svm {
        kernel: Kernel::Rbf,
        c: 1.0,
        gamma: 0.5,
        max_iter: 100_000,
    });
    v.push(Hyperparams::Svm {
        kernel: Kernel::Linear,
        c: 0.5,
        gamma: 1.0,
        max_iter: 100_000,
    });
    v
}

#[test]
fn deterministic_training_and_prediction() {
    let (x, y) = dataset(60, 4, 3);
    for hp in all_families() {
        let a = train(&x, &y, &[], &hp, 17).unwrap();
        let b = train(&x, &y, &[], &hp, 17).unwrap();
        assert_eq!(a, b, "{hp:?}");
        assert_eq!(a.predict(&x).unwrap(), a.predict(&x).unwrap());
    }
}

#[test]
fn single_tree_forest_reduces_to_decision_tree() {
    let (x, y) = dataset(50, 3, 5);
    let dt = train(
        &x,
        &y,
        &[],
        &Hyperparams::Dt {
            max_depth: 5,
            min_samples_split: 2,
        },
        1,
    )
    .unwrap();
    let rf = train(
        &x,
        &y,
        &[],
        &Hyperparams::Rf {
            n_trees: 1,
            max_depth: 5,
            feature_subsample_fraction: 1.0,
            bootstrap: false,
        },
        99,
    )
    .unwrap();
    let (ModelParams::Tree(t), ModelParams::Forest(f)) = (&dt.params, &rf.params) else {
        panic!("unexpected params")
    };
    assert_eq!(&f.trees[0], t);
    assert_eq!(
        dt.predict(&x).unwrap().labels,
        rf.predict(&x).unwrap().labels
    );
}

#[test]
fn reloaded_models_predict_identically_on_random_rows() {
    let (x, y) = dataset(40, 3, 8);
    let (probe, _) = dataset(100, 3, 1234);
    for hp in all_families() {
        let m = train(&x, &y, &["a".into(), "b".into(), "c".into()], &hp, 4).unwrap();
        let back = TrainedModel::<f64>::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(
            back.predict(&probe).unwrap(),
            m.predict(&probe).unwrap(),
            "{hp:?}"
        );
        assert_eq!(back.feature_names, vec!["a", "b", "c"]);
    }
}

#[test]
fn f32_training_matches_f64_on_easy_data() {
    let (x, y) = dataset(40, 2, 2);
    let rows32: Vec<Vec<f32>> = x
        .rows()
        .map(|r| r.iter().map(|&v| v as f32).collect())
        .collect();
    let x32 = Matrix::from_rows(&rows32).unwrap();
    for hp in all_families() {
        let a = train(&x, &y, &[], &hp, 6)
            .unwrap()
            .predict(&x)
            .unwrap()
            .labels;
        let b = train(&x32, &y, &[], &hp, 6)
            .unwrap()
            .predict(&x32)
            .unwrap()
            .labels;
        let agree = a.iter().zip(&b).filter(|(p, q)| p == q).count();
        assert!(agree >= 36, "{hp:?}: {agree}/40");
    }
}

#[test]
fn unanimous_forest_vote_fraction() {
    let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]).unwrap();
    let y = [false, false, true, true];
    let hp = Hyperparams::Rf {
        n_trees: 3,
        max_depth: 3,
        feature_subsample_fraction: 1.0,
        bootstrap: false,
    };
    let p = train(&x, &y, &[], &hp, 0).unwrap().predict(&x).unwrap();
    assert_eq!(p.scores, vec![0.0, 0.0, 1.0, 1.0]);
}

#[test]
fn adaboost_reweighting_identity_and_loss() {
    let (x, y) = dataset(80, 3, 21);
    let m = fit_adaboost(&x, &y, 25, 1);
    assert!(m.stages.len() > 2);
    let n = y.len();
    let mut w = vec![1.0 / n as f64; n];
    let pm = |b: bool| if b { 1.0 } else { -1.0 };
    let mut margin = vec![0.0; n];
    let mut prev_loss = 1.0;
    for s in &m.stages {
        let h: Vec<bool> = (0..n).map(|i| s.tree.predict_row(x.row(i))).collect();
        for i in 0..n {
            w[i] *= (-s.alpha * pm(y[i]) * pm(h[i])).exp();
            margin[i] += s.alpha * pm(h[i]);
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        let err: f64 = (0..n).filter(|&i| h[i] != y[i]).map(|i| w[i]).sum();
        assert!((err - 0.5).abs() < 1e-12, "reweighted error {err}");
        let loss = (0..n).map(|i| (-pm(y[i]) * margin[i]).exp()).sum::<f64>() / n as f64;
        assert!(loss <= prev_loss + 1e-12);
        prev_loss = loss;
    }
}

#[test]
fn gradient_boosting_loss_monotone_on_random_labels() {
    for s in 0..5 {
        let (x, _) = dataset(50, 3, s);
        let mut rng = seed::rng(s + 100);
        let y: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
        let m = fit_gradient_boosting(&x, &y, 40, 1.0, 4).unwrap();
        assert!(m.loss_history.windows(2).all(|w| w[1] <= w[0]));
    }
}

/// Projected gradient on the box-and-hyperplane feasible set; the projection
/// solves for the multiplier of `y'a = 0` by bisection.
fn reference_dual(z: &Matrix<f64>, y: &[bool], kernel: Kernel, c: f64, gamma: f64) -> f64 {
    let n = y.len();
    let ys: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| ys[i] * ys[j] * kernel.eval(gamma, z.row(i), z.row(j)))
                .collect()
        })
        .collect();
    let lip: f64 = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-9);
    let project = |v: &[f64]| -> Vec<f64> {
        let at = |lam: f64| -> Vec<f64> {
            v.iter()
                .zip(&ys)
                .map(|(&vi, &yi)| (vi - lam * yi).clamp(0.0, c))
                .collect()
        };
        let g = |lam: f64| at(lam).iter().zip(&ys).map(|(a, yi)| a * yi).sum::<f64>();
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(0.5 * (lo + hi))
    };
    let mut a = vec![0.0; n];
    for _ in 0..20_000 {
        let grad: Vec<f64> = (0..n)
            .map(|i| q[i].iter().zip(&a).map(|(qij, aj)| qij * aj).sum::<f64>() - 1.0)
            .collect();
        let step: Vec<f64> = a.iter().zip(&grad).map(|(ai, gi)| ai - gi / lip).collect();
        a = project(&step);
    }
    dual_objective(z, y, kernel, gamma, &a)
}

#[test]
fn smo_matches_reference_qp_on_small_instances() {
    for s in 0..12u64 {
        let n = 6 + (s as usize % 15);
        let (x, y) = dataset(n, 2, 500 + s);
        let z = Standardizer::fit(&x).transform(&x);
        for (kernel, c, gamma) in [
            (Kernel::Linear, 1.0, 1.0),
            (Kernel::Rbf, 2.0, 0.7),
            (Kernel::Rbf, 0.3, 2.0),
        ] {
            let sol = solve_dual(&z, &y, kernel, c, gamma, 1_000_000);
            assert!(sol.converged);
            let got = dual_objective(&z, &y, kernel, gamma, &sol.alpha);
            let want = reference_dual(&z, &y, kernel, c, gamma);
            assert!(
                (got - want).abs() <= 1e-3,
                "seed {s} {kernel:?}: smo {got} ref {want}"
            );
            let eq: f64 = sol
                .alpha
                .iter()
                .zip(&y)
                .map(|(a, &b)| if b { *a } else { -*a })
                .sum();
            assert!(eq.abs() < 1e-9);
            assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        }
    }
}

fn distinct_dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (6usize..30, 1usize..4, any::<u64>()).prop_map(|(n, d, s)| {
        let mut rng = seed::rng(s);
        // integer grid keeps scaling exact; index column keeps rows distinct
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r: Vec<f64> = (0..d)
                    .map(|_| f64::from(rng.random_range(-20i32..20)))
                    .collect();
                r.push(i as f64);
                r
            })
            .collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        (rows, y)
    })
}

fn flipped(y: &[bool]) -> Vec<bool> {
    y.iter().map(|b| !b).collect()
}

fn has_tie(m: &TrainedModel<f64>) -> bool {
    match &m.params {
        ModelParams::Tree(t) => t.has_tied_leaf(),
        ModelParams::Forest(f) => f.trees.iter().any(|t| t.has_tied_leaf()),
        ModelParams::AdaBoost(a) => a.stages.iter().any(|s| s.tree.has_tied_leaf()),
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn label_flip_symmetry((rows, y) in distinct_dataset()) {
        let x = Matrix::from_rows(&rows).unwrap();
        let yf = flipped(&y);
        for hp in all_families() {
            let a = train(&x, &y, &[], &hp, 11).unwrap();
            let b = train(&x, &yf, &[], &hp, 11).unwrap();
            prop_assume!(!has_tie(&a) && !has_tie(&b));
            let (pa, pb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
            for i in 0..rows.len() {
                match hp.family() {
                    Family::Lr | Family::Gb => {
                        prop_assert!((pa.scores[i] - (1.0 - pb.scores[i])).abs() <= 1e-9, "{hp:?}");
                    }
                    Family::Rf => prop_assert!(pa.labels[i] != pb.labels[i] || pa.scores[i] == 0.5, "{hp:?}"),
                    Family::Svm | Family::Adaboost => {
                        prop_assert!((pa.scores[i] + pb.scores[i]).abs() <= 1e-6 * (1.0 + pa.scores[i].abs()), "{hp:?}");
                        if pa.scores[i].abs() > 1e-6 {
                            prop_assert!(pa.labels[i] != pb.labels[i], "{hp:?}");
                        }
                    }
                    Family::Dt => prop_assert!(pa.labels[i] != pb.labels[i], "{hp:?}"),
                }
            }
        }
    }

    #[test]
    fn tree_models_invariant_to_positive_column_scaling((rows, y) in distinct_dataset(), col in 0usize..4, k in 1u32..6) {
        let col = col % rows[0].len();
        let factor = [0.5, 2.0, 3.0, 10.0, 0.25][(k as usize) % 5];
        let x = Matrix::from_rows(&rows).unwrap();
        let scaled_rows: Vec<Vec<f64>> = rows.iter().map(|r| {
            let mut r = r.clone();
            r[col] *= factor;
            r
        }).collect();
        let xs = Matrix::from_rows(&scaled_rows).unwrap();
        for hp in tree_families() {
            let a = train(&x, &y, &[], &hp, 5).unwrap().predict(&x).unwrap().labels;
            let b = train(&xs, &y, &[], &hp, 5).unwrap().predict(&xs).unwrap().labels;
            prop_assert_eq!(a, b, "{:?}", hp);
        }
    }

    #[test]
    fn deep_tree_fits_distinct_rows((rows, y) in distinct_dataset()) {
        let x = Matrix::from_rows(&rows).unwrap();
        let m = train(&x, &y, &[], &Hyperparams::Dt { max_depth: usize::MAX, min_samples_split: 2 }, 0).unwrap();
        prop_assert_eq!(m.predict(&x).unwrap().labels, y);
        if let ModelParams::Tree(t) = &m.params {
            let pure = t.nodes.iter().all(|n| match n {
                Node::Leaf { value, .. } => *value == 0.0 || *value == 1.0,
                Node::Split { .. } => true,
            });
            prop_assert!(pure);
        }
    }
}
