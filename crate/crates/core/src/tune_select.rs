//! Grouped cross-validation, recursive feature elimination and seeded
//! hyperparameter search. Every fold split here keeps each group (participant)
//! entirely on one side.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::ConfusionCounts;
use crate::models::{train, Family, Hyperparams, Kernel, Matrix};
use crate::scalar::{total_cmp, Scalar};
use crate::seed;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TuneError {
    #[error("need at least {need} distinct groups, got {got}")]
    TooFewGroups { need: usize, got: usize },
    #[error("budget must be at least 1")]
    EmptyBudget,
}

pub const DEFAULT_INNER_FOLDS: usize = 5;
pub const TPE_WARMUP: usize = 10;
pub const TPE_CANDIDATES: usize = 24;
/// Fraction of the current feature set removed per elimination round.
pub const RFE_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Grouped k-fold: groups are placed largest first into the currently
/// smallest fold (ties to the lower fold). `k` is reduced to the number of
/// groups when fewer are available.
pub fn group_kfold<G: Ord + Clone>(groups: &[G], k: usize) -> Result<Vec<Fold>, TuneError> {
    let mut sizes: BTreeMap<&G, usize> = BTreeMap::new();
    for g in groups {
        *sizes.entry(g).or_default() += 1;
    }
    if sizes.len() < 2 || k < 2 {
        return Err(TuneError::TooFewGroups {
            need: 2,
            got: sizes.len(),
        });
    }
    let k = k.min(sizes.len());
    let mut order: Vec<(&G, usize)> = sizes.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut load = vec![0usize; k];
    let mut fold_of: BTreeMap<&G, usize> = BTreeMap::new();
    for (g, n) in order {
        let f = (0..k).min_by_key(|&f| (load[f], f)).expect("k >= 2");
        load[f] += n;
        fold_of.insert(g, f);
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..groups.len()).partition(|&i| fold_of[&groups[i]] == f);
            Fold { train, test }
        })
        .collect())
}

/// Running count of folds checked for group overlap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub outer_folds_checked: usize,
    pub inner_folds_checked: usize,
    pub violations: usize,
}

impl LeakageAudit {
    /// Number of groups present on both sides of the split.
    pub fn overlap<G: Ord>(groups: &[G], train: &[usize], test: &[usize]) -> usize {
        let tr: BTreeSet<&G> = train.iter().map(|&i| &groups[i]).collect();
        let te: BTreeSet<&G> = test.iter().map(|&i| &groups[i]).collect();
        tr.intersection(&te).count()
    }

    pub fn check_outer<G: Ord>(&mut self, groups: &[G], train: &[usize], test: &[usize]) {
        self.outer_folds_checked += 1;
        self.violations += Self::overlap(groups, train, test);
    }

    /// `groups` are the labels of the training split the inner folds index into.
    pub fn check_inner<G: Ord>(&mut self, groups: &[G], folds: &[Fold]) {
        for f in folds {
            self.inner_folds_checked += 1;
            self.violations += Self::overlap(groups, &f.train, &f.test);
        }
    }

    pub fn merge(&mut self, other: &LeakageAudit) {
        self.outer_folds_checked += other.outer_folds_checked;
        self.inner_folds_checked += other.inner_folds_checked;
        self.violations += other.violations;
    }
}

fn distinct<G: Ord>(groups: &[G]) -> usize {
    groups.iter().collect::<BTreeSet<_>>().len()
}

/// Mean and standard error of per-fold F1 for one configuration.
pub fn cv_f1<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    folds: &[Fold],
    hp: &Hyperparams,
    seed: u64,
) -> (f64, f64) {
    let scores: Vec<f64> = folds
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let xtr = x.select_rows(&f.train);
            let ytr: Vec<bool> = f.train.iter().map(|&i| y[i]).collect();
            match train(&xtr, &ytr, &[], hp, seed::derive_index(seed, k as u64)) {
                Ok(m) => {
                    let p = m.predict(&x.select_rows(&f.test)).expect("same width");
                    let pairs: Vec<(bool, bool)> = f
                        .test
                        .iter()
                        .zip(&p.labels)
                        .map(|(&i, &q)| (y[i], q))
                        .collect();
                    crate::evaluate::compute_metrics::<f64>(&ConfusionCounts::from_pairs(&pairs)).f1
                }
                // a diverging configuration scores as the worst possible
                Err(_) => 0.0,
            }
        })
        .collect();
    mean_se(&scores)
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationRound {
    pub round: usize,
    pub n_features: usize,
    pub dropped: Vec<String>,
    pub score: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    /// Indices into the full feature list, ascending.
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    pub history: Vec<EliminationRound>,
}

impl FeatureMask {
    pub fn full(names: &[String]) -> Self {
        Self {
            indices: (0..names.len()).collect(),
            names: names.to_vec(),
            history: Vec::new(),
        }
    }
}

/// Forest used for ranking and scoring inside elimination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfeForest {
    pub n_trees: usize,
    pub max_depth: usize,
    pub feature_subsample_fraction: f64,
}

impl Default for RfeForest {
    fn default() -> Self {
        Self {
            n_trees: 50,
            max_depth: 8,
            feature_subsample_fraction: 0.3,
        }
    }
}

impl RfeForest {
    fn hyperparams(&self) -> Hyperparams {
        Hyperparams::Rf {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            feature_subsample_fraction: self.feature_subsample_fraction,
            bootstrap: true,
        }
    }
}

/// Recursive feature elimination scored by grouped-CV F1.
pub fn rfecv<T: Scalar, G: Ord>(
    x: &Matrix<T>,
    y: &[bool],
    groups: &[G],
    names: &[String],
    folds: &[Fold],
    forest: RfeForest,
    seed: u64,
) -> Result<FeatureMask, TuneError> {
    let n_groups = distinct(groups);
    if n_groups < 3 {
        return Err(TuneError::TooFewGroups {
            need: 3,
            got: n_groups,
        });
    }
    let hp = forest.hyperparams();
    let mut current: Vec<usize> = (0..x.n_cols()).collect();
    let (s0, se0) = cv_f1(
        &x.select_cols(&current),
        y,
        folds,
        &hp,
        seed::derive_index(seed, 0),
    );
    let mut history = vec![EliminationRound {
        round: 0,
        n_features: current.len(),
        dropped: vec![],
        score: s0,
        se: se0,
    }];
    let (mut best, mut best_score, mut best_se) = (current.clone(), s0, se0);
    let mut round = 0;
    while current.len() > 1 {
        round += 1;
        let xs = x.select_cols(&current);
        let model = train(
            &xs,
            y,
            &[],
            &hp,
            seed::derive_index(seed, 1000 + round as u64),
        )
        .expect("validated forest");
        let imp = model.feature_importance().expect("forests rank features");
        let n_drop =
            ((RFE_STEP * current.len() as f64).ceil() as usize).clamp(1, current.len() - 1);
        // lowest importance first; among ties the later feature goes first
        let mut rank: Vec<usize> = (0..current.len()).collect();
        rank.sort_by(|&a, &b| total_cmp(&imp[a], &imp[b]).then(b.cmp(&a)));
        let drop: BTreeSet<usize> = rank[..n_drop].iter().copied().collect();
        let dropped = drop.iter().map(|&k| names[current[k]].clone()).collect();
        current = current
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, &j)| j)
            .collect();
        let (s, se) = cv_f1(
            &x.select_cols(&current),
            y,
            folds,
            &hp,
            seed::derive_index(seed, round as u64),
        );
        history.push(EliminationRound {
            round,
            n_features: current.len(),
            dropped,
            score: s,
            se,
        });
        if s > best_score {
            (best, best_score, best_se) = (current.clone(), s, se);
        }
        if s < best_score - best_se {
            break;
        }
    }
    Ok(FeatureMask {
        names: best.iter().map(|&j| names[j].clone()).collect(),
        indices: best,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Random,
    Tpe,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Tpe => "tpe",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(Strategy::Random),
            "tpe" => Ok(Strategy::Tpe),
            other => Err(format!("unknown search strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dim {
    Int {
        name: String,
        lo: i64,
        hi: i64,
        log: bool,
    },
    Real {
        name: String,
        lo: f64,
        hi: f64,
        log: bool,
    },
    Cat {
        name: String,
        choices: Vec<String>,
    },
}

impl Dim {
    pub fn name(&self) -> &str {
        match self {
            Dim::Int { name, .. } | Dim::Real { name, .. } | Dim::Cat { name, .. } => name,
        }
    }

    /// Numeric bounds in the internal (possibly log) coordinate.
    fn internal_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Dim::Int {
                lo, hi, log: true, ..
            } => Some(((lo as f64).ln(), (hi as f64).ln())),
            // half-unit margins give the end values a full rounding cell
            Dim::Int {
                lo, hi, log: false, ..
            } => Some((lo as f64 - 0.5, hi as f64 + 0.5)),
            Dim::Real {
                lo, hi, log: true, ..
            } => Some((lo.ln(), hi.ln())),
            Dim::Real {
                lo, hi, log: false, ..
            } => Some((lo, hi)),
            Dim::Cat { .. } => None,
        }
    }

    fn to_internal(&self, v: &ParamValue) -> f64 {
        match (self, v) {
            (Dim::Int { log, .. }, ParamValue::Int(i)) => {
                if *log {
                    (*i as f64).ln()
                } else {
                    *i as f64
                }
            }
            (Dim::Real { log, .. }, ParamValue::Real(r)) => {
                if *log {
                    r.ln()
                } else {
                    *r
                }
            }
            _ => panic!("value does not match dimension `{}`", self.name()),
        }
    }

    fn to_value(&self, u: f64) -> ParamValue {
        match *self {
            Dim::Int { lo, hi, log, .. } => {
                let v = if log { u.exp() } else { u };
                ParamValue::Int((v.round() as i64).clamp(lo, hi))
            }
            Dim::Real { lo, hi, log, .. } => {
                ParamValue::Real((if log { u.exp() } else { u }).clamp(lo, hi))
            }
            Dim::Cat { .. } => unreachable!("categorical dimensions have no internal coordinate"),
        }
    }

    fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match self {
            Dim::Int {
                lo, hi, log: false, ..
            } => ParamValue::Int(rng.random_range(*lo..=*hi)),
            Dim::Cat { choices, .. } => ParamValue::Cat(rng.random_range(0..choices.len())),
            _ => {
                let (a, b) = self.internal_bounds().expect("numeric");
                self.to_value(rng.random_range(a..=b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(usize),
}

impl ParamValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            ParamValue::Int(i) => i as f64,
            ParamValue::Real(r) => r,
            ParamValue::Cat(c) => c as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dim>,
}

fn int(name: &str, lo: i64, hi: i64, log: bool) -> Dim {
    Dim::Int {
        name: name.into(),
        lo,
        hi,
        log,
    }
}

fn real(name: &str, lo: f64, hi: f64, log: bool) -> Dim {
    Dim::Real {
        name: name.into(),
        lo,
        hi,
        log,
    }
}

impl SearchSpace {
    /// Default space per family. `ensemble_cap` bounds tree and round counts.
    pub fn for_family(family: Family, ensemble_cap: Option<usize>) -> Self {
        let cap = |lo: i64, hi: i64| match ensemble_cap {
            Some(c) => {
                let c = c.max(1) as i64;
                (lo.min(c), hi.min(c))
            }
            None => (lo, hi),
        };
        let dims = match family {
            Family::Dt => vec![
                int("max_depth", 2, 12, false),
                int("min_samples_split", 2, 20, false),
            ],
            Family::Lr => vec![
                real("learning_rate", 1e-3, 1.0, true),
                real("l2_lambda", 1e-4, 10.0, true),
                int("epochs", 100, 500, false),
            ],
            Family::Rf => {
                let (lo, hi) = cap(50, 400);
                vec![
                    int("n_trees", lo, hi, false),
                    int("max_depth", 2, 16, false),
                    real("feature_subsample_fraction", 0.1, 1.0, false),
                    Dim::Cat {
                        name: "bootstrap".into(),
                        choices: vec!["true".into(), "false".into()],
                    },
                ]
            }
            Family::Svm => vec![
                Dim::Cat {
                    name: "kernel".into(),
                    choices: vec!["linear".into(), "rbf".into()],
                },
                real("c", 1e-2, 1e2, true),
                real("gamma", 1e-3, 1e1, true),
            ],
            Family::Gb => {
                let (lo, hi) = cap(50, 300);
                vec![
                    int("n_trees", lo, hi, false),
                    real("learning_rate", 0.01, 0.3, true),
                    int("max_depth", 2, 6, false),
                ]
            }
            Family::Adaboost => {
                let (lo, hi) = cap(50, 400);
                vec![
                    int("n_rounds", lo, hi, false),
                    int("stump_depth", 1, 3, false),
                ]
            }
        };
        Self { dims }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<ParamValue> {
        self.dims.iter().map(|d| d.sample_uniform(rng)).collect()
    }
}

/// Map a point of `SearchSpace::for_family(family, _)` to hyperparameters.
pub fn to_hyperparams(family: Family, point: &[ParamValue]) -> Hyperparams {
    let i = |k: usize| match point[k] {
        ParamValue::Int(v) => v.max(1) as usize,
        ref other => other.as_f64() as usize,
    };
    let r = |k: usize| point[k].as_f64();
    let c = |k: usize| match point[k] {
        ParamValue::Cat(v) => v,
        _ => 0,
    };
    match family {
        Family::Dt => Hyperparams::Dt {
            max_depth: i(0),
            min_samples_split: i(1),
        },
        Family::Lr => Hyperparams::Lr {
            learning_rate: r(0),
            l2_lambda: r(1),
            epochs: i(2),
        },
        Family::Rf => Hyperparams::Rf {
            n_trees: i(0),
            max_depth: i(1),
            feature_subsample_fraction: r(2),
            bootstrap: c(3) == 0,
        },
        Family::Svm => Hyperparams::Svm {
            kernel: if c(0) == 0 {
                Kernel::Linear
            } else {
                Kernel::Rbf
            },
            c: r(1),
            gamma: r(2),
            max_iter: match Hyperparams::default_for(Family::Svm) {
                Hyperparams::Svm { max_iter, .. } => max_iter,
                _ => unreachable!(),
            },
        },
        Family::Gb => Hyperparams::Gb {
            n_trees: i(0),
            learning_rate: r(1),
            max_depth: i(2),
        },
        Family::Adaboost => Hyperparams::Adaboost {
            n_rounds: i(0),
            stump_depth: i(1),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub point: Vec<ParamValue>,
    pub objective: f64,
    pub seed: u64,
}

/// Gaussian kernel density over one numeric dimension with a uniform prior component.
struct Kde {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl Kde {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let n = centers.len().max(1) as f64;
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        let m = centers.iter().sum::<f64>() / n;
        let sd = (centers.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n).sqrt();
        let bandwidth = (1.06 * sd * n.powf(-0.2)).clamp(range / 20.0, range);
        Self {
            centers,
            bandwidth,
            lo,
            hi,
        }
    }

    fn pdf(&self, u: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        let k: f64 = self
            .centers
            .iter()
            .map(|c| norm * (-0.5 * ((u - c) / h).powi(2)).exp())
            .sum();
        let prior = 1.0 / (self.hi - self.lo).max(f64::MIN_POSITIVE);
        (k + prior) / (self.centers.len() as f64 + 1.0)
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let k = rng.random_range(0..=self.centers.len());
        if k == self.centers.len() {
            return rng.random_range(self.lo..=self.hi);
        }
        let normal = Normal::new(self.centers[k], self.bandwidth).expect("positive bandwidth");
        for _ in 0..32 {
            let u = normal.sample(rng);
            if (self.lo..=self.hi).contains(&u) {
                return u;
            }
        }
        self.centers[k].clamp(self.lo, self.hi)
    }
}

fn cat_probs(values: &[usize], k: usize) -> Vec<f64> {
    let mut c = vec![1.0; k];
    for &v in values {
        c[v] += 1.0;
    }
    let s: f64 = c.iter().sum();
    c.into_iter().map(|v| v / s).collect()
}

/// Tree-structured Parzen proposal from the completed trials.
fn tpe_propose(space: &SearchSpace, trials: &[Trial], rng: &mut ChaCha8Rng) -> Vec<ParamValue> {
    let mut order: Vec<&Trial> = trials.iter().collect();
    order.sort_by(|a, b| {
        b.objective
            .total_cmp(&a.objective)
            .then(a.trial_id.cmp(&b.trial_id))
    });
    let n_good = order.len().div_ceil(2);
    let (good, bad) = order.split_at(n_good);

    let mut candidates: Vec<Vec<ParamValue>> = (0..TPE_CANDIDATES)
        .map(|_| Vec::with_capacity(space.dims.len()))
        .collect();
    let mut score = [0.0f64; TPE_CANDIDATES];
    for (d, dim) in space.dims.iter().enumerate() {
        match dim {
            Dim::Cat { choices, .. } => {
                let pick = |ts: &[&Trial]| {
                    ts.iter()
                        .map(|t| {
                            if let ParamValue::Cat(c) = t.point[d] {
                                c
                            } else {
                                0
                            }
                        })
                        .collect::<Vec<_>>()
                };
                let l = cat_probs(&pick(good), choices.len());
                let g = cat_probs(&pick(bad), choices.len());
                for (cand, s) in candidates.iter_mut().zip(score.iter_mut()) {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut choice = choices.len() - 1;
                    for (k, p) in l.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            choice = k;
                            break;
                        }
                    }
                    *s += l[choice].ln() - g[choice].ln();
                    cand.push(ParamValue::Cat(choice));
                }
            }
            _ => {
                let (lo, hi) = dim.internal_bounds().expect("numeric");
                let l = Kde::new(
                    good.iter().map(|t| dim.to_internal(&t.point[d])).collect(),
                    lo,
                    hi,
                );
                let g = Kde::new(
                    bad.iter().map(|t| dim.to_internal(&t.point[d])).collect(),
                    lo,
                    hi,
                );
                for (cand, s) in candidates.iter_mut().zip(score.iter_mut()) {
                    let u = l.sample(rng);
                    *s += l.pdf(u).ln() - g.pdf(u).ln();
                    cand.push(dim.to_value(u));
                }
            }
        }
    }
    let best = (0..TPE_CANDIDATES).fold(0, |b, k| if score[k] > score[b] { k } else { b });
    candidates.swap_remove(best)
}

/// Run `budget` trials. The objective receives the point and a per-trial seed.
pub fn run_study(
    space: &SearchSpace,
    budget: usize,
    strategy: Strategy,
    seed: u64,
    mut objective: impl FnMut(&[ParamValue], u64) -> f64,
) -> Result<Vec<Trial>, TuneError> {
    if budget == 0 {
        return Err(TuneError::EmptyBudget);
    }
    let mut rng = seed::rng(seed::derive(seed, "study"));
    let mut trials: Vec<Trial> = Vec::with_capacity(budget);
    for trial_id in 0..budget {
        let point = match strategy {
            Strategy::Tpe if trial_id >= TPE_WARMUP => tpe_propose(space, &trials, &mut rng),
            _ => space.sample(&mut rng),
        };
        let tseed = seed::derive_index(seed, trial_id as u64);
        let v = objective(&point, tseed);
        trials.push(Trial {
            trial_id,
            point,
            objective: if v.is_finite() { v } else { 0.0 },
            seed: tseed,
        });
    }
    Ok(trials)
}

/// Highest objective; ties go to the lower trial id.
pub fn best_trial(trials: &[Trial]) -> &Trial {
    trials.iter().fold(
        &trials[0],
        |b, t| if t.objective > b.objective { t } else { b },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrial {
    pub trial_id: usize,
    pub hyperparams: Hyperparams,
    pub objective: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub family: Family,
    pub strategy: Strategy,
    pub trials: Vec<SearchTrial>,
    pub best: usize,
}

impl Study {
    pub fn best_hyperparams(&self) -> &Hyperparams {
        &self.trials[self.best].hyperparams
    }
}

/// Search over the family's default space scored by mean inner-fold F1.
#[allow(clippy::too_many_arguments)]
pub fn hyperparameter_search<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    folds: &[Fold],
    family: Family,
    budget: usize,
    strategy: Strategy,
    ensemble_cap: Option<usize>,
    seed: u64,
) -> Result<Study, TuneError> {
    let space = SearchSpace::for_family(family, ensemble_cap);
    let trials = run_study(&space, budget, strategy, seed, |p, s| {
        cv_f1(x, y, folds, &to_hyperparams(family, p), s).0
    })?;
    let best = best_trial(&trials).trial_id;
    let trials = trials
        .into_iter()
        .map(|t| SearchTrial {
            trial_id: t.trial_id,
            hyperparams: to_hyperparams(family, &t.point),
            objective: t.objective,
            seed: t.seed,
        })
        .collect();
    Ok(Study {
        family,
        strategy,
        trials,
        best,
    })
}

pub const STUDY_LOG_HEADER: &str = "trial_id,family,params_json,objective,seed";

/// Append study rows; `prefix` namespaces trial ids (e.g. by outer fold).
pub fn write_study_log<W: Write>(out: &mut W, prefix: &str, study: &Study) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for t in &study.trials {
        let params = serde_json::to_string(&t.hyperparams).map_err(std::io::Error::other)?;
        w.write_record([
            format!("{prefix}#{}", t.trial_id),
            study.family.to_string(),
            params,
            format!("{}", t.objective),
            t.seed.to_string(),
        ])?;
    }
    w.flush()
}
