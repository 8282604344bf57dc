//! Leave-one-participant-out evaluation, pooled confusion counts, point
//! metrics and percentile bootstrap intervals over pooled predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureRecord;
use crate::ingest::{format_timestamp, Instrument, ParticipantId, Timestamp};
use crate::models::{train, Family, Hyperparams, Matrix, ModelError};
use crate::scalar::{total_cmp, Scalar};
use crate::seed;
use crate::tune_select::{
    group_kfold, hyperparameter_search, rfecv, FeatureMask, LeakageAudit, RfeForest, Strategy,
    Study, DEFAULT_INNER_FOLDS,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 participants, got {0}")]
    TooFewParticipants(usize),
    #[error("bootstrap needs B >= 1 and 0 < level < 1")]
    InvalidBootstrap,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    /// From `(truth, predicted)` pairs.
    pub fn from_pairs(pairs: &[(bool, bool)]) -> Self {
        let mut c = Self::default();
        for &p in pairs {
            c.add(p.0, p.1);
        }
        c
    }

    pub fn add(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.tp += o.tp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self.fp += o.fp;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sensitivity,
    Specificity,
    BalancedAccuracy,
    Precision,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::BalancedAccuracy,
        Metric::Precision,
        Metric::F1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::BalancedAccuracy => "balanced_accuracy",
            Metric::Precision => "precision",
            Metric::F1 => "f1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues<T> {
    pub sensitivity: T,
    pub specificity: T,
    pub balanced_accuracy: T,
    pub precision: T,
    pub f1: T,
    /// Metrics whose defining ratio was 0/0 and was set to 0.
    pub degenerate: Vec<Metric>,
}

impl<T: Scalar> MetricValues<T> {
    pub fn get(&self, m: Metric) -> T {
        match m {
            Metric::Sensitivity => self.sensitivity,
            Metric::Specificity => self.specificity,
            Metric::BalancedAccuracy => self.balanced_accuracy,
            Metric::Precision => self.precision,
            Metric::F1 => self.f1,
        }
    }
}

pub fn compute_metrics<T: Scalar>(c: &ConfusionCounts) -> MetricValues<T> {
    let mut degenerate = Vec::new();
    let mut ratio = |num: u64, den: u64, m: Metric| {
        if den == 0 {
            degenerate.push(m);
            T::zero()
        } else {
            T::of(num as f64) / T::of(den as f64)
        }
    };
    let sensitivity = ratio(c.tp, c.tp + c.fn_, Metric::Sensitivity);
    let specificity = ratio(c.tn, c.tn + c.fp, Metric::Specificity);
    let precision = ratio(c.tp, c.tp + c.fp, Metric::Precision);
    let den = precision + sensitivity;
    let f1 = if den > T::zero() {
        T::of(2.0) * precision * sensitivity / den
    } else {
        degenerate.push(Metric::F1);
        T::zero()
    };
    MetricValues {
        sensitivity,
        specificity,
        balanced_accuracy: (sensitivity + specificity) / T::of(2.0),
        precision,
        f1,
        degenerate,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lower: T,
    pub upper: T,
    pub halfwidth: T,
}

/// Linear interpolation between order statistics at `q * (n - 1)`.
fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Percentile intervals from `b` resamples (with replacement) of the pooled
/// `(truth, predicted)` list. Resample `r` draws from its own stream
/// `derive_index(seed, r)`.
pub fn bootstrap_ci<T: Scalar>(
    pairs: &[(bool, bool)],
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BTreeMap<Metric, Interval<T>>, EvalError> {
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidBootstrap);
    }
    let n = pairs.len();
    let samples: Vec<MetricValues<T>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed::derive_index(seed, r as u64));
            let mut c = ConfusionCounts::default();
            for _ in 0..n {
                let (t, p) = pairs[rng.random_range(0..n)];
                c.add(t, p);
            }
            compute_metrics(&c)
        })
        .collect();
    let alpha = (1.0 - level) / 2.0;
    Ok(Metric::ALL
        .into_iter()
        .map(|m| {
            let mut v: Vec<T> = samples.iter().map(|s| s.get(m)).collect();
            v.sort_by(total_cmp);
            let (lower, upper) = if n == 0 {
                (T::zero(), T::zero())
            } else {
                (quantile(&v, alpha), quantile(&v, 1.0 - alpha))
            };
            (
                m,
                Interval {
                    lower,
                    upper,
                    halfwidth: (upper - lower) / T::of(2.0),
                },
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T> {
    pub counts: ConfusionCounts,
    pub point: MetricValues<T>,
    pub ci: BTreeMap<Metric, Interval<T>>,
    pub n_bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

impl<T: Scalar> MetricReport<T> {
    pub fn from_pairs(
        pairs: &[(bool, bool)],
        b: usize,
        level: f64,
        seed: u64,
    ) -> Result<Self, EvalError> {
        let counts = ConfusionCounts::from_pairs(pairs);
        Ok(Self {
            counts,
            point: compute_metrics(&counts),
            ci: bootstrap_ci(pairs, b, level, seed)?,
            n_bootstrap: b,
            level,
            seed,
        })
    }

    pub fn halfwidth(&self, m: Metric) -> T {
        self.ci.get(&m).map_or(T::zero(), |i| i.halfwidth)
    }
}

/// Labelled rows for one instrument: features, labels and participant groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<bool>,
    pub groups: Vec<ParticipantId>,
    pub week_start: Vec<Timestamp>,
    pub feature_names: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    /// Rows whose segment carries a label for `instrument`.
    pub fn from_records(
        records: &[FeatureRecord<T>],
        instrument: Instrument,
    ) -> Result<Self, ModelError> {
        let kept: Vec<&FeatureRecord<T>> = records
            .iter()
            .filter(|r| r.labels.contains_key(&instrument))
            .collect();
        let feature_names = records.first().map(|r| r.names.clone()).unwrap_or_default();
        let rows: Vec<&[T]> = kept.iter().map(|r| r.values.as_slice()).collect();
        let x = if rows.is_empty() {
            Matrix::new(0, feature_names.len(), vec![])?
        } else {
            Matrix::from_rows(&rows)?
        };
        Ok(Self {
            x,
            y: kept
                .iter()
                .map(|r| r.labels[&instrument].label.is_positive())
                .collect(),
            groups: kept.iter().map(|r| r.participant.clone()).collect(),
            week_start: kept.iter().map(|r| r.week_start).collect(),
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn participants(&self) -> Vec<ParticipantId> {
        self.groups
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Per-fold training procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Run the hyperparameter search; otherwise use `fixed` or family defaults.
    pub tune: bool,
    pub strategy: Strategy,
    pub budget: usize,
    /// Upper bound on tree/round counts in search spaces.
    pub ensemble_cap: Option<usize>,
    pub rfe: bool,
    pub rfe_forest: RfeForest,
    pub inner_folds: usize,
    pub fixed: BTreeMap<Family, Hyperparams>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tune: true,
            strategy: Strategy::Random,
            budget: 50,
            ensemble_cap: None,
            rfe: true,
            rfe_forest: RfeForest::default(),
            inner_folds: DEFAULT_INNER_FOLDS,
            fixed: BTreeMap::new(),
        }
    }
}

impl EvalConfig {
    fn untuned(&self, family: Family) -> Hyperparams {
        self.fixed
            .get(&family)
            .cloned()
            .unwrap_or_else(|| Hyperparams::default_for(family))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow<T> {
    pub participant: ParticipantId,
    pub week_start: Timestamp,
    pub truth: bool,
    pub predicted: bool,
    pub score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFold<T> {
    pub family: Family,
    pub hyperparams: Hyperparams,
    pub predictions: Vec<PredictionRow<T>>,
    /// Importance over the full feature list (zero outside the mask).
    pub importance: Option<Vec<T>>,
    pub study: Option<Study>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome<T> {
    pub participant: ParticipantId,
    pub n_train: usize,
    pub n_test: usize,
    pub mask: FeatureMask,
    pub audit: LeakageAudit,
    pub families: Vec<FamilyFold<T>>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LopoResult<T> {
    pub folds: Vec<FoldOutcome<T>>,
    pub audit: LeakageAudit,
}

impl<T: Scalar> LopoResult<T> {
    /// Predictions of one family, folds in participant order.
    pub fn predictions(&self, family: Family) -> Vec<PredictionRow<T>> {
        self.folds
            .iter()
            .flat_map(|f| {
                f.families
                    .iter()
                    .filter(|ff| ff.family == family)
                    .flat_map(|ff| ff.predictions.iter().cloned())
            })
            .collect()
    }

    pub fn pairs(&self, family: Family) -> Vec<(bool, bool)> {
        self.predictions(family)
            .iter()
            .map(|p| (p.truth, p.predicted))
            .collect()
    }

    pub fn counts(&self, family: Family) -> ConfusionCounts {
        ConfusionCounts::from_pairs(&self.pairs(family))
    }

    /// Mean of per-fold importances for one family.
    pub fn mean_importance(&self, family: Family) -> Option<Vec<T>> {
        let per: Vec<&Vec<T>> = self
            .folds
            .iter()
            .flat_map(|f| {
                f.families
                    .iter()
                    .filter(|ff| ff.family == family)
                    .filter_map(|ff| ff.importance.as_ref())
            })
            .collect();
        let d = per.first()?.len();
        let mut acc = vec![T::zero(); d];
        for v in &per {
            for (a, &x) in acc.iter_mut().zip(v.iter()) {
                *a += x;
            }
        }
        let k = T::of_usize(per.len());
        Some(acc.into_iter().map(|a| a / k).collect())
    }
}

fn fold_outcome<T: Scalar>(
    data: &Dataset<T>,
    held_out: &ParticipantId,
    families: &[Family],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<FoldOutcome<T>, EvalError> {
    let fold_seed = seed::derive(seed, held_out.as_str());
    let (test, train_idx): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| &data.groups[i] == held_out);
    let mut audit = LeakageAudit::default();
    audit.check_outer(&data.groups, &train_idx, &test);
    let mut notes = Vec::new();

    let xtr = data.x.select_rows(&train_idx);
    let ytr: Vec<bool> = train_idx.iter().map(|&i| data.y[i]).collect();
    let gtr: Vec<ParticipantId> = train_idx.iter().map(|&i| data.groups[i].clone()).collect();
    let single_class = ytr.iter().all(|&b| b) || ytr.iter().all(|&b| !b);
    if single_class {
        notes.push(format!(
            "single-class training split for {held_out}: constant classifier"
        ));
    }
    let inner = if single_class {
        None
    } else {
        group_kfold(&gtr, cfg.inner_folds).ok()
    };
    if let Some(folds) = &inner {
        audit.check_inner(&gtr, folds);
    } else if !single_class {
        notes.push(format!("fold {held_out}: too few training participants for inner CV; tuning and elimination skipped"));
    }

    let mask = match (&inner, cfg.rfe) {
        (Some(folds), true) => match rfecv(
            &xtr,
            &ytr,
            &gtr,
            &data.feature_names,
            folds,
            cfg.rfe_forest,
            seed::derive(fold_seed, "rfe"),
        ) {
            Ok(m) => m,
            Err(e) => {
                notes.push(format!("fold {held_out}: elimination skipped ({e})"));
                FeatureMask::full(&data.feature_names)
            }
        },
        _ => FeatureMask::full(&data.feature_names),
    };
    let xtr_m = xtr.select_cols(&mask.indices);
    let xte_m = data.x.select_rows(&test).select_cols(&mask.indices);

    let mut fam_out = Vec::with_capacity(families.len());
    for &family in families {
        let fam_seed = seed::derive(fold_seed, family.name());
        let mut fnotes = Vec::new();
        let study = match (&inner, cfg.tune) {
            (Some(folds), true) => Some(
                hyperparameter_search(
                    &xtr_m,
                    &ytr,
                    folds,
                    family,
                    cfg.budget.max(1),
                    cfg.strategy,
                    cfg.ensemble_cap,
                    seed::derive(fam_seed, "search"),
                )
                .expect("budget is at least one"),
            ),
            _ => None,
        };
        let hp = study
            .as_ref()
            .map_or_else(|| cfg.untuned(family), |s| s.best_hyperparams().clone());
        let model = match train(
            &xtr_m,
            &ytr,
            &mask.names,
            &hp,
            seed::derive(fam_seed, "final"),
        ) {
            Ok(m) => m,
            Err(ModelError::NonFinite(what)) => {
                fnotes.push(format!(
                    "{what} diverged; fell back to default hyperparameters"
                ));
                train(
                    &xtr_m,
                    &ytr,
                    &mask.names,
                    &Hyperparams::default_for(family),
                    seed::derive(fam_seed, "final"),
                )?
            }
            Err(e) => return Err(e.into()),
        };
        fnotes.extend(model.warnings.iter().cloned());
        let pred = model.predict(&xte_m)?;
        let predictions = test
            .iter()
            .zip(pred.labels.iter().zip(&pred.scores))
            .map(|(&i, (&p, &s))| PredictionRow {
                participant: data.groups[i].clone(),
                week_start: data.week_start[i],
                truth: data.y[i],
                predicted: p,
                score: s,
            })
            .collect();
        let importance = model.feature_importance().map(|imp| {
            let mut full = vec![T::zero(); data.feature_names.len()];
            for (&j, v) in mask.indices.iter().zip(imp) {
                full[j] = v;
            }
            full
        });
        fam_out.push(FamilyFold {
            family,
            hyperparams: model.hyperparams.clone(),
            predictions,
            importance,
            study,
            notes: fnotes,
        });
    }
    Ok(FoldOutcome {
        participant: held_out.clone(),
        n_train: train_idx.len(),
        n_test: test.len(),
        mask,
        audit,
        families: fam_out,
        notes,
    })
}

/// One fold per participant; elimination and tuning run inside each training
/// split, and the mask is shared by every family in the fold.
pub fn lopo_cv_multi<T: Scalar>(
    data: &Dataset<T>,
    families: &[Family],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<LopoResult<T>, EvalError> {
    let participants = data.participants();
    if participants.len() < 2 {
        return Err(EvalError::TooFewParticipants(participants.len()));
    }
    let folds: Vec<FoldOutcome<T>> = participants
        .par_iter()
        .map(|p| fold_outcome(data, p, families, cfg, seed))
        .collect::<Result<_, _>>()?;
    let mut audit = LeakageAudit::default();
    for f in &folds {
        audit.merge(&f.audit);
    }
    Ok(LopoResult { folds, audit })
}

pub fn lopo_cv<T: Scalar>(
    data: &Dataset<T>,
    family: Family,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<LopoResult<T>, EvalError> {
    lopo_cv_multi(data, &[family], cfg, seed)
}

pub const PREDICTIONS_HEADER: &str = "participant,week_start,true,predicted,score";

pub fn write_predictions_csv<T: Scalar, W: Write>(
    out: W,
    rows: &[PredictionRow<T>],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{PREDICTIONS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.participant,
            format_timestamp(r.week_start),
            u8::from(r.truth),
            u8::from(r.predicted),
            r.score
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fn_: u64, tn: u64, fp: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fn_, tn, fp }
    }

    #[test]
    fn closed_form_metrics() {
        let m = compute_metrics::<f64>(&counts(3, 1, 2, 2));
        assert_eq!(m.sensitivity, 0.75);
        assert_eq!(m.specificity, 0.5);
        assert_eq!(m.balanced_accuracy, 0.625);
        assert!((m.precision - 0.6).abs() < 1e-15);
        assert!((m.f1 - 2.0 * 0.6 * 0.75 / 1.35).abs() < 1e-15);
        assert!((m.f1 - 0.6667).abs() < 1e-4);
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn perfect_and_degenerate() {
        let m = compute_metrics::<f64>(&counts(5, 0, 4, 0));
        assert!(Metric::ALL.iter().all(|&k| m.get(k) == 1.0));
        let d = compute_metrics::<f64>(&counts(0, 3, 2, 0));
        assert_eq!((d.precision, d.f1), (0.0, 0.0));
        assert!(d.degenerate.contains(&Metric::Precision) && d.degenerate.contains(&Metric::F1));
    }

    #[test]
    fn counts_from_pairs() {
        let c = ConfusionCounts::from_pairs(&[
            (true, true),
            (true, false),
            (false, false),
            (false, true),
            (false, true),
        ]);
        assert_eq!(c, counts(1, 1, 1, 2));
        assert_eq!(c.total(), 5);
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"tp":1,"fn":1,"tn":1,"fp":2}"#
        );
    }

    #[test]
    fn bootstrap_trivial_cases() {
        let all_right: Vec<(bool, bool)> = (0..40).map(|i| (i % 3 == 0, i % 3 == 0)).collect();
        let ci = bootstrap_ci::<f64>(&all_right, 200, 0.95, 1).unwrap();
        assert_eq!(
            ci[&Metric::F1],
            Interval {
                lower: 1.0,
                upper: 1.0,
                halfwidth: 0.0
            }
        );
        let mixed: Vec<(bool, bool)> = (0..40).map(|i| (i % 2 == 0, i % 3 == 0)).collect();
        let one = bootstrap_ci::<f64>(&mixed, 1, 0.95, 1).unwrap();
        assert!(one.values().all(|i| i.halfwidth == 0.0));
        assert!(bootstrap_ci::<f64>(&mixed, 0, 0.95, 1).is_err());
        assert!(bootstrap_ci::<f64>(&mixed, 10, 1.0, 1).is_err());
    }

    #[test]
    fn bootstrap_is_reproducible() {
        let mixed: Vec<(bool, bool)> = (0..60).map(|i| (i % 2 == 0, i % 5 < 2)).collect();
        let a = bootstrap_ci::<f64>(&mixed, 300, 0.9, 42).unwrap();
        let b = bootstrap_ci::<f64>(&mixed, 300, 0.9, 42).unwrap();
        assert_eq!(a, b);
        let ba = a[&Metric::BalancedAccuracy];
        assert!(ba.lower <= ba.upper && ba.halfwidth > 0.0);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 0.125), 0.5);
        assert_eq!(quantile(&[7.0], 0.975), 7.0);
    }
}
