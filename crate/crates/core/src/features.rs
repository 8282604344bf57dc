//! Fixed statistical feature records for weekly segments.
//!
//! Fifteen statistics per channel. Variance and standard deviation divide by
//! `n`. Quartiles use the 1-based order-statistic positions `(n+1)/4` and
//! `3(n+1)/4`, interpolating linearly between neighbours when the position is
//! fractional and clamping to the extremes. Entropy runs over the empirical
//! frequencies of distinct values with the natural log. Mode ties resolve to
//! the smallest value.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{channel_names, Granularity};
use crate::ingest::{
    format_timestamp, Instrument, Modality, ParticipantId, ScreenLabel, Timestamp,
};
use crate::scalar::{total_cmp, Scalar};
use crate::segment::{WeekLabel, WeeklySegment};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("channel `{0}` is empty")]
    EmptyChannel(String),
    #[error("channel `{0}` contains a non-finite value")]
    NonFinite(String),
    #[error("segment lacks modality {0}")]
    MissingModality(Modality),
}

pub const STAT_NAMES: [&str; 15] = [
    "mean", "mode", "median", "std", "variance", "range", "iqr", "q1", "q3", "sum", "unique",
    "min", "max", "rms", "entropy",
];

/// The fifteen statistics of one channel, in `STAT_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: T,
    pub mode: T,
    pub median: T,
    pub std: T,
    pub variance: T,
    pub range: T,
    pub iqr: T,
    pub q1: T,
    pub q3: T,
    pub sum: T,
    pub unique: T,
    pub min: T,
    pub max: T,
    pub rms: T,
    pub entropy: T,
}

impl<T: Scalar> ChannelStats<T> {
    pub fn to_array(&self) -> [T; 15] {
        [
            self.mean,
            self.mode,
            self.median,
            self.std,
            self.variance,
            self.range,
            self.iqr,
            self.q1,
            self.q3,
            self.sum,
            self.unique,
            self.min,
            self.max,
            self.rms,
            self.entropy,
        ]
    }
}

/// Order statistic at 1-based fractional position `pos` of sorted data.
fn order_statistic<T: Scalar>(sorted: &[T], pos: T) -> T {
    let n = sorted.len();
    if pos <= T::one() {
        return sorted[0];
    }
    if pos >= T::of_usize(n) {
        return sorted[n - 1];
    }
    let lo = pos.floor();
    let frac = pos - lo;
    let i = lo.to_usize().expect("position in range") - 1;
    if frac == T::zero() {
        sorted[i]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn channel_stats<T: Scalar>(name: &str, values: &[T]) -> Result<ChannelStats<T>, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyChannel(name.to_string()));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(FeatureError::NonFinite(name.to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(total_cmp);
    let n = sorted.len();
    let nf = T::of_usize(n);

    let sum: T = values.iter().copied().sum();
    let mean = sum / nf;
    let variance = values.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / nf;
    let rms = (values.iter().map(|&x| x * x).sum::<T>() / nf).sqrt();

    // runs of equal values in sorted order
    let mut runs: Vec<(T, usize)> = Vec::new();
    for &x in &sorted {
        match runs.last_mut() {
            Some((v, c)) if *v == x => *c += 1,
            _ => runs.push((x, 1)),
        }
    }
    let mut mode = runs[0];
    for &r in &runs[1..] {
        if r.1 > mode.1 {
            mode = r;
        }
    }
    let entropy = runs
        .iter()
        .map(|&(_, c)| {
            let p = T::of_usize(c) / nf;
            -(p * p.ln())
        })
        .sum::<T>();

    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::of(2.0)
    };
    let q1 = order_statistic(&sorted, (nf + T::one()) / T::of(4.0));
    let q3 = order_statistic(&sorted, T::of(3.0) * (nf + T::one()) / T::of(4.0));
    let (min, max) = (sorted[0], sorted[n - 1]);

    Ok(ChannelStats {
        mean,
        mode: mode.0,
        median,
        std: variance.sqrt(),
        variance,
        range: max - min,
        iqr: q3 - q1,
        q1,
        q3,
        sum,
        unique: T::of_usize(runs.len()),
        min,
        max,
        rms,
        entropy: entropy.max(T::zero()),
    })
}

/// Either one modality or the concatenation of all five.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModalitySet {
    All,
    Single(Modality),
}

impl ModalitySet {
    /// Report row order.
    pub const TABLE_ORDER: [ModalitySet; 6] = [
        ModalitySet::All,
        ModalitySet::Single(Modality::Calories),
        ModalitySet::Single(Modality::Distance),
        ModalitySet::Single(Modality::HeartRate),
        ModalitySet::Single(Modality::Sleep),
        ModalitySet::Single(Modality::Steps),
    ];

    pub fn modalities(self) -> Vec<Modality> {
        match self {
            ModalitySet::All => Modality::ALL.to_vec(),
            ModalitySet::Single(m) => vec![m],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalitySet::All => "all",
            ModalitySet::Single(m) => m.name(),
        }
    }

    pub fn table_rank(self) -> usize {
        Self::TABLE_ORDER
            .iter()
            .position(|&m| m == self)
            .expect("every set is in the table")
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalitySet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim() == "all" {
            return Ok(ModalitySet::All);
        }
        s.parse::<Modality>()
            .map(ModalitySet::Single)
            .map_err(|e| e.to_string())
    }
}

impl TryFrom<String> for ModalitySet {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModalitySet> for String {
    fn from(m: ModalitySet) -> String {
        m.name().to_string()
    }
}

/// `<modality>_<channel>_<stat>` for every selected modality.
pub fn feature_names(set: ModalitySet) -> Vec<String> {
    let mut names = Vec::new();
    for m in set.modalities() {
        for ch in channel_names(m) {
            for stat in STAT_NAMES {
                names.push(format!("{}_{}_{}", m.name(), ch, stat));
            }
        }
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord<T> {
    pub participant: ParticipantId,
    pub week_start: Timestamp,
    pub granularity: Granularity,
    pub labels: BTreeMap<Instrument, WeekLabel>,
    pub names: Vec<String>,
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureRecord<T> {
    pub fn get(&self, name: &str) -> Option<T> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }
}

pub fn extract_features<T: Scalar>(
    segment: &WeeklySegment<T>,
    set: ModalitySet,
) -> Result<FeatureRecord<T>, FeatureError> {
    let mut values = Vec::new();
    for m in set.modalities() {
        let slice = segment
            .slices
            .get(&m)
            .ok_or(FeatureError::MissingModality(m))?;
        for ch in channel_names(m) {
            let channel = slice
                .channels
                .iter()
                .find(|c| c.name == *ch)
                .ok_or_else(|| FeatureError::EmptyChannel(format!("{m}_{ch}")))?;
            values.extend(channel_stats(&format!("{m}_{ch}"), &channel.values)?.to_array());
        }
    }
    Ok(FeatureRecord {
        participant: segment.participant.clone(),
        week_start: segment.week_start,
        granularity: segment.granularity,
        labels: segment.labels.clone(),
        names: feature_names(set),
        values,
    })
}

/// Feature matrix CSV: identifiers, feature columns, then one label column per instrument.
pub fn write_feature_csv<T: Scalar, W: Write>(
    out: W,
    set: ModalitySet,
    records: &[FeatureRecord<T>],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    let names = feature_names(set);
    writeln!(
        out,
        "participant,week_start,{},label_cesd,label_stai,label_pss",
        names.join(",")
    )?;
    for r in records {
        write!(out, "{},{}", r.participant, format_timestamp(r.week_start))?;
        for v in &r.values {
            write!(out, ",{v}")?;
        }
        for inst in Instrument::ALL {
            let l = match r.labels.get(&inst).map(|l| l.label) {
                Some(ScreenLabel::Positive) => "1",
                Some(ScreenLabel::Negative) => "0",
                None => "",
            };
            write!(out, ",{l}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(xs: &[f64]) -> ChannelStats<f64> {
        channel_stats("c", xs).unwrap()
    }

    #[test]
    fn four_point_closed_forms() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.sum, 10.0);
        assert_eq!(s.range, 3.0);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(s.unique, 4.0);
        assert_eq!(s.variance, 1.25);
        assert!((s.std - 1.118_033_988_749_895).abs() < 1e-12);
        assert!((s.rms - 7.5f64.sqrt()).abs() < 1e-12);
        // positions 1.25 and 3.75
        assert_eq!(s.q1, 1.25);
        assert_eq!(s.q3, 3.75);
    }

    #[test]
    fn constant_channel() {
        let s = stats(&[7.0, 7.0, 7.0]);
        assert_eq!(
            (s.std, s.variance, s.range, s.iqr, s.entropy),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!((s.mode, s.rms, s.unique), (7.0, 7.0, 1.0));
    }

    #[test]
    fn integer_quartile_positions() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!((s.q1, s.q3, s.iqr), (2.0, 6.0, 4.0));
        assert_eq!(s.median, 4.0);
    }

    #[test]
    fn entropy_and_mode_ties() {
        let s = stats(&[2.0, 1.0, 2.0, 1.0]);
        assert!((s.entropy - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(s.mode, 1.0);
        assert_eq!(stats(&[3.0, 5.0, 5.0, 1.0]).mode, 5.0);
    }

    #[test]
    fn empty_and_nan_rejected() {
        assert_eq!(
            channel_stats::<f64>("x", &[]).unwrap_err(),
            FeatureError::EmptyChannel("x".into())
        );
        assert!(channel_stats("x", &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn feature_name_layout() {
        let names = feature_names(ModalitySet::Single(Modality::Steps));
        assert_eq!(names.len(), 30);
        assert_eq!(names[0], "steps_agg_mean");
        assert_eq!(names[29], "steps_std_entropy");
        assert_eq!(
            feature_names(ModalitySet::Single(Modality::Sleep)).len(),
            75
        );
        assert_eq!(feature_names(ModalitySet::All).len(), 4 * 30 + 75);
    }

    #[test]
    fn generic_over_f32() {
        let s = channel_stats::<f32>("c", &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5f32);
        assert_eq!(s.q1, 1.25f32);
    }

    fn arb_channel() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(
            prop_oneof![(-50i32..50).prop_map(f64::from), -1e3f64..1e3],
            1..60,
        )
    }

    proptest! {
        #[test]
        fn ordering_and_identities(xs in arb_channel()) {
            let s = stats(&xs);
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert_eq!(s.range, s.max - s.min);
            prop_assert_eq!(s.iqr, s.q3 - s.q1);
            prop_assert!((s.variance - s.std * s.std).abs() <= 1e-9 * (1.0 + s.variance));
            prop_assert!(s.rms >= s.mean.abs() - 1e-9 * (1.0 + s.rms));
            prop_assert!(s.entropy >= 0.0 && s.entropy <= s.unique.ln() + 1e-12);
            prop_assert_eq!(s.entropy == 0.0, s.unique == 1.0);
        }

        #[test]
        fn permutation_invariant(xs in arb_channel(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut ys = xs.clone();
            ys.shuffle(&mut crate::seed::rng(seed));
            let (a, b) = (stats(&xs).to_array(), stats(&ys).to_array());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn shift_covariance(xs in prop::collection::vec((-50i32..50).prop_map(f64::from), 1..60), c in (-20i32..20).prop_map(f64::from)) {
            // integer data keeps the shift exact
            let a = stats(&xs);
            let b = stats(&xs.iter().map(|x| x + c).collect::<Vec<_>>());
            for (x, y) in [(a.mean, b.mean), (a.median, b.median), (a.mode, b.mode), (a.min, b.min), (a.max, b.max), (a.q1, b.q1), (a.q3, b.q3)] {
                prop_assert!((x + c - y).abs() <= 1e-9);
            }
            for (x, y) in [(a.std, b.std), (a.variance, b.variance), (a.range, b.range), (a.iqr, b.iqr), (a.unique, b.unique), (a.entropy, b.entropy)] {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }
}
