//! Cadence regularization, sentinel cleaning and imputation.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    format_timestamp, Modality, ParticipantId, Reading, SensorPoint, SleepStage, Timestamp,
};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreprocessError {
    #[error("no sensor points to regularize")]
    EmptyInput,
    #[error("points span more than one (participant, modality) series")]
    MixedSeries,
    #[error("series for {participant}/{modality} has no observed value")]
    AllMissing {
        participant: ParticipantId,
        modality: Modality,
    },
    #[error("operation not defined for {0} series")]
    WrongModality(Modality),
}

/// Regular-cadence samples; `None` marks a missing slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SeriesValues<T> {
    Numeric(Vec<Option<T>>),
    Sleep(Vec<Option<SleepStage>>),
}

impl<T> SeriesValues<T> {
    pub fn len(&self) -> usize {
        match self {
            SeriesValues::Numeric(v) => v.len(),
            SeriesValues::Sleep(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, i: usize) -> bool {
        match self {
            SeriesValues::Numeric(v) => v[i].is_none(),
            SeriesValues::Sleep(v) => v[i].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_missing(i)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularSeries<T> {
    pub participant: ParticipantId,
    pub modality: Modality,
    /// Timestamp of slot 0, a multiple of `cadence`.
    pub start: Timestamp,
    pub cadence: i64,
    pub values: SeriesValues<T>,
}

impl<T> RegularSeries<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Exclusive end of the grid.
    pub fn end(&self) -> Timestamp {
        self.start + self.cadence * self.len() as i64
    }
}

/// Longest missing run that imputation may fill. Longer runs stay missing so that
/// downstream windows overlapping them are masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapCap {
    pub max_gap_secs: Option<i64>,
}

impl Default for GapCap {
    fn default() -> Self {
        Self {
            max_gap_secs: Some(6 * 3600),
        }
    }
}

impl GapCap {
    pub const NONE: GapCap = GapCap { max_gap_secs: None };

    fn allows(&self, run_len: usize, cadence: i64) -> bool {
        self.max_gap_secs
            .is_none_or(|cap| run_len as i64 * cadence <= cap)
    }
}

/// Place sorted points of one series on the native cadence grid.
///
/// Each point goes to its nearest slot (ties round up); a later point landing in
/// an occupied slot overwrites it.
pub fn regularize<T: Scalar>(points: &[SensorPoint]) -> Result<RegularSeries<T>, PreprocessError> {
    let first = points.first().ok_or(PreprocessError::EmptyInput)?;
    let (participant, modality) = (first.participant.clone(), first.modality);
    if points
        .iter()
        .any(|p| p.participant != participant || p.modality != modality)
    {
        return Err(PreprocessError::MixedSeries);
    }
    let cadence = modality.cadence_secs();
    let slot = |t: Timestamp| (t + cadence / 2).div_euclid(cadence);
    let first_slot = points
        .iter()
        .map(|p| slot(p.timestamp))
        .min()
        .expect("non-empty");
    let last_slot = points
        .iter()
        .map(|p| slot(p.timestamp))
        .max()
        .expect("non-empty");
    let len = (last_slot - first_slot + 1) as usize;

    let values = if modality.is_numeric() {
        let mut v = vec![None; len];
        for p in points {
            if let Reading::Value(x) = p.reading {
                v[(slot(p.timestamp) - first_slot) as usize] = Some(T::of(x));
            }
        }
        SeriesValues::Numeric(v)
    } else {
        let mut v = vec![None; len];
        for p in points {
            if let Reading::Stage(s) = p.reading {
                v[(slot(p.timestamp) - first_slot) as usize] = Some(s);
            }
        }
        SeriesValues::Sleep(v)
    };
    Ok(RegularSeries {
        participant,
        modality,
        start: first_slot * cadence,
        cadence,
        values,
    })
}

/// Exact zeros become missing for heart rate and calories; other modalities pass through.
pub fn clean_sentinels<T: Scalar>(mut series: RegularSeries<T>) -> RegularSeries<T> {
    if matches!(series.modality, Modality::HeartRate | Modality::Calories) {
        if let SeriesValues::Numeric(v) = &mut series.values {
            for x in v.iter_mut() {
                if *x == Some(T::zero()) {
                    *x = None;
                }
            }
        }
    }
    series
}

/// Maximal runs of missing slots as `(first, len)`.
fn missing_runs(is_missing: impl Fn(usize) -> bool, n: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < n {
        if is_missing(i) {
            let s = i;
            while i < n && is_missing(i) {
                i += 1;
            }
            runs.push((s, i - s));
        } else {
            i += 1;
        }
    }
    runs
}

/// Linear interpolation without a gap cap.
pub fn impute_linear<T: Scalar>(
    series: RegularSeries<T>,
) -> Result<RegularSeries<T>, PreprocessError> {
    impute_linear_capped(series, GapCap::NONE)
}

/// Linear interpolation of interior runs, nearest-value extension at the edges.
/// Runs longer than `cap` are left missing.
pub fn impute_linear_capped<T: Scalar>(
    mut series: RegularSeries<T>,
    cap: GapCap,
) -> Result<RegularSeries<T>, PreprocessError> {
    let cadence = series.cadence;
    let SeriesValues::Numeric(v) = &mut series.values else {
        return Err(PreprocessError::WrongModality(series.modality));
    };
    let n = v.len();
    if v.iter().all(Option::is_none) {
        return Err(PreprocessError::AllMissing {
            participant: series.participant.clone(),
            modality: series.modality,
        });
    }
    for (s, len) in missing_runs(|i| v[i].is_none(), n) {
        if !cap.allows(len, cadence) {
            continue;
        }
        let e = s + len; // first observed index after the run, or n
        match (
            s.checked_sub(1).and_then(|i| v[i]),
            v.get(e).copied().flatten(),
        ) {
            (Some(a), Some(b)) => {
                let i = s - 1;
                let span = T::of_usize(e - i);
                for (k, slot) in v.iter_mut().enumerate().take(e).skip(s) {
                    *slot = Some(a + T::of_usize(k - i) * (b - a) / span);
                }
            }
            (Some(a), None) => v[s..e].iter_mut().for_each(|x| *x = Some(a)),
            (None, Some(b)) => v[s..e].iter_mut().for_each(|x| *x = Some(b)),
            (None, None) => unreachable!("at least one observed value exists"),
        }
    }
    Ok(series)
}

pub fn impute_sleep<T>(series: RegularSeries<T>) -> Result<RegularSeries<T>, PreprocessError> {
    impute_sleep_capped(series, GapCap::NONE)
}

/// Missing runs touching an awake sample or a series boundary become awake; runs
/// strictly between two sleep stages carry the preceding stage forward.
pub fn impute_sleep_capped<T>(
    mut series: RegularSeries<T>,
    cap: GapCap,
) -> Result<RegularSeries<T>, PreprocessError> {
    let cadence = series.cadence;
    let SeriesValues::Sleep(v) = &mut series.values else {
        return Err(PreprocessError::WrongModality(series.modality));
    };
    let n = v.len();
    for (s, len) in missing_runs(|i| v[i].is_none(), n) {
        if !cap.allows(len, cadence) {
            continue;
        }
        let e = s + len;
        let before = s.checked_sub(1).and_then(|i| v[i]);
        let after = v.get(e).copied().flatten();
        let fill = match (before, after) {
            (Some(b), Some(a)) if b != SleepStage::Awake && a != SleepStage::Awake => b,
            _ => SleepStage::Awake,
        };
        v[s..e].iter_mut().for_each(|x| *x = Some(fill));
    }
    Ok(series)
}

/// Full per-series cleaning: regularize, drop sentinels, impute under `cap`.
pub fn prepare_series<T: Scalar>(
    points: &[SensorPoint],
    cap: GapCap,
) -> Result<RegularSeries<T>, PreprocessError> {
    let series = clean_sentinels(regularize::<T>(points)?);
    if series.modality.is_numeric() {
        impute_linear_capped(series, cap)
    } else {
        impute_sleep_capped(series, cap)
    }
}

/// Debug dump: `participant,modality,timestamp,value` with empty value for missing slots.
pub fn write_series_csv<T: Scalar, W: Write>(
    out: W,
    series: &RegularSeries<T>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "participant,modality,timestamp,value")?;
    for i in 0..series.len() {
        let ts = format_timestamp(series.start + series.cadence * i as i64);
        let value = match &series.values {
            SeriesValues::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
            SeriesValues::Sleep(v) => v[i].map(|s| s.name().to_string()).unwrap_or_default(),
        };
        writeln!(
            out,
            "{},{},{},{}",
            series.participant, series.modality, ts, value
        )?;
    }
    out.flush()
}
