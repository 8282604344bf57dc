//! Midnight-anchored window aggregation at 1, 4, 6, 8, 12 or 24 hours.
//!
//! Activity counts are summed, heart rate is averaged, sleep is tallied per
//! stage. Every modality also gets a population standard-deviation channel.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_timestamp, Modality, ParticipantId, SleepStage, Timestamp};
use crate::preprocess::{RegularSeries, SeriesValues};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("granularity {0} h is not one of 1, 4, 6, 8, 12, 24")]
    InvalidGranularity(u32),
    #[error("{op} aggregation does not apply to {modality}")]
    WrongModality {
        op: &'static str,
        modality: Modality,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Granularity(u32);

impl Granularity {
    pub const HOURS: [u32; 6] = [1, 4, 6, 8, 12, 24];

    pub fn new(hours: u32) -> Result<Self, AggregateError> {
        if Self::HOURS.contains(&hours) {
            Ok(Self(hours))
        } else {
            Err(AggregateError::InvalidGranularity(hours))
        }
    }

    pub fn all() -> Vec<Granularity> {
        Self::HOURS.iter().map(|&h| Granularity(h)).collect()
    }

    pub fn hours(self) -> u32 {
        self.0
    }

    pub fn secs(self) -> i64 {
        i64::from(self.0) * 3600
    }

    pub fn windows_per_week(self) -> usize {
        (7 * 24 / self.0) as usize
    }
}

impl TryFrom<u32> for Granularity {
    type Error = AggregateError;

    fn try_from(h: u32) -> Result<Self, Self::Error> {
        Granularity::new(h)
    }
}

impl From<Granularity> for u32 {
    fn from(g: Granularity) -> u32 {
        g.0
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let h: u32 = s
            .trim()
            .trim_end_matches('h')
            .parse()
            .map_err(|_| format!("bad granularity `{s}`"))?;
        Granularity::new(h).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel<T> {
    pub name: String,
    pub values: Vec<T>,
}

/// Windowed multi-channel series. Masked windows hold NaN in every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedSeries<T> {
    pub participant: ParticipantId,
    pub modality: Modality,
    pub granularity: Granularity,
    pub window_start: Timestamp,
    pub channels: Vec<Channel<T>>,
    pub valid: Vec<bool>,
}

impl<T: Scalar> AggregatedSeries<T> {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[T]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn window_time(&self, w: usize) -> Timestamp {
        self.window_start + self.granularity.secs() * w as i64
    }
}

pub fn channel_names(modality: Modality) -> &'static [&'static str] {
    if modality == Modality::Sleep {
        &[
            "count_awake",
            "count_light",
            "count_deep",
            "count_rem",
            "std_stagecode",
        ]
    } else {
        &["agg", "std"]
    }
}

/// Full windows of length `g` inside the series grid, anchored at local midnight.
/// Returns the first window start and the window count.
fn window_grid<T>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
) -> (Timestamp, usize) {
    let len = g.secs();
    let rem = (series.start + utc_offset_secs).rem_euclid(len);
    let first = if rem == 0 {
        series.start
    } else {
        series.start + (len - rem)
    };
    let n = if series.end() >= first {
        ((series.end() - first) / len) as usize
    } else {
        0
    };
    (first, n)
}

fn mean_and_std<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

fn aggregate_numeric<T: Scalar>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
    summarize: impl Fn(&[T]) -> T,
) -> AggregatedSeries<T> {
    let SeriesValues::Numeric(values) = &series.values else {
        unreachable!("caller checked modality");
    };
    let (first, n) = window_grid(series, g, utc_offset_secs);
    let per_window = (g.secs() / series.cadence) as usize;
    let offset = ((first - series.start) / series.cadence) as usize;

    let mut agg = Vec::with_capacity(n);
    let mut std = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(per_window);
    for w in 0..n {
        let lo = offset + w * per_window;
        buf.clear();
        buf.extend(values[lo..lo + per_window].iter().flatten().copied());
        if buf.len() == per_window {
            agg.push(summarize(&buf));
            std.push(mean_and_std(&buf).1);
            valid.push(true);
        } else {
            agg.push(T::nan());
            std.push(T::nan());
            valid.push(false);
        }
    }
    AggregatedSeries {
        participant: series.participant.clone(),
        modality: series.modality,
        granularity: g,
        window_start: first,
        channels: vec![
            Channel {
                name: "agg".into(),
                values: agg,
            },
            Channel {
                name: "std".into(),
                values: std,
            },
        ],
        valid,
    }
}

/// Window sums for calories, distance and steps.
pub fn aggregate_sum<T: Scalar>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
) -> Result<AggregatedSeries<T>, AggregateError> {
    if !matches!(
        series.modality,
        Modality::Calories | Modality::Distance | Modality::Steps
    ) {
        return Err(AggregateError::WrongModality {
            op: "sum",
            modality: series.modality,
        });
    }
    Ok(aggregate_numeric(series, g, utc_offset_secs, |xs| {
        xs.iter().copied().sum()
    }))
}

/// Window means for heart rate.
pub fn aggregate_mean<T: Scalar>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
) -> Result<AggregatedSeries<T>, AggregateError> {
    if series.modality != Modality::HeartRate {
        return Err(AggregateError::WrongModality {
            op: "mean",
            modality: series.modality,
        });
    }
    Ok(aggregate_numeric(series, g, utc_offset_secs, |xs| {
        mean_and_std(xs).0
    }))
}

/// Per-stage minute counts plus the std of ordinal stage codes.
pub fn aggregate_sleep<T: Scalar>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
) -> Result<AggregatedSeries<T>, AggregateError> {
    let SeriesValues::Sleep(values) = &series.values else {
        return Err(AggregateError::WrongModality {
            op: "sleep",
            modality: series.modality,
        });
    };
    let (first, n) = window_grid(series, g, utc_offset_secs);
    let per_window = (g.secs() / series.cadence) as usize;
    let offset = ((first - series.start) / series.cadence) as usize;

    let mut counts: [Vec<T>; 4] = Default::default();
    let mut std = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    let mut codes = Vec::with_capacity(per_window);
    for w in 0..n {
        let lo = offset + w * per_window;
        let window = &values[lo..lo + per_window];
        if window.iter().any(Option::is_none) {
            counts.iter_mut().for_each(|c| c.push(T::nan()));
            std.push(T::nan());
            valid.push(false);
            continue;
        }
        let mut tally = [0usize; 4];
        codes.clear();
        for stage in window.iter().flatten() {
            tally[stage.code() as usize] += 1;
            codes.push(T::of(f64::from(stage.code())));
        }
        for (c, &k) in counts.iter_mut().zip(&tally) {
            c.push(T::of_usize(k));
        }
        std.push(mean_and_std(&codes).1);
        valid.push(true);
    }
    let names = channel_names(Modality::Sleep);
    let mut channels: Vec<Channel<T>> = SleepStage::ALL
        .iter()
        .zip(counts)
        .map(|(s, values)| Channel {
            name: names[s.code() as usize].to_string(),
            values,
        })
        .collect();
    channels.push(Channel {
        name: names[4].to_string(),
        values: std,
    });
    Ok(AggregatedSeries {
        participant: series.participant.clone(),
        modality: Modality::Sleep,
        granularity: g,
        window_start: first,
        channels,
        valid,
    })
}

/// Dispatch on modality.
pub fn aggregate<T: Scalar>(
    series: &RegularSeries<T>,
    g: Granularity,
    utc_offset_secs: i64,
) -> AggregatedSeries<T> {
    let out = match series.modality {
        Modality::Calories | Modality::Distance | Modality::Steps => {
            aggregate_sum(series, g, utc_offset_secs)
        }
        Modality::HeartRate => aggregate_mean(series, g, utc_offset_secs),
        Modality::Sleep => aggregate_sleep(series, g, utc_offset_secs),
    };
    out.expect("dispatch matches modality")
}

/// `participant,modality,granularity,window_start,channel,value`; masked windows are skipped.
pub fn write_aggregated_csv<T: Scalar, W: Write>(
    out: W,
    series: &[AggregatedSeries<T>],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(
        out,
        "participant,modality,granularity,window_start,channel,value"
    )?;
    for s in series {
        for w in (0..s.len()).filter(|&w| s.valid[w]) {
            let ts = format_timestamp(s.window_time(w));
            for c in &s.channels {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.participant, s.modality, s.granularity, ts, c.name, c.values[w]
                )?;
            }
        }
    }
    out.flush()
}
