//! Monday-to-Sunday segmentation and survey label attachment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregate::{AggregatedSeries, Channel, Granularity};
use crate::ingest::{
    binarize_label, format_timestamp, Instrument, Modality, ParticipantId, ScreenLabel,
    SurveyResponse, Timestamp,
};
use crate::scalar::Scalar;

pub const DAY_SECS: i64 = 86_400;
pub const WEEK_SECS: i64 = 7 * DAY_SECS;

/// Survey distances beyond this are flagged in the segment manifest.
pub const AUDIT_DISTANCE_DAYS: f64 = 31.0;

/// True when `t` is local Monday 00:00. 1970-01-01 was a Thursday.
pub fn is_local_monday_midnight(t: Timestamp, utc_offset_secs: i64) -> bool {
    let local = t + utc_offset_secs;
    local.rem_euclid(DAY_SECS) == 0 && (local.div_euclid(DAY_SECS) - 4).rem_euclid(7) == 0
}

/// One modality's windows for one complete week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekSlice<T> {
    pub participant: ParticipantId,
    pub modality: Modality,
    pub granularity: Granularity,
    pub week_start: Timestamp,
    pub channels: Vec<Channel<T>>,
}

impl<T> WeekSlice<T> {
    pub fn n_windows(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }
}

/// Every complete local Monday-Sunday span with no masked window.
pub fn cut_weeks<T: Scalar>(agg: &AggregatedSeries<T>, utc_offset_secs: i64) -> Vec<WeekSlice<T>> {
    let per_week = agg.granularity.windows_per_week();
    let mut out = Vec::new();
    let mut w = 0;
    while w + per_week <= agg.len() {
        let t = agg.window_time(w);
        if !is_local_monday_midnight(t, utc_offset_secs) {
            w += 1;
            continue;
        }
        if agg.valid[w..w + per_week].iter().all(|&v| v) {
            out.push(WeekSlice {
                participant: agg.participant.clone(),
                modality: agg.modality,
                granularity: agg.granularity,
                week_start: t,
                channels: agg
                    .channels
                    .iter()
                    .map(|c| Channel {
                        name: c.name.clone(),
                        values: c.values[w..w + per_week].to_vec(),
                    })
                    .collect(),
            });
        }
        w += per_week;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekLabel {
    pub score: i64,
    pub label: ScreenLabel,
    pub survey_timestamp: Timestamp,
    /// Absolute distance from the week midpoint, seconds.
    pub survey_distance_secs: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklySegment<T> {
    pub participant: ParticipantId,
    pub week_start: Timestamp,
    pub granularity: Granularity,
    pub slices: BTreeMap<Modality, WeekSlice<T>>,
    /// Instruments without any survey for this participant are absent.
    pub labels: BTreeMap<Instrument, WeekLabel>,
}

impl<T> WeeklySegment<T> {
    pub fn week_midpoint(&self) -> Timestamp {
        self.week_start + WEEK_SECS / 2
    }

    pub fn missing_instruments(&self) -> Vec<Instrument> {
        Instrument::ALL
            .into_iter()
            .filter(|i| !self.labels.contains_key(i))
            .collect()
    }
}

/// The response closest to `midpoint`; ties go to the earlier survey.
pub fn closest_survey<'a>(
    surveys: impl IntoIterator<Item = &'a SurveyResponse>,
    instrument: Instrument,
    midpoint: Timestamp,
) -> Option<&'a SurveyResponse> {
    surveys
        .into_iter()
        .filter(|s| s.instrument == instrument)
        .min_by_key(|s| ((s.timestamp - midpoint).abs(), s.timestamp, s.score))
}

/// Label a week from the participant's surveys, one instrument at a time.
pub fn attach_labels<T>(
    participant: ParticipantId,
    week_start: Timestamp,
    granularity: Granularity,
    slices: BTreeMap<Modality, WeekSlice<T>>,
    surveys: &[SurveyResponse],
) -> WeeklySegment<T> {
    let midpoint = week_start + WEEK_SECS / 2;
    let own: Vec<&SurveyResponse> = surveys
        .iter()
        .filter(|s| s.participant == participant)
        .collect();
    let labels = Instrument::ALL
        .into_iter()
        .filter_map(|inst| {
            closest_survey(own.iter().copied(), inst, midpoint).map(|s| {
                (
                    inst,
                    WeekLabel {
                        score: s.score,
                        label: binarize_label(s),
                        survey_timestamp: s.timestamp,
                        survey_distance_secs: (s.timestamp - midpoint).abs(),
                    },
                )
            })
        })
        .collect();
    WeeklySegment {
        participant,
        week_start,
        granularity,
        slices,
        labels,
    }
}

/// Group complete weeks of several modalities (same granularity) into labeled segments.
///
/// A segment exists for every `(participant, week)` where at least one modality is
/// complete; which modalities are present is recorded in `slices`.
pub fn build_segments<T: Scalar>(
    aggregated: &[AggregatedSeries<T>],
    surveys: &[SurveyResponse],
    utc_offset_secs: i64,
) -> Vec<WeeklySegment<T>> {
    let mut weeks: BTreeMap<
        (ParticipantId, Timestamp, Granularity),
        BTreeMap<Modality, WeekSlice<T>>,
    > = BTreeMap::new();
    for agg in aggregated {
        for slice in cut_weeks(agg, utc_offset_secs) {
            weeks
                .entry((
                    slice.participant.clone(),
                    slice.week_start,
                    slice.granularity,
                ))
                .or_default()
                .insert(slice.modality, slice);
        }
    }
    let mut by_participant: BTreeMap<&ParticipantId, Vec<SurveyResponse>> = BTreeMap::new();
    for s in surveys {
        by_participant
            .entry(&s.participant)
            .or_default()
            .push(s.clone());
    }
    weeks
        .into_iter()
        .map(|((p, week_start, g), slices)| {
            let own = by_participant.get(&p).map(Vec::as_slice).unwrap_or(&[]);
            attach_labels(p, week_start, g, slices, own)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub total: usize,
    pub retained: Vec<ParticipantId>,
    pub dropped: Vec<ParticipantId>,
}

/// Keep participants with at least one complete week.
pub fn inclusion_filter<T>(
    segments: Vec<WeeklySegment<T>>,
    participants: &[ParticipantId],
) -> (Vec<WeeklySegment<T>>, InclusionReport) {
    let with_week: BTreeSet<&ParticipantId> = segments.iter().map(|s| &s.participant).collect();
    let all: BTreeSet<&ParticipantId> = participants
        .iter()
        .chain(with_week.iter().copied())
        .collect();
    let report = InclusionReport {
        total: all.len(),
        retained: all
            .iter()
            .filter(|p| with_week.contains(*p))
            .map(|p| (*p).clone())
            .collect(),
        dropped: all
            .iter()
            .filter(|p| !with_week.contains(*p))
            .map(|p| (*p).clone())
            .collect(),
    };
    (segments, report)
}

pub const MANIFEST_HEADER: &str =
    "participant,week_start,granularity,n_windows,label_cesd,label_stai,label_pss,survey_distance_days,distance_flag";

/// Segment manifest; `survey_distance_days` is the largest distance over attached labels.
pub fn write_segment_manifest<T, W: Write>(
    out: W,
    segments: &[WeeklySegment<T>],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{MANIFEST_HEADER}")?;
    for s in segments {
        let label = |i: Instrument| match s.labels.get(&i).map(|l| l.label) {
            Some(ScreenLabel::Positive) => "positive",
            Some(ScreenLabel::Negative) => "negative",
            None => "",
        };
        let distance = s
            .labels
            .values()
            .map(|l| l.survey_distance_secs)
            .max()
            .map(|d| d as f64 / DAY_SECS as f64);
        let n_windows = s.slices.values().next().map_or(0, |sl| sl.n_windows());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.participant,
            format_timestamp(s.week_start),
            s.granularity,
            n_windows,
            label(Instrument::Cesd10),
            label(Instrument::Stai),
            label(Instrument::Pss4),
            distance.map(|d| format!("{d:.2}")).unwrap_or_default(),
            if distance.is_some_and(|d| d > AUDIT_DISTANCE_DAYS) {
                "over_31d"
            } else {
                ""
            },
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::aggregate_sum;
    use crate::preprocess::{RegularSeries, SeriesValues};

    const MONDAY: i64 = 1_589_760_000; // 2020-05-18T00:00:00Z

    fn pid(s: &str) -> ParticipantId {
        ParticipantId::new(s).unwrap()
    }

    fn daily_steps(start: i64, days: usize) -> AggregatedSeries<f64> {
        let s = RegularSeries {
            participant: pid("p1"),
            modality: Modality::Steps,
            start,
            cadence: 60,
            values: SeriesValues::Numeric(vec![Some(1.0); days * 1440]),
        };
        aggregate_sum(&s, Granularity::new(24).unwrap(), 0).unwrap()
    }

    #[test]
    fn weekday_arithmetic() {
        assert!(is_local_monday_midnight(MONDAY, 0));
        assert!(!is_local_monday_midnight(MONDAY + DAY_SECS, 0));
        assert!(!is_local_monday_midnight(MONDAY + 3600, 0));
        assert!(is_local_monday_midnight(MONDAY - 3600, 3600));
    }

    #[test]
    fn complete_week_counts() {
        assert_eq!(cut_weeks(&daily_steps(MONDAY, 14), 0).len(), 2);
        assert_eq!(cut_weeks(&daily_steps(MONDAY, 13), 0).len(), 1);
    }

    #[test]
    fn wednesday_start_matches_calendar_enumeration() {
        let start = MONDAY + 2 * DAY_SECS;
        for days in 5..30 {
            let got: Vec<i64> = cut_weeks(&daily_steps(start, days), 0)
                .iter()
                .map(|w| w.week_start)
                .collect();
            // enumerate candidate Mondays and keep those whose 7 days lie inside the data
            let end = start + days as i64 * DAY_SECS;
            let want: Vec<i64> = (0..10)
                .map(|k| MONDAY + k * WEEK_SECS)
                .filter(|&m| m >= start && m + WEEK_SECS <= end)
                .collect();
            assert_eq!(got, want, "days={days}");
        }
        assert_eq!(cut_weeks(&daily_steps(start, 11), 0).len(), 0);
        assert_eq!(cut_weeks(&daily_steps(start, 12), 0).len(), 1);
    }

    #[test]
    fn masked_window_drops_week() {
        let mut a = daily_steps(MONDAY, 14);
        a.valid[9] = false;
        let weeks = cut_weeks(&a, 0);
        assert_eq!(weeks.len(), 1);
        assert_eq!(weeks[0].week_start, MONDAY);
        assert_eq!(weeks[0].n_windows(), 7);
    }

    fn survey(p: &str, t: i64, instrument: Instrument, score: i64) -> SurveyResponse {
        SurveyResponse {
            participant: pid(p),
            timestamp: t,
            instrument,
            score,
        }
    }

    #[test]
    fn closest_survey_rules() {
        let mid = MONDAY + WEEK_SECS / 2;
        let a = survey("p1", mid - DAY_SECS, Instrument::Pss4, 3);
        let b = survey("p1", mid + 3 * DAY_SECS, Instrument::Pss4, 9);
        assert_eq!(closest_survey([&a, &b], Instrument::Pss4, mid), Some(&a));
        assert_eq!(closest_survey([&b], Instrument::Pss4, mid), Some(&b));
        let c = survey("p1", mid - 2 * DAY_SECS, Instrument::Pss4, 1);
        let d = survey("p1", mid + 2 * DAY_SECS, Instrument::Pss4, 12);
        assert_eq!(closest_survey([&d, &c], Instrument::Pss4, mid), Some(&c));
    }

    #[test]
    fn tie_rule_exhaustive_over_grid() {
        let mid = MONDAY + WEEK_SECS / 2;
        let offsets: Vec<i64> = (-4..=4).map(|d| d * DAY_SECS / 2).collect();
        for (i, &x) in offsets.iter().enumerate() {
            for &y in &offsets[i..] {
                let a = survey("p1", mid + x, Instrument::Stai, 30);
                let b = survey("p1", mid + y, Instrument::Stai, 50);
                let want = if x.abs() < y.abs() || (x.abs() == y.abs() && x <= y) {
                    &a
                } else {
                    &b
                };
                for order in [[&a, &b], [&b, &a]] {
                    assert_eq!(
                        closest_survey(order, Instrument::Stai, mid)
                            .unwrap()
                            .timestamp,
                        want.timestamp
                    );
                }
            }
        }
    }

    #[test]
    fn labels_attach_per_instrument() {
        let surveys = vec![
            survey("p1", MONDAY + DAY_SECS, Instrument::Cesd10, 12),
            survey("p1", MONDAY + 2 * DAY_SECS, Instrument::Pss4, 2),
            survey("p2", MONDAY, Instrument::Stai, 50),
        ];
        let seg: WeeklySegment<f64> = attach_labels(
            pid("p1"),
            MONDAY,
            Granularity::new(24).unwrap(),
            BTreeMap::new(),
            &surveys,
        );
        assert_eq!(seg.labels[&Instrument::Cesd10].label, ScreenLabel::Positive);
        assert_eq!(seg.labels[&Instrument::Pss4].label, ScreenLabel::Negative);
        assert_eq!(seg.missing_instruments(), vec![Instrument::Stai]);
        assert_eq!(
            seg.labels[&Instrument::Cesd10].survey_distance_secs,
            WEEK_SECS / 2 - DAY_SECS
        );
    }

    #[test]
    fn inclusion_keeps_participants_with_weeks() {
        let aggs = vec![daily_steps(MONDAY, 7)];
        let segs = build_segments(&aggs, &[], 0);
        let (segs, report) = inclusion_filter(segs, &[pid("p1"), pid("p0")]);
        assert_eq!(segs.len(), 1);
        assert_eq!(report.total, 2);
        assert_eq!(report.retained, vec![pid("p1")]);
        assert_eq!(report.dropped, vec![pid("p0")]);
    }

    #[test]
    fn manifest_flags_far_surveys() {
        let surveys = vec![survey("p1", MONDAY + 60 * DAY_SECS, Instrument::Cesd10, 3)];
        let segs = build_segments(&[daily_steps(MONDAY, 7)], &surveys, 0);
        let mut buf = Vec::new();
        write_segment_manifest(&mut buf, &segs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(
            row,
            "p1,2020-05-18T00:00:00Z,24,7,negative,,,56.50,over_31d"
        );
    }
}
