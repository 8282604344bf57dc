//! Raw inputs to labelled weekly feature records.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, Granularity};
use crate::features::{extract_features, FeatureRecord, ModalitySet};
use crate::ingest::{
    parse_sensor_file, parse_survey_file, IngestError, Modality, ParticipantId, RowIssue,
    SensorPoint, SurveyResponse,
};
use crate::preprocess::{prepare_series, GapCap, RegularSeries};
use crate::segment::{build_segments, inclusion_filter, InclusionReport};
use crate::synth::{sensor_file_name, SynthDataset, SURVEY_FILE};
use crate::Real;

/// Parsed sensor and survey rows.
#[derive(Debug, Clone, Default)]
pub struct Inputs {
    pub sensors: BTreeMap<Modality, Vec<SensorPoint>>,
    pub surveys: Vec<SurveyResponse>,
    /// `(file name, issue)` for every rejected row.
    pub issues: Vec<(String, RowIssue)>,
}

impl Inputs {
    pub fn participants(&self) -> Vec<ParticipantId> {
        let mut all: Vec<ParticipantId> = self
            .sensors
            .values()
            .flatten()
            .map(|p| p.participant.clone())
            .chain(self.surveys.iter().map(|s| s.participant.clone()))
            .collect();
        all.sort();
        all.dedup();
        all
    }
}

impl From<SynthDataset> for Inputs {
    fn from(d: SynthDataset) -> Self {
        Inputs {
            sensors: d.sensors,
            surveys: d.surveys,
            issues: Vec::new(),
        }
    }
}

/// Read `<modality>.csv` for every modality present in `dir`, plus `surveys.csv`.
pub fn load_dir(dir: &Path) -> Result<Inputs, IngestError> {
    let mut inputs = Inputs::default();
    for m in Modality::ALL {
        let name = sensor_file_name(m);
        let path = dir.join(&name);
        if !path.exists() {
            continue;
        }
        let parsed = parse_sensor_file(&path, m)?;
        inputs
            .issues
            .extend(parsed.issues.into_iter().map(|i| (name.clone(), i)));
        inputs.sensors.insert(m, parsed.records);
    }
    let parsed = parse_survey_file(&dir.join(SURVEY_FILE))?;
    inputs.issues.extend(
        parsed
            .issues
            .into_iter()
            .map(|i| (SURVEY_FILE.to_string(), i)),
    );
    inputs.surveys = parsed.records;
    Ok(inputs)
}

/// Cleaned, imputed native-cadence series, computed once per run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub series: Vec<RegularSeries<Real>>,
    pub surveys: Vec<SurveyResponse>,
    pub participants: Vec<ParticipantId>,
    pub utc_offset_secs: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareOptions {
    pub gap_cap_hours: Option<u32>,
    pub utc_offset_secs: i64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            gap_cap_hours: Some(6),
            utc_offset_secs: 0,
        }
    }
}

pub fn prepare(inputs: &Inputs, opts: PrepareOptions) -> Prepared {
    let cap = GapCap {
        max_gap_secs: opts.gap_cap_hours.map(|h| i64::from(h) * 3600),
    };
    let mut groups: Vec<Cow<[SensorPoint]>> = Vec::new();
    for points in inputs.sensors.values() {
        let mut by_participant: BTreeMap<&ParticipantId, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            by_participant.entry(&p.participant).or_default().push(i);
        }
        for idx in by_participant.values() {
            // rows for one participant are contiguous in generated and typical exports
            let (lo, hi) = (idx[0], idx[idx.len() - 1]);
            if hi - lo + 1 == idx.len() {
                groups.push(Cow::Borrowed(&points[lo..=hi]));
            } else {
                groups.push(Cow::Owned(idx.iter().map(|&i| points[i].clone()).collect()));
            }
        }
    }
    let series: Vec<RegularSeries<Real>> = groups
        .par_iter()
        .filter_map(|pts| prepare_series::<Real>(pts, cap).ok())
        .collect();
    Prepared {
        series,
        surveys: inputs.surveys.clone(),
        participants: inputs.participants(),
        utc_offset_secs: opts.utc_offset_secs,
    }
}

/// Weekly feature records for one modality set and granularity. Weeks lacking
/// any modality of the set are dropped.
pub fn feature_records(
    prepared: &Prepared,
    set: ModalitySet,
    g: Granularity,
) -> (Vec<FeatureRecord<Real>>, InclusionReport) {
    let wanted = set.modalities();
    let aggregated: Vec<_> = prepared
        .series
        .par_iter()
        .filter(|s| wanted.contains(&s.modality))
        .map(|s| aggregate(s, g, prepared.utc_offset_secs))
        .collect();
    let segments = build_segments(&aggregated, &prepared.surveys, prepared.utc_offset_secs);
    let complete: Vec<_> = segments
        .into_iter()
        .filter(|s| wanted.iter().all(|m| s.slices.contains_key(m)))
        .collect();
    let (kept, report) = inclusion_filter(complete, &prepared.participants);
    let records = kept
        .iter()
        .filter_map(|s| extract_features(s, set).ok())
        .collect();
    (records, report)
}
