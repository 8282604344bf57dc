//! Sensor and survey CSV ingestion.
//!
//! Sensor files carry one modality each (`participant_id,timestamp,value`, or
//! `participant_id,timestamp,stage` for sleep). Survey files carry
//! `participant_id,timestamp,instrument,score`. Timestamps are ISO-8601 UTC
//! and are stored as epoch seconds.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Epoch seconds, UTC.
pub type Timestamp = i64;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema mismatch in {source_name}: expected header `{expected}`, found `{found}`")]
    SchemaMismatch {
        source_name: String,
        expected: String,
        found: String,
    },
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
    #[error("malformed csv")]
    Csv(#[from] csv::Error),
    #[error("unknown {what} `{value}`")]
    UnknownName { what: &'static str, value: String },
}

/// A row that was skipped during parsing. Line numbers are 1-based and count the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowIssue {
    MalformedRow {
        line: u64,
        reason: String,
    },
    ScoreOutOfRange {
        line: u64,
        instrument: Instrument,
        score: i64,
    },
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowIssue::MalformedRow { line, reason } => {
                write!(f, "line {line}: malformed row ({reason})")
            }
            RowIssue::ScoreOutOfRange {
                line,
                instrument,
                score,
            } => {
                let (lo, hi) = instrument.score_range();
                write!(
                    f,
                    "line {line}: {instrument} score {score} outside [{lo}, {hi}]"
                )
            }
        }
    }
}

/// Parsed records plus every rejected row.
#[derive(Debug, Clone)]
pub struct Parsed<R> {
    pub records: Vec<R>,
    pub issues: Vec<RowIssue>,
}

/// Pseudonymous participant token.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParticipantId(Arc<str>);

impl ParticipantId {
    pub fn new(id: &str) -> Option<Self> {
        let id = id.trim();
        if id.is_empty() {
            None
        } else {
            Some(Self(Arc::from(id)))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Calories,
    Distance,
    Steps,
    #[serde(rename = "heart")]
    HeartRate,
    Sleep,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Calories,
        Modality::Distance,
        Modality::Steps,
        Modality::HeartRate,
        Modality::Sleep,
    ];

    /// Native sampling cadence in seconds.
    pub fn cadence_secs(self) -> i64 {
        match self {
            Modality::HeartRate => 5,
            _ => 60,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Calories => "calories",
            Modality::Distance => "distance",
            Modality::Steps => "steps",
            Modality::HeartRate => "heart",
            Modality::Sleep => "sleep",
        }
    }

    pub fn is_numeric(self) -> bool {
        self != Modality::Sleep
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "calories" => Ok(Modality::Calories),
            "distance" => Ok(Modality::Distance),
            "steps" | "step" => Ok(Modality::Steps),
            "heart" | "heartrate" | "heart_rate" => Ok(Modality::HeartRate),
            "sleep" => Ok(Modality::Sleep),
            _ => Err(IngestError::UnknownName {
                what: "modality",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SleepStage {
    Awake,
    Light,
    Deep,
    Rem,
}

impl SleepStage {
    pub const ALL: [SleepStage; 4] = [
        SleepStage::Awake,
        SleepStage::Light,
        SleepStage::Deep,
        SleepStage::Rem,
    ];

    /// Ordinal code used for the stage-variability channel.
    pub fn code(self) -> u8 {
        match self {
            SleepStage::Awake => 0,
            SleepStage::Light => 1,
            SleepStage::Deep => 2,
            SleepStage::Rem => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SleepStage::Awake => "awake",
            SleepStage::Light => "light",
            SleepStage::Deep => "deep",
            SleepStage::Rem => "rem",
        }
    }
}

impl FromStr for SleepStage {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "awake" => Ok(SleepStage::Awake),
            "light" => Ok(SleepStage::Light),
            "deep" => Ok(SleepStage::Deep),
            "rem" => Ok(SleepStage::Rem),
            _ => Err(IngestError::UnknownName {
                what: "sleep stage",
                value: s.to_string(),
            }),
        }
    }
}

/// Screening instruments and their positive-screen cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Instrument {
    #[serde(rename = "CESD10")]
    Cesd10,
    #[serde(rename = "STAI")]
    Stai,
    #[serde(rename = "PSS4")]
    Pss4,
}

impl Instrument {
    pub const ALL: [Instrument; 3] = [Instrument::Cesd10, Instrument::Stai, Instrument::Pss4];

    pub fn score_range(self) -> (i64, i64) {
        match self {
            Instrument::Cesd10 => (0, 30),
            Instrument::Stai => (20, 80),
            Instrument::Pss4 => (0, 16),
        }
    }

    pub fn cutoff(self) -> i64 {
        match self {
            Instrument::Cesd10 => 10,
            Instrument::Stai => 40,
            Instrument::Pss4 => 6,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Instrument::Cesd10 => "CESD10",
            Instrument::Stai => "STAI",
            Instrument::Pss4 => "PSS4",
        }
    }

    /// Screening target the instrument labels.
    pub fn condition(self) -> &'static str {
        match self {
            Instrument::Cesd10 => "depression",
            Instrument::Stai => "anxiety",
            Instrument::Pss4 => "stress",
        }
    }

    pub fn from_condition(name: &str) -> Option<Self> {
        Instrument::ALL.into_iter().find(|i| i.condition() == name)
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Instrument {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "CESD10" => Ok(Instrument::Cesd10),
            "STAI" => Ok(Instrument::Stai),
            "PSS4" => Ok(Instrument::Pss4),
            _ => Err(IngestError::UnknownName {
                what: "instrument",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScreenLabel {
    Negative,
    Positive,
}

impl ScreenLabel {
    pub fn is_positive(self) -> bool {
        self == ScreenLabel::Positive
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reading {
    Value(f64),
    Stage(SleepStage),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPoint {
    pub participant: ParticipantId,
    pub modality: Modality,
    pub timestamp: Timestamp,
    pub reading: Reading,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub participant: ParticipantId,
    pub timestamp: Timestamp,
    pub instrument: Instrument,
    pub score: i64,
}

/// Positive iff the score reaches the instrument cutoff.
pub fn binarize_label(resp: &SurveyResponse) -> ScreenLabel {
    if resp.score >= resp.instrument.cutoff() {
        ScreenLabel::Positive
    } else {
        ScreenLabel::Negative
    }
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|dt| dt.timestamp())
}

pub fn format_timestamp(t: Timestamp) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

pub fn sensor_header(modality: Modality) -> &'static str {
    if modality == Modality::Sleep {
        "participant_id,timestamp,stage"
    } else {
        "participant_id,timestamp,value"
    }
}

pub const SURVEY_HEADER: &str = "participant_id,timestamp,instrument,score";

fn check_header(
    rdr: &mut csv::Reader<impl Read>,
    expected: &str,
    source_name: &str,
) -> Result<(), IngestError> {
    let found = rdr
        .headers()?
        .iter()
        .map(str::trim)
        .collect::<Vec<_>>()
        .join(",");
    if found != expected {
        return Err(IngestError::SchemaMismatch {
            source_name: source_name.to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input)
}

pub fn parse_sensor_file(
    path: &Path,
    modality: Modality,
) -> Result<Parsed<SensorPoint>, IngestError> {
    let name = path.display().to_string();
    parse_sensor_reader(File::open(path)?, modality, &name)
}

/// Parse sensor rows, sort by `(participant, timestamp)` and keep the last of any duplicate.
pub fn parse_sensor_reader<R: Read>(
    input: R,
    modality: Modality,
    source_name: &str,
) -> Result<Parsed<SensorPoint>, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, sensor_header(modality), source_name)?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                issues.push(RowIssue::MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = row.position().map_or(line, |p| p.line());
        match sensor_row(&row, modality) {
            Ok(point) => records.push(point),
            Err(reason) => issues.push(RowIssue::MalformedRow { line, reason }),
        }
    }

    records.sort_by(|a, b| (&a.participant, a.timestamp).cmp(&(&b.participant, b.timestamp)));
    let records = dedup_keep_last(records, |a, b| {
        a.participant == b.participant && a.timestamp == b.timestamp
    });
    Ok(Parsed { records, issues })
}

fn sensor_row(row: &csv::StringRecord, modality: Modality) -> Result<SensorPoint, String> {
    if row.len() != 3 {
        return Err(format!("expected 3 fields, found {}", row.len()));
    }
    let participant = ParticipantId::new(&row[0]).ok_or("empty participant_id")?;
    let timestamp =
        parse_timestamp(&row[1]).ok_or_else(|| format!("bad timestamp `{}`", &row[1]))?;
    let reading = if modality == Modality::Sleep {
        Reading::Stage(row[2].parse::<SleepStage>().map_err(|e| e.to_string())?)
    } else {
        let v: f64 = row[2]
            .trim()
            .parse()
            .map_err(|_| format!("bad value `{}`", &row[2]))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!(
                "value `{}` is not a finite non-negative number",
                &row[2]
            ));
        }
        Reading::Value(v)
    };
    Ok(SensorPoint {
        participant,
        modality,
        timestamp,
        reading,
    })
}

/// Collapse runs of equal keys in a sorted vector, keeping the last element of each run.
fn dedup_keep_last<T>(sorted: Vec<T>, same: impl Fn(&T, &T) -> bool) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(sorted.len());
    for item in sorted {
        match out.last_mut() {
            Some(last) if same(last, &item) => *last = item,
            _ => out.push(item),
        }
    }
    out
}

pub fn parse_survey_file(path: &Path) -> Result<Parsed<SurveyResponse>, IngestError> {
    let name = path.display().to_string();
    parse_survey_reader(File::open(path)?, &name)
}

pub fn parse_survey_reader<R: Read>(
    input: R,
    source_name: &str,
) -> Result<Parsed<SurveyResponse>, IngestError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, SURVEY_HEADER, source_name)?;

    let mut records = Vec::new();
    let mut issues = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                issues.push(RowIssue::MalformedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        }
        let line = row.position().map_or(line, |p| p.line());
        match survey_row(&row) {
            Ok(resp) => {
                let (lo, hi) = resp.instrument.score_range();
                if resp.score < lo || resp.score > hi {
                    issues.push(RowIssue::ScoreOutOfRange {
                        line,
                        instrument: resp.instrument,
                        score: resp.score,
                    });
                } else {
                    records.push(resp);
                }
            }
            Err(reason) => issues.push(RowIssue::MalformedRow { line, reason }),
        }
    }
    records.sort_by(|a, b| {
        (&a.participant, a.timestamp, a.instrument).cmp(&(
            &b.participant,
            b.timestamp,
            b.instrument,
        ))
    });
    Ok(Parsed { records, issues })
}

fn survey_row(row: &csv::StringRecord) -> Result<SurveyResponse, String> {
    if row.len() != 4 {
        return Err(format!("expected 4 fields, found {}", row.len()));
    }
    let participant = ParticipantId::new(&row[0]).ok_or("empty participant_id")?;
    let timestamp =
        parse_timestamp(&row[1]).ok_or_else(|| format!("bad timestamp `{}`", &row[1]))?;
    let instrument = row[2].parse::<Instrument>().map_err(|e| e.to_string())?;
    let score: i64 = row[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad score `{}`", &row[3]))?;
    Ok(SurveyResponse {
        participant,
        timestamp,
        instrument,
        score,
    })
}

/// Write points in the canonical sensor schema. All points must share `modality`.
pub fn write_sensor_csv<W: Write>(
    out: W,
    modality: Modality,
    points: &[SensorPoint],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{}", sensor_header(modality))?;
    for p in points {
        let ts = format_timestamp(p.timestamp);
        match p.reading {
            Reading::Value(v) => writeln!(out, "{},{},{}", p.participant, ts, v)?,
            Reading::Stage(s) => writeln!(out, "{},{},{}", p.participant, ts, s.name())?,
        }
    }
    out.flush()
}

pub fn write_survey_csv<W: Write>(out: W, responses: &[SurveyResponse]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "{SURVEY_HEADER}")?;
    for r in responses {
        writeln!(
            out,
            "{},{},{},{}",
            r.participant,
            format_timestamp(r.timestamp),
            r.instrument,
            r.score
        )?;
    }
    out.flush()
}
