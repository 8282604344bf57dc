//! Seeded synthetic datasets with planted modality/label effects.
//!
//! Each participant gets a latent positive/negative status per instrument.
//! Every modality has one weekly summary level per participant-week (daily
//! steps, nightly wake minutes, daily distance, heart-rate spread, daily
//! calories). With an effect, levels are centred within the label groups of
//! the channel's designated instrument and positives are shifted by a multiple
//! of the realized pooled std. Null levels are redrawn until the group gap
//! falls under the audit ceiling. Levels are then rendered to minute-level rows with a coarse
//! circadian shape.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    format_timestamp, sensor_header, Instrument, Modality, ParticipantId, Reading, SensorPoint,
    SleepStage, SurveyResponse, Timestamp, SURVEY_HEADER,
};
use crate::seed;
use crate::segment::{DAY_SECS, WEEK_SECS};

pub const TRUTH_HEADER: &str = "participant,instrument,latent_label,effect_channels";
pub const DEFAULT_PREVALENCE: [f64; 3] = [0.537, 0.606, 0.608];
/// 2020-01-06T00:00:00Z, a Monday.
pub const DEFAULT_START: Timestamp = 1_578_268_800;
/// Minimum single-threshold accuracy a strong dataset must reach before it is emitted.
pub const SEPARABILITY_FLOOR: f64 = 0.9;
/// Largest group-mean gap, in pooled std, tolerated on a null dataset.
pub const NULL_AUDIT_CEILING: f64 = 0.2;
/// Null-effect level draws tried before the self-audit gives up.
const MAX_NULL_REDRAWS: u64 = 256;

/// Between-participant spread relative to unit week-to-week spread.
const BASELINE_SD: f64 = 0.35;
const MEAN_GAP_LEN: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("separability self-check failed on {channel}: accuracy {accuracy:.3}")]
    NotSeparable { channel: Modality, accuracy: f64 },
    #[error("null self-audit failed on {channel}: gap {gap:.3} pooled std")]
    NullAudit { channel: Modality, gap: f64 },
    #[error("i/o failure")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    #[default]
    None,
    Weak,
    Strong,
}

impl Effect {
    /// Positive-group shift in pooled-std units.
    pub fn shift(self) -> f64 {
        match self {
            Effect::None => 0.0,
            Effect::Weak => 1.0,
            Effect::Strong => 3.5,
        }
    }
}

impl std::str::FromStr for Effect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Effect::None),
            "weak" => Ok(Effect::Weak),
            "strong" => Ok(Effect::Strong),
            _ => Err(format!(
                "unknown effect `{s}` (expected none, weak or strong)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_participants: usize,
    /// Participants with under a week of data; they never yield a complete week.
    pub n_incomplete: usize,
    pub weeks_min: usize,
    pub weeks_max: usize,
    pub effect: Effect,
    /// Target prevalence in `Instrument::ALL` order.
    pub prevalence: [f64; 3],
    pub missingness_rate: f64,
    pub seed: u64,
    /// Must fall on a Monday midnight UTC.
    pub start: Timestamp,
    pub heart_rate_interval_secs: i64,
    pub modalities: Vec<Modality>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 166,
            n_incomplete: 78,
            weeks_min: 2,
            weeks_max: 3,
            effect: Effect::None,
            prevalence: DEFAULT_PREVALENCE,
            missingness_rate: 0.0,
            seed: 0,
            start: DEFAULT_START,
            heart_rate_interval_secs: Modality::HeartRate.cadence_secs(),
            modalities: Modality::ALL.to_vec(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if let Some(p) = self.prevalence.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("prevalence {p} outside (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.missingness_rate) {
            return bad(format!(
                "missingness_rate {} outside [0, 1)",
                self.missingness_rate
            ));
        }
        if self.weeks_min == 0 || self.weeks_min > self.weeks_max {
            return bad(format!(
                "weeks range {}..={} is empty or zero",
                self.weeks_min, self.weeks_max
            ));
        }
        if self.n_incomplete > self.n_participants {
            return bad("n_incomplete exceeds n_participants".into());
        }
        if self.start.rem_euclid(WEEK_SECS) != 4 * DAY_SECS {
            return bad(format!(
                "start {} is not a Monday midnight",
                format_timestamp(self.start)
            ));
        }
        if self.heart_rate_interval_secs <= 0 || 60 % self.heart_rate_interval_secs != 0 {
            return bad(format!(
                "heart_rate_interval_secs {} must divide 60",
                self.heart_rate_interval_secs
            ));
        }
        if self.modalities.is_empty() {
            return bad("no modalities selected".into());
        }
        Ok(())
    }
}

/// Designated instrument of each planted channel.
pub fn designated(m: Modality) -> Option<Instrument> {
    match m {
        Modality::Steps | Modality::Sleep => Some(Instrument::Cesd10),
        Modality::Distance => Some(Instrument::Stai),
        Modality::HeartRate => Some(Instrument::Pss4),
        Modality::Calories => None,
    }
}

/// Channels carrying the planted effect for `inst`.
pub fn effect_channels(inst: Instrument) -> Vec<Modality> {
    Modality::ALL
        .into_iter()
        .filter(|&m| designated(m) == Some(inst))
        .collect()
}

struct LevelSpec {
    mean: f64,
    unit: f64,
    /// Sign of the positive-group shift.
    direction: f64,
    floor: f64,
}

fn level_spec(m: Modality) -> LevelSpec {
    match m {
        Modality::Steps => LevelSpec {
            mean: 9000.0,
            unit: 1200.0,
            direction: -1.0,
            floor: 300.0,
        },
        Modality::Sleep => LevelSpec {
            mean: 15.0,
            unit: 5.0,
            direction: 1.0,
            floor: 0.0,
        },
        Modality::Distance => LevelSpec {
            mean: 6.0,
            unit: 0.8,
            direction: -1.0,
            floor: 0.2,
        },
        Modality::HeartRate => LevelSpec {
            mean: 6.0,
            unit: 1.2,
            direction: 1.0,
            floor: 1.0,
        },
        Modality::Calories => LevelSpec {
            mean: 2200.0,
            unit: 150.0,
            direction: 1.0,
            floor: 1200.0,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub participant: ParticipantId,
    pub instrument: Instrument,
    pub positive: bool,
    pub effect_channels: Vec<Modality>,
}

/// Planted weekly summary for one participant-week and modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyLevel {
    pub participant: ParticipantId,
    pub week_start: Timestamp,
    pub modality: Modality,
    pub level: f64,
}

/// Per-channel self-audit of the planted levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAudit {
    pub modality: Modality,
    pub instrument: Option<Instrument>,
    /// |mean(pos) - mean(neg)| / pooled std.
    pub standardized_gap: f64,
    /// Best single-threshold accuracy on the level.
    pub threshold_accuracy: f64,
}

#[derive(Debug, Clone)]
struct Participant {
    id: ParticipantId,
    labels: [bool; 3],
    /// Empty for incomplete participants.
    week_starts: Vec<Timestamp>,
    incomplete_days: i64,
    seed: u64,
}

/// The latent plan: labels, week layout and planted levels, before rendering.
#[derive(Debug, Clone)]
pub struct Plan {
    config: SynthConfig,
    participants: Vec<Participant>,
    levels: BTreeMap<(usize, usize, Modality), f64>,
    pub audit: Vec<ChannelAudit>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthDataset {
    pub sensors: BTreeMap<Modality, Vec<SensorPoint>>,
    pub surveys: Vec<SurveyResponse>,
    pub truth: Vec<TruthRow>,
    pub levels: Vec<WeeklyLevel>,
    pub audit: Vec<ChannelAudit>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn exact_positive_mask(n: usize, prevalence: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (prevalence * n as f64).round() as usize;
    let mut mask: Vec<bool> = (0..n).map(|i| i < k).collect();
    mask.shuffle(rng);
    mask
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    let ss = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    let dof = (a.len() + b.len()).saturating_sub(2).max(1) as f64;
    ((ss(a) + ss(b)) / dof).sqrt()
}

/// Best accuracy of `x > t` or `x <= t` over all thresholds.
pub fn best_threshold_accuracy(values: &[f64], labels: &[bool]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total_pos = labels.iter().filter(|&&l| l).count();
    // predicting positive above the cut: correct = neg below + pos above
    let (mut neg_below, mut pos_below) = (0usize, 0usize);
    let mut best = total_pos.max(n - total_pos);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            pos_below += 1;
        } else {
            neg_below += 1;
        }
        let tie_next = order.get(k + 1).is_some_and(|&j| values[j] == values[i]);
        if tie_next {
            continue;
        }
        let above = neg_below + (total_pos - pos_below);
        best = best.max(above).max(n - above);
    }
    best as f64 / n as f64
}

impl Plan {
    pub fn new(config: &SynthConfig) -> Result<Self, SynthError> {
        config.validate()?;
        let n = config.n_participants;
        let mut label_rng = seed::rng(seed::derive(config.seed, "labels"));
        let masks: Vec<Vec<bool>> = Instrument::ALL
            .iter()
            .zip(config.prevalence)
            .map(|(_, p)| exact_positive_mask(n, p, &mut label_rng))
            .collect();
        let mut layout_rng = seed::rng(seed::derive(config.seed, "layout"));
        let mut incomplete: Vec<bool> = (0..n).map(|i| i < config.n_incomplete).collect();
        incomplete.shuffle(&mut layout_rng);

        let participants: Vec<Participant> = (0..n)
            .map(|i| {
                let id = ParticipantId::new(&format!("p{:03}", i + 1)).expect("non-empty id");
                let pseed = seed::derive(config.seed, id.as_str());
                let mut r = seed::rng(seed::derive(pseed, "layout"));
                let offset_weeks = r.random_range(0..4i64);
                let first = config.start + offset_weeks * WEEK_SECS;
                let (week_starts, incomplete_days) = if incomplete[i] {
                    (Vec::new(), r.random_range(3..=6i64))
                } else {
                    let w = r.random_range(config.weeks_min..=config.weeks_max);
                    ((0..w as i64).map(|k| first + k * WEEK_SECS).collect(), 0)
                };
                Participant {
                    id,
                    labels: [masks[0][i], masks[1][i], masks[2][i]],
                    week_starts,
                    incomplete_days,
                    seed: pseed,
                }
            })
            .collect();

        let mut plan = Plan {
            config: config.clone(),
            participants,
            levels: BTreeMap::new(),
            audit: Vec::new(),
        };
        for m in Modality::ALL {
            plan.plant(m);
        }
        plan.audit = Modality::ALL
            .into_iter()
            .map(|m| plan.audit_channel(m))
            .collect();
        plan.self_check()?;
        Ok(plan)
    }

    fn label_of(&self, p: &Participant, inst: Option<Instrument>) -> bool {
        inst.is_some_and(|i| {
            p.labels[Instrument::ALL
                .iter()
                .position(|&x| x == i)
                .expect("known instrument")]
        })
    }

    fn plant(&mut self, m: Modality) {
        let spec = level_spec(m);
        let inst = designated(m);
        let draw = |attempt: u64| {
            let mut raw: Vec<(usize, usize, f64, bool)> = Vec::new();
            for (pi, p) in self.participants.iter().enumerate() {
                let stream = seed::derive(seed::derive(p.seed, "levels"), m.name());
                let mut r = seed::rng(if attempt == 0 {
                    stream
                } else {
                    seed::derive_index(stream, attempt)
                });
                let base = BASELINE_SD * gauss(&mut r);
                let positive = self.label_of(p, inst);
                for wi in 0..p.week_starts.len() {
                    raw.push((pi, wi, base + gauss(&mut r), positive));
                }
            }
            raw
        };
        // gap of the unshifted levels, floor included
        let gap = |raw: &[(usize, usize, f64, bool)]| {
            let level = |z: f64| (spec.mean + spec.unit * z).max(spec.floor);
            let pos: Vec<f64> = raw.iter().filter(|t| t.3).map(|t| level(t.2)).collect();
            let neg: Vec<f64> = raw.iter().filter(|t| !t.3).map(|t| level(t.2)).collect();
            if pos.is_empty() || neg.is_empty() {
                return 0.0;
            }
            let s = pooled_std(&pos, &neg);
            if s > 0.0 {
                (mean(&pos) - mean(&neg)).abs() / s
            } else {
                0.0
            }
        };
        let mut raw = draw(0);
        if self.config.effect == Effect::None {
            // Redraw rather than centre: exact centring makes a held-out
            // participant's group mean anti-correlated with the rest.
            let mut attempt = 0;
            while inst.is_some() && gap(&raw) >= NULL_AUDIT_CEILING && attempt < MAX_NULL_REDRAWS {
                attempt += 1;
                raw = draw(attempt);
            }
        } else {
            for group in [false, true] {
                let vals: Vec<f64> = raw.iter().filter(|t| t.3 == group).map(|t| t.2).collect();
                if vals.is_empty() {
                    continue;
                }
                let mu = mean(&vals);
                for t in raw.iter_mut().filter(|t| t.3 == group) {
                    t.2 -= mu;
                }
            }
        }
        let pos: Vec<f64> = raw.iter().filter(|t| t.3).map(|t| t.2).collect();
        let neg: Vec<f64> = raw.iter().filter(|t| !t.3).map(|t| t.2).collect();
        let s = if raw.len() > 1 {
            pooled_std(&pos, &neg)
        } else {
            1.0
        };
        let shift = if inst.is_some() {
            self.config.effect.shift() * s
        } else {
            0.0
        };
        for (pi, wi, z, positive) in raw {
            let z = if positive {
                z + spec.direction * shift
            } else {
                z
            };
            let level = (spec.mean + spec.unit * z).max(spec.floor);
            self.levels.insert((pi, wi, m), level);
        }
    }

    fn audit_channel(&self, m: Modality) -> ChannelAudit {
        let inst = designated(m).unwrap_or(Instrument::Cesd10);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (&(pi, _, mm), &v) in &self.levels {
            if mm == m {
                values.push(v);
                labels.push(self.label_of(&self.participants[pi], Some(inst)));
            }
        }
        let pos: Vec<f64> = values
            .iter()
            .zip(&labels)
            .filter(|t| *t.1)
            .map(|t| *t.0)
            .collect();
        let neg: Vec<f64> = values
            .iter()
            .zip(&labels)
            .filter(|t| !*t.1)
            .map(|t| *t.0)
            .collect();
        let standardized_gap = if pos.is_empty() || neg.is_empty() {
            0.0
        } else {
            let s = pooled_std(&pos, &neg);
            if s > 0.0 {
                (mean(&pos) - mean(&neg)).abs() / s
            } else {
                0.0
            }
        };
        ChannelAudit {
            modality: m,
            instrument: designated(m),
            standardized_gap,
            threshold_accuracy: best_threshold_accuracy(&values, &labels),
        }
    }

    fn self_check(&self) -> Result<(), SynthError> {
        for a in &self.audit {
            let planted = a.instrument.is_some();
            match self.config.effect {
                Effect::Strong if planted && a.threshold_accuracy < SEPARABILITY_FLOOR => {
                    return Err(SynthError::NotSeparable {
                        channel: a.modality,
                        accuracy: a.threshold_accuracy,
                    })
                }
                Effect::None if planted && a.standardized_gap >= NULL_AUDIT_CEILING => {
                    return Err(SynthError::NullAudit {
                        channel: a.modality,
                        gap: a.standardized_gap,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn participants(&self) -> Vec<ParticipantId> {
        self.participants.iter().map(|p| p.id.clone()).collect()
    }

    pub fn truth(&self) -> Vec<TruthRow> {
        let mut rows = Vec::new();
        for p in &self.participants {
            for (k, inst) in Instrument::ALL.into_iter().enumerate() {
                let channels = if self.config.effect == Effect::None {
                    Vec::new()
                } else {
                    effect_channels(inst)
                };
                rows.push(TruthRow {
                    participant: p.id.clone(),
                    instrument: inst,
                    positive: p.labels[k],
                    effect_channels: channels,
                });
            }
        }
        rows
    }

    pub fn weekly_levels(&self) -> Vec<WeeklyLevel> {
        self.levels
            .iter()
            .map(|(&(pi, wi, m), &level)| {
                let p = &self.participants[pi];
                WeeklyLevel {
                    participant: p.id.clone(),
                    week_start: p.week_starts[wi],
                    modality: m,
                    level,
                }
            })
            .collect()
    }

    pub fn surveys(&self) -> Vec<SurveyResponse> {
        let mut out = Vec::new();
        for p in &self.participants {
            let mut r = seed::rng(seed::derive(p.seed, "surveys"));
            let times: Vec<Timestamp> = if p.week_starts.is_empty() {
                vec![self.config.start + DAY_SECS]
            } else {
                p.week_starts
                    .iter()
                    .map(|w| w + WEEK_SECS / 2 + r.random_range(-6 * 3600..=6 * 3600))
                    .collect()
            };
            for t in times {
                for (k, inst) in Instrument::ALL.into_iter().enumerate() {
                    let (lo, hi) = inst.score_range();
                    let c = inst.cutoff();
                    let score = if p.labels[k] {
                        r.random_range(c..=hi)
                    } else {
                        r.random_range(lo..c)
                    };
                    out.push(SurveyResponse {
                        participant: p.id.clone(),
                        timestamp: t,
                        instrument: inst,
                        score,
                    });
                }
            }
        }
        out
    }

    /// Day indices (relative to the participant's first day) with a planted level.
    fn days(&self, p: &Participant) -> (Timestamp, Vec<Option<usize>>) {
        if p.week_starts.is_empty() {
            // starts on a Wednesday so no Monday-to-Sunday week fits
            let first = self.config.start + 2 * DAY_SECS;
            (first, vec![None; p.incomplete_days as usize])
        } else {
            let first = p.week_starts[0];
            (
                first,
                (0..p.week_starts.len() * 7).map(|d| Some(d / 7)).collect(),
            )
        }
    }

    /// Minute-level rows for one participant and modality, in time order.
    pub fn render(&self, pi: usize, m: Modality) -> Vec<SensorPoint> {
        let p = &self.participants[pi];
        let spec = level_spec(m);
        let mut r = seed::rng(seed::derive(seed::derive(p.seed, "render"), m.name()));
        let (first, days) = self.days(p);
        let mut out = Vec::new();
        let interval = if m == Modality::HeartRate {
            self.config.heart_rate_interval_secs
        } else {
            60
        };
        let per_day = (DAY_SECS / interval) as usize;
        for (d, week) in days.iter().enumerate() {
            let level = week.map_or(spec.mean, |wi| self.levels[&(pi, wi, m)]);
            let day_start = first + d as i64 * DAY_SECS;
            let profile = activity_profile(&mut r);
            match m {
                Modality::Steps | Modality::Distance | Modality::Calories => {
                    let daily = (level * (1.0 + 0.08 * gauss(&mut r))).max(spec.floor * 0.5);
                    for (k, &w) in profile.weights.iter().enumerate() {
                        let v = match m {
                            Modality::Steps => (daily * w).round(),
                            Modality::Distance => round_to(daily * w, 1e4),
                            _ => round_to(daily * (0.6 / 1440.0 + 0.4 * w), 1e3),
                        };
                        out.push(point(p, m, day_start + 60 * k as i64, Reading::Value(v)));
                    }
                }
                Modality::HeartRate => {
                    let sd = (level * (1.0 + 0.05 * gauss(&mut r))).max(0.5);
                    for k in 0..per_day {
                        let minute = k * interval as usize / 60;
                        let awake = profile.weights[minute] > 0.0;
                        let hr = (60.0 + if awake { 10.0 } else { 0.0 } + sd * gauss(&mut r))
                            .round()
                            .clamp(35.0, 200.0);
                        out.push(point(
                            p,
                            m,
                            day_start + interval * k as i64,
                            Reading::Value(hr),
                        ));
                    }
                    let cadence = m.cadence_secs();
                    if d + 1 == days.len() && interval > cadence {
                        // close the native grid so the final window is fully covered
                        let last = out.last().map_or(0.0, |pt| match pt.reading {
                            Reading::Value(v) => v,
                            Reading::Stage(_) => 0.0,
                        });
                        out.push(point(
                            p,
                            m,
                            day_start + DAY_SECS - cadence,
                            Reading::Value(last),
                        ));
                    }
                }
                Modality::Sleep => {
                    let wake_minutes = (level + 3.0 * gauss(&mut r)).max(0.0).round() as usize;
                    let stages = sleep_day(&profile, wake_minutes, &mut r);
                    for (k, s) in stages.into_iter().enumerate() {
                        out.push(point(p, m, day_start + 60 * k as i64, Reading::Stage(s)));
                    }
                }
            }
        }
        self.drop_missing_runs(out, &mut r)
    }

    fn drop_missing_runs(&self, points: Vec<SensorPoint>, r: &mut ChaCha8Rng) -> Vec<SensorPoint> {
        let rate = self.config.missingness_rate;
        if rate <= 0.0 {
            return points;
        }
        let p_start = rate / (MEAN_GAP_LEN * (1.0 - rate));
        let mut remaining = 0usize;
        let mut kept = Vec::with_capacity(points.len());
        for pt in points {
            if remaining == 0 && r.random_bool(p_start.min(1.0)) {
                remaining = r.random_range(1..=(2.0 * MEAN_GAP_LEN) as usize - 1);
            }
            if remaining > 0 {
                remaining -= 1;
            } else {
                kept.push(pt);
            }
        }
        kept
    }

    /// Render every participant, handing each participant's rows to `sink`.
    pub fn render_all(
        &self,
        mut sink: impl FnMut(Modality, Vec<SensorPoint>) -> Result<(), SynthError>,
    ) -> Result<(), SynthError> {
        for pi in 0..self.participants.len() {
            for &m in &self.config.modalities {
                sink(m, self.render(pi, m))?;
            }
        }
        Ok(())
    }
}

fn round_to(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

fn point(
    p: &Participant,
    modality: Modality,
    timestamp: Timestamp,
    reading: Reading,
) -> SensorPoint {
    SensorPoint {
        participant: p.id.clone(),
        modality,
        timestamp,
        reading,
    }
}

struct DayProfile {
    /// Per-minute activity share, summing to 1; zero while asleep.
    weights: Vec<f64>,
    wake: usize,
    bed: usize,
}

fn activity_profile(r: &mut ChaCha8Rng) -> DayProfile {
    let wake = 420 + r.random_range(0..60usize) - 30;
    let bed = 1380 + r.random_range(0..60usize) - 30;
    let bump = |m: f64, c: f64, w: f64| (-(m - c).powi(2) / (2.0 * w * w)).exp();
    let mut weights: Vec<f64> = (0..1440)
        .map(|k| {
            if k < wake || k >= bed {
                return 0.0;
            }
            let m = k as f64;
            let shape =
                0.3 + bump(m, 510.0, 40.0) + 0.8 * bump(m, 750.0, 45.0) + bump(m, 1080.0, 60.0);
            shape * r.random_range(0.2..1.8)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    DayProfile { weights, wake, bed }
}

/// Stages for one calendar day: asleep before `wake` and after `bed`, with
/// `wake_minutes` of night awakenings split into short bouts.
fn sleep_day(profile: &DayProfile, wake_minutes: usize, r: &mut ChaCha8Rng) -> Vec<SleepStage> {
    const CYCLE: [(SleepStage, usize); 3] = [
        (SleepStage::Light, 50),
        (SleepStage::Deep, 20),
        (SleepStage::Rem, 20),
    ];
    let mut stages = vec![SleepStage::Awake; 1440];
    let phase = r.random_range(0..90usize);
    let mut asleep = Vec::new();
    for (k, s) in stages.iter_mut().enumerate() {
        if k < profile.wake || k >= profile.bed {
            let mut t = (k + 1440 - profile.bed + phase) % 90;
            *s = CYCLE
                .iter()
                .find(|(_, len)| {
                    let hit = t < *len;
                    if !hit {
                        t -= len;
                    }
                    hit
                })
                .map_or(SleepStage::Light, |c| c.0);
            asleep.push(k);
        }
    }
    let n_bouts = wake_minutes.div_ceil(4);
    let mut left = wake_minutes;
    for b in 0..n_bouts {
        let len = left / (n_bouts - b);
        left -= len;
        if asleep.len() > len {
            let at = r.random_range(0..asleep.len() - len);
            for &k in &asleep[at..at + len] {
                stages[k] = SleepStage::Awake;
            }
        }
    }
    stages
}

/// Build the plan and render everything in memory.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset, SynthError> {
    let plan = Plan::new(config)?;
    let mut sensors: BTreeMap<Modality, Vec<SensorPoint>> =
        config.modalities.iter().map(|&m| (m, Vec::new())).collect();
    plan.render_all(|m, pts| {
        sensors.entry(m).or_default().extend(pts);
        Ok(())
    })?;
    Ok(SynthDataset {
        sensors,
        surveys: plan.surveys(),
        truth: plan.truth(),
        levels: plan.weekly_levels(),
        audit: plan.audit.clone(),
    })
}

pub fn sensor_file_name(m: Modality) -> String {
    format!("{}.csv", m.name())
}

pub const SURVEY_FILE: &str = "surveys.csv";
pub const TRUTH_FILE: &str = "truth_manifest.csv";

fn write_points<W: Write>(out: &mut W, pts: &[SensorPoint]) -> std::io::Result<()> {
    for p in pts {
        let ts = format_timestamp(p.timestamp);
        match p.reading {
            Reading::Value(v) => writeln!(out, "{},{},{}", p.participant, ts, v)?,
            Reading::Stage(s) => writeln!(out, "{},{},{}", p.participant, ts, s.name())?,
        }
    }
    Ok(())
}

pub fn write_truth_csv<W: Write>(mut out: W, rows: &[TruthRow]) -> std::io::Result<()> {
    writeln!(out, "{TRUTH_HEADER}")?;
    for t in rows {
        let channels: Vec<&str> = t.effect_channels.iter().map(|m| m.name()).collect();
        let label = if t.positive { "positive" } else { "negative" };
        writeln!(
            out,
            "{},{},{},{}",
            t.participant,
            t.instrument,
            label,
            channels.join(";")
        )?;
    }
    Ok(())
}

/// Stream a dataset to `dir`, one CSV per selected modality plus surveys and truth.
pub fn write_to_dir(config: &SynthConfig, dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let plan = Plan::new(config)?;
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let mut writers: BTreeMap<Modality, BufWriter<File>> = BTreeMap::new();
    for &m in &config.modalities {
        let path = dir.join(sensor_file_name(m));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{}", sensor_header(m))?;
        writers.insert(m, w);
        paths.push(path);
    }
    plan.render_all(|m, pts| {
        write_points(writers.get_mut(&m).expect("writer per modality"), &pts)?;
        Ok(())
    })?;
    for w in writers.values_mut() {
        w.flush()?;
    }

    let survey_path = dir.join(SURVEY_FILE);
    let mut w = BufWriter::new(File::create(&survey_path)?);
    writeln!(w, "{SURVEY_HEADER}")?;
    for s in plan.surveys() {
        writeln!(
            w,
            "{},{},{},{}",
            s.participant,
            format_timestamp(s.timestamp),
            s.instrument,
            s.score
        )?;
    }
    w.flush()?;
    paths.push(survey_path);

    let truth_path = dir.join(TRUTH_FILE);
    let mut w = BufWriter::new(File::create(&truth_path)?);
    write_truth_csv(&mut w, &plan.truth())?;
    w.flush()?;
    paths.push(truth_path);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(effect: Effect, seed: u64) -> SynthConfig {
        SynthConfig {
            n_participants: 12,
            n_incomplete: 2,
            weeks_min: 1,
            weeks_max: 2,
            effect,
            seed,
            heart_rate_interval_secs: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_start_is_monday() {
        assert_eq!(format_timestamp(DEFAULT_START), "2020-01-06T00:00:00Z");
        assert!(SynthConfig::default().validate().is_ok());
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = small(Effect::None, 1);
        c.prevalence[1] = 1.0;
        assert!(c.validate().is_err());
        let mut c = small(Effect::None, 1);
        c.missingness_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = small(Effect::None, 1);
        c.start += DAY_SECS;
        assert!(c.validate().is_err());
    }

    #[test]
    fn threshold_accuracy_oracle() {
        assert_eq!(
            best_threshold_accuracy(&[1.0, 2.0, 3.0, 4.0], &[false, false, true, true]),
            1.0
        );
        assert_eq!(
            best_threshold_accuracy(&[1.0, 2.0, 3.0, 4.0], &[true, true, false, false]),
            1.0
        );
        // ties cannot be split
        assert_eq!(best_threshold_accuracy(&[1.0, 1.0], &[true, false]), 0.5);
        assert_eq!(
            best_threshold_accuracy(&[1.0, 2.0, 3.0], &[false, true, false]),
            2.0 / 3.0
        );
    }

    #[test]
    fn exact_prevalence_counts() {
        let c = SynthConfig {
            n_participants: 100,
            n_incomplete: 0,
            ..small(Effect::None, 3)
        };
        let d = Plan::new(&c).unwrap().truth();
        for (k, inst) in Instrument::ALL.into_iter().enumerate() {
            let pos = d
                .iter()
                .filter(|t| t.instrument == inst && t.positive)
                .count();
            assert_eq!(pos, (DEFAULT_PREVALENCE[k] * 100.0).round() as usize);
        }
    }

    #[test]
    fn null_gap_is_small_and_strong_gap_is_large() {
        let none = Plan::new(&small(Effect::None, 5)).unwrap();
        assert!(
            none.audit
                .iter()
                .filter(|a| a.instrument.is_some())
                .all(|a| a.standardized_gap < NULL_AUDIT_CEILING),
            "{:?}",
            none.audit
        );
        let strong = Plan::new(&small(Effect::Strong, 5)).unwrap();
        for a in strong.audit.iter().filter(|a| a.instrument.is_some()) {
            assert!(a.standardized_gap >= 1.5, "{a:?}");
            assert!(a.threshold_accuracy >= SEPARABILITY_FLOOR);
        }
    }

    #[test]
    fn sleep_day_has_requested_awakenings() {
        let mut r = seed::rng(9);
        let profile = activity_profile(&mut r);
        let night_minutes = profile.wake + 1440 - profile.bed;
        let base = sleep_day(&profile, 0, &mut seed::rng(1));
        assert_eq!(
            base.iter().filter(|s| **s == SleepStage::Awake).count(),
            1440 - night_minutes
        );
        let frag = sleep_day(&profile, 20, &mut seed::rng(1));
        let awake = frag.iter().filter(|s| **s == SleepStage::Awake).count();
        // bouts may overlap, never exceed the request
        assert!(awake > 1440 - night_minutes && awake <= 1440 - night_minutes + 20);
    }

    #[test]
    fn activity_profile_sums_to_one() {
        let p = activity_profile(&mut seed::rng(2));
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.weights[..p.wake].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn incomplete_participants_have_under_a_week() {
        let c = small(Effect::None, 4);
        let d = generate(&c).unwrap();
        let steps = &d.sensors[&Modality::Steps];
        let weeks_of = |id: &str| {
            steps
                .iter()
                .filter(|p| p.participant.as_str() == id)
                .count()
                / 1440
        };
        let levels: std::collections::BTreeSet<&str> =
            d.levels.iter().map(|l| l.participant.as_str()).collect();
        let short: Vec<String> = (1..=12)
            .map(|i| format!("p{i:03}"))
            .filter(|id| !levels.contains(id.as_str()))
            .collect();
        assert_eq!(short.len(), 2);
        assert!(short.iter().all(|id| weeks_of(id) < 7));
    }
}
