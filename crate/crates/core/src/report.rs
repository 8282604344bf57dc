//! Experiment sweeps and result artifacts.
//!
//! A sweep evaluates every `(label, modality set, granularity, family)` cell and
//! writes `metrics/<cell>.json`, `predictions/<cell>.csv` and
//! `studies/<cell>.csv`. The summary tables are rendered from the metrics
//! records alone, so `report` can rebuild them from a finished output directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::Granularity;
use crate::evaluate::{
    lopo_cv_multi, write_predictions_csv, Dataset, EvalConfig, Metric, MetricReport,
};
use crate::features::{FeatureRecord, ModalitySet};
use crate::ingest::Instrument;
use crate::models::{Family, Hyperparams};
use crate::pipeline::{feature_records, prepare, Inputs, PrepareOptions};
use crate::seed;
use crate::segment::InclusionReport;
use crate::tune_select::{write_study_log, LeakageAudit, RfeForest, Strategy, STUDY_LOG_HEADER};
use crate::Real;

pub const MANIFEST_SCHEMA: &str = "wearscreen-run";
pub const WINCOUNTS_FILE: &str = "wincounts.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMPORTANCE_FAMILY: Family = Family::Adaboost;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("i/o failure on {}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad metrics record {}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("no {0} cells to rank features from")]
    FamilyAbsent(Family),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

mod label_names {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::ingest::Instrument;

    pub fn serialize<S: Serializer>(v: &[Instrument], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|i| i.condition()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Instrument>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|n| {
                Instrument::from_condition(n)
                    .ok_or_else(|| D::Error::custom(format!("unknown label `{n}`")))
            })
            .collect()
    }
}

mod label_name {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    use crate::ingest::Instrument;

    pub fn serialize<S: Serializer>(v: &Instrument, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.condition())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Instrument, D::Error> {
        let n = String::deserialize(d)?;
        Instrument::from_condition(&n)
            .ok_or_else(|| D::Error::custom(format!("unknown label `{n}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub enabled: bool,
    pub strategy: Strategy,
    pub budget: usize,
    pub ensemble_cap: Option<usize>,
    pub rfe: bool,
    pub inner_folds: usize,
    pub rfe_forest: RfeForest,
}

impl Default for TuningConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            enabled: e.tune,
            strategy: e.strategy,
            budget: e.budget,
            ensemble_cap: e.ensemble_cap,
            rfe: e.rfe,
            inner_folds: e.inner_folds,
            rfe_forest: e.rfe_forest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(with = "label_names")]
    pub labels: Vec<Instrument>,
    pub modalities: Vec<ModalitySet>,
    pub granularities: Vec<u32>,
    pub models: Vec<Family>,
    pub tuning: TuningConfig,
    /// Hyperparameters used when tuning is disabled (family defaults otherwise).
    pub fixed: BTreeMap<Family, Hyperparams>,
    pub bootstrap: BootstrapConfig,
    pub seed: Option<u64>,
    pub prepare: PrepareOptions,
    pub importance_top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            labels: Instrument::ALL.to_vec(),
            modalities: ModalitySet::TABLE_ORDER.to_vec(),
            granularities: Granularity::HOURS.to_vec(),
            models: Family::ALL.to_vec(),
            tuning: TuningConfig::default(),
            fixed: BTreeMap::new(),
            bootstrap: BootstrapConfig::default(),
            seed: None,
            prepare: PrepareOptions::default(),
            importance_top_k: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<u64, ReportError> {
        let bad = |m: &str| Err(ReportError::Config(m.to_string()));
        if self.labels.is_empty()
            || self.modalities.is_empty()
            || self.granularities.is_empty()
            || self.models.is_empty()
        {
            return bad("labels, modalities, granularities and models must be non-empty");
        }
        for &g in &self.granularities {
            Granularity::new(g).map_err(|e| ReportError::Config(e.to_string()))?;
        }
        for hp in self.fixed.values() {
            hp.validate()
                .map_err(|e| ReportError::Config(e.to_string()))?;
        }
        if self.bootstrap.resamples == 0
            || !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0)
        {
            return bad("bootstrap needs resamples > 0 and level in (0, 1)");
        }
        if self.importance_top_k == 0 {
            return bad("importance_top_k must be positive");
        }
        self.seed
            .ok_or_else(|| ReportError::Config("seed is required".into()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            tune: self.tuning.enabled,
            strategy: self.tuning.strategy,
            budget: self.tuning.budget,
            ensemble_cap: self.tuning.ensemble_cap,
            rfe: self.tuning.rfe,
            rfe_forest: self.tuning.rfe_forest,
            inner_folds: self.tuning.inner_folds,
            fixed: self.fixed.clone(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.labels.len() * self.modalities.len() * self.granularities.len() * self.models.len()
    }

    /// SHA-256 of the canonical JSON form with paths removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.input_dir = PathBuf::new();
        c.out_dir = PathBuf::new();
        hex(&Sha256::digest(
            serde_json::to_vec(&c).expect("config serializes"),
        ))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes
        .iter()
        .fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// SHA-256 over `(name, bytes)` of every regular file directly inside `dir`, by name.
pub fn digest_dir(dir: &Path) -> Result<String, ReportError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(
            p.file_name()
                .expect("file has a name")
                .to_string_lossy()
                .as_bytes(),
        );
        h.update([0]);
        h.update(fs::read(&p).map_err(io_err(&p))?);
    }
    Ok(hex(&h.finalize()))
}

pub fn cell_id(label: Instrument, modality: ModalitySet, hours: u32, family: Family) -> String {
    format!(
        "{}_{}_{}h_{}",
        label.condition(),
        modality.name(),
        hours,
        family.name()
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Skipped,
}

/// Everything reported about one cell; the single source of rendered numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub cell: String,
    #[serde(with = "label_name")]
    pub label: Instrument,
    pub modality: ModalitySet,
    pub granularity_hours: u32,
    pub family: Family,
    pub status: CellStatus,
    pub reason: Option<String>,
    pub n_segments: usize,
    pub n_participants: usize,
    pub n_positive: usize,
    pub metrics: Option<MetricReport<Real>>,
    pub feature_names: Vec<String>,
    /// Mean fold importance, normalized to sum to one.
    pub importance: Option<Vec<Real>>,
    pub audit: LeakageAudit,
    pub notes: Vec<String>,
}

impl CellRecord {
    pub fn value(&self, m: Metric) -> Option<Real> {
        self.metrics
            .as_ref()
            .filter(|_| self.status == CellStatus::Ok)
            .map(|r| r.point.get(m))
    }

    pub fn halfwidth(&self, m: Metric) -> Real {
        self.metrics.as_ref().map_or(0.0, |r| r.halfwidth(m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub cell: String,
    pub status: CellStatus,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_digest: String,
    pub n_cells: usize,
    pub n_ok: usize,
    pub n_skipped: usize,
    /// Inclusion per `<modality>_<hours>h` block.
    pub inclusion: BTreeMap<String, InclusionSummary>,
    pub cells: Vec<ManifestCell>,
    /// Wall-clock time of the run; not part of any hash.
    pub generated_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionSummary {
    pub total: usize,
    pub retained: usize,
    pub dropped: usize,
    pub segments: usize,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub cells: Vec<CellRecord>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

impl SweepOutcome {
    /// 0 when every cell ran, 2 when some were skipped, 1 when none ran.
    pub fn exit_code(&self) -> i32 {
        match (self.manifest.n_ok, self.manifest.n_skipped) {
            (0, _) => 1,
            (_, 0) => 0,
            _ => 2,
        }
    }

    pub fn audit(&self) -> LeakageAudit {
        let mut a = LeakageAudit::default();
        for c in &self.cells {
            a.merge(&c.audit);
        }
        a
    }
}

fn create_dir(p: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(p).map_err(io_err(p))
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), ReportError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    f(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

fn normalized(v: Vec<Real>) -> Vec<Real> {
    let s: Real = v.iter().sum();
    if s > 0.0 {
        v.into_iter().map(|x| x / s).collect()
    } else {
        let n = v.len().max(1) as Real;
        vec![1.0 / n; v.len()]
    }
}

struct Block<'a> {
    label: Instrument,
    modality: ModalitySet,
    hours: u32,
    records: &'a [FeatureRecord<Real>],
}

fn skipped(
    b: &Block<'_>,
    family: Family,
    reason: String,
    data: Option<&Dataset<Real>>,
) -> CellRecord {
    CellRecord {
        cell: cell_id(b.label, b.modality, b.hours, family),
        label: b.label,
        modality: b.modality,
        granularity_hours: b.hours,
        family,
        status: CellStatus::Skipped,
        reason: Some(reason),
        n_segments: data.map_or(0, Dataset::len),
        n_participants: data.map_or(0, |d| d.participants().len()),
        n_positive: data.map_or(0, |d| d.y.iter().filter(|&&y| y).count()),
        metrics: None,
        feature_names: data.map(|d| d.feature_names.clone()).unwrap_or_default(),
        importance: None,
        audit: LeakageAudit::default(),
        notes: Vec::new(),
    }
}

fn run_block(
    cfg: &RunConfig,
    eval: &EvalConfig,
    run_seed: u64,
    b: &Block<'_>,
    out: &Path,
) -> Result<Vec<CellRecord>, ReportError> {
    let block_seed = seed::derive(
        run_seed,
        &format!("{}/{}/{}", b.label.condition(), b.modality.name(), b.hours),
    );
    let data = match Dataset::from_records(b.records, b.label) {
        Ok(d) if !d.is_empty() => d,
        Ok(_) => {
            return Ok(cfg
                .models
                .iter()
                .map(|&f| skipped(b, f, "no labelled weeks".into(), None))
                .collect())
        }
        Err(e) => {
            return Ok(cfg
                .models
                .iter()
                .map(|&f| skipped(b, f, e.to_string(), None))
                .collect())
        }
    };
    let lopo = match lopo_cv_multi(&data, &cfg.models, eval, block_seed) {
        Ok(r) => r,
        Err(e) => {
            return Ok(cfg
                .models
                .iter()
                .map(|&f| skipped(b, f, e.to_string(), Some(&data)))
                .collect())
        }
    };
    let mut cells = Vec::with_capacity(cfg.models.len());
    for &family in &cfg.models {
        let id = cell_id(b.label, b.modality, b.hours, family);
        let pairs = lopo.pairs(family);
        let metrics = match MetricReport::from_pairs(
            &pairs,
            cfg.bootstrap.resamples,
            cfg.bootstrap.level,
            seed::derive(block_seed, family.name()),
        ) {
            Ok(m) => m,
            Err(e) => {
                cells.push(skipped(b, family, e.to_string(), Some(&data)));
                continue;
            }
        };
        let predictions = lopo.predictions(family);
        let path = out.join("predictions").join(format!("{id}.csv"));
        write_file(&path, |w| write_predictions_csv(w, &predictions))?;
        let path = out.join("studies").join(format!("{id}.csv"));
        write_file(&path, |w| {
            writeln!(w, "{STUDY_LOG_HEADER}")?;
            for fold in &lopo.folds {
                for ff in fold.families.iter().filter(|ff| ff.family == family) {
                    if let Some(study) = &ff.study {
                        write_study_log(w, fold.participant.as_str(), study)?;
                    }
                }
            }
            Ok(())
        })?;
        let notes: Vec<String> = lopo
            .folds
            .iter()
            .flat_map(|f| {
                f.notes.iter().chain(
                    f.families
                        .iter()
                        .filter(|ff| ff.family == family)
                        .flat_map(|ff| ff.notes.iter()),
                )
            })
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        cells.push(CellRecord {
            cell: id,
            label: b.label,
            modality: b.modality,
            granularity_hours: b.hours,
            family,
            status: CellStatus::Ok,
            reason: None,
            n_segments: data.len(),
            n_participants: data.participants().len(),
            n_positive: data.y.iter().filter(|&&y| y).count(),
            metrics: Some(metrics),
            feature_names: data.feature_names.clone(),
            importance: lopo.mean_importance(family).map(normalized),
            audit: lopo.audit,
            notes,
        });
    }
    Ok(cells)
}

/// Run every cell of `cfg` on `inputs` with at most `jobs` worker threads and
/// write all artifacts under `cfg.out_dir`.
pub fn run_sweep(
    cfg: &RunConfig,
    inputs: &Inputs,
    input_digest: &str,
    jobs: usize,
) -> Result<SweepOutcome, ReportError> {
    let run_seed = cfg.validate()?;
    let out = cfg.out_dir.clone();
    for sub in ["metrics", "predictions", "studies"] {
        create_dir(&out.join(sub))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ReportError::Config(format!("worker pool: {e}")))?;
    let eval = cfg.eval_config();

    let mut modalities = cfg.modalities.clone();
    modalities.sort_by_key(|m| m.table_rank());
    modalities.dedup();
    let mut hours = cfg.granularities.clone();
    hours.sort_unstable();
    hours.dedup();
    let mut labels = cfg.labels.clone();
    labels.sort();
    labels.dedup();

    type Swept = (Vec<CellRecord>, BTreeMap<String, InclusionSummary>);
    type FeatureBlock = (
        (ModalitySet, u32),
        (Vec<FeatureRecord<Real>>, InclusionReport),
    );
    let (cells, inclusion) = pool.install(|| -> Result<Swept, ReportError> {
        let prepared = prepare(inputs, cfg.prepare);
        let feature_blocks: Vec<FeatureBlock> = modalities
            .iter()
            .flat_map(|&m| hours.iter().map(move |&h| (m, h)))
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(m, h)| {
                (
                    (m, h),
                    feature_records(&prepared, m, Granularity::new(h).expect("validated")),
                )
            })
            .collect();
        let blocks: Vec<Block<'_>> = labels
            .iter()
            .flat_map(|&label| {
                feature_blocks
                    .iter()
                    .map(move |((m, h), (records, _))| Block {
                        label,
                        modality: *m,
                        hours: *h,
                        records,
                    })
            })
            .collect();
        let per_block: Vec<Vec<CellRecord>> = blocks
            .par_iter()
            .map(|b| run_block(cfg, &eval, run_seed, b, &out))
            .collect::<Result<_, _>>()?;
        let inclusion = feature_blocks
            .iter()
            .map(|((m, h), (records, rep))| {
                let s = InclusionSummary {
                    total: rep.total,
                    retained: rep.retained.len(),
                    dropped: rep.dropped.len(),
                    segments: records.len(),
                };
                (format!("{}_{}h", m.name(), h), s)
            })
            .collect::<BTreeMap<_, _>>();
        Ok((per_block.into_iter().flatten().collect(), inclusion))
    })?;

    for c in &cells {
        let path = out.join("metrics").join(format!("{}.json", c.cell));
        write_file(&path, |w| {
            serde_json::to_writer_pretty(&mut *w, c).map_err(std::io::Error::other)?;
            writeln!(w)
        })?;
    }
    emit_reports(&cells, cfg.importance_top_k, &out)?;

    let n_ok = cells.iter().filter(|c| c.status == CellStatus::Ok).count();
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: run_seed,
        config_hash: cfg.hash(),
        input_digest: input_digest.to_string(),
        n_cells: cells.len(),
        n_ok,
        n_skipped: cells.len() - n_ok,
        inclusion,
        cells: cells
            .iter()
            .map(|c| ManifestCell {
                cell: c.cell.clone(),
                status: c.status,
                reason: c.reason.clone(),
            })
            .collect(),
        generated_at: chrono::Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string(),
    };
    let path = out.join(MANIFEST_FILE);
    write_file(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(std::io::Error::other)?;
        writeln!(w)
    })?;
    Ok(SweepOutcome {
        cells,
        manifest,
        out_dir: out,
    })
}

/// Read every `metrics/*.json` record in `out_dir`, ordered by file name.
pub fn load_cells(out_dir: &Path) -> Result<Vec<CellRecord>, ReportError> {
    let dir = out_dir.join("metrics");
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|source| ReportError::Json {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

/// Grid metrics and their file-name stems.
pub const GRID_METRICS: [(Metric, &str, &str); 2] = [
    (Metric::BalancedAccuracy, "ba", "BA"),
    (Metric::F1, "f1", "F1"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub value: Real,
    pub halfwidth: Real,
    pub family: Family,
    pub row_best: bool,
    pub col_best: bool,
}

/// Best-model values for one label and metric, modality rows by granularity columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultGrid {
    pub label: Instrument,
    pub metric: Metric,
    pub modalities: Vec<ModalitySet>,
    pub granularities: Vec<u32>,
    pub cells: Vec<Vec<Option<GridCell>>>,
}

impl ResultGrid {
    pub fn row_best(&self, r: usize) -> Option<usize> {
        self.cells[r]
            .iter()
            .position(|c| c.as_ref().is_some_and(|c| c.row_best))
    }

    pub fn col_best(&self, c: usize) -> Option<usize> {
        self.cells
            .iter()
            .position(|row| row[c].as_ref().is_some_and(|x| x.col_best))
    }
}

/// Index of the first strict maximum.
fn argmax_first(values: impl Iterator<Item = Option<Real>>) -> Option<usize> {
    let mut best: Option<(usize, Real)> = None;
    for (i, v) in values.enumerate() {
        if let Some(v) = v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn axes(cells: &[CellRecord]) -> (Vec<Instrument>, Vec<ModalitySet>, Vec<u32>, Vec<Family>) {
    let labels: BTreeSet<Instrument> = cells.iter().map(|c| c.label).collect();
    let mut modalities: Vec<ModalitySet> = Vec::new();
    for c in cells {
        if !modalities.contains(&c.modality) {
            modalities.push(c.modality);
        }
    }
    modalities.sort_by_key(|m| m.table_rank());
    let hours: BTreeSet<u32> = cells.iter().map(|c| c.granularity_hours).collect();
    let families: BTreeSet<Family> = cells.iter().map(|c| c.family).collect();
    (
        labels.into_iter().collect(),
        modalities,
        hours.into_iter().collect(),
        families.into_iter().collect(),
    )
}

/// Per-cell best family by `metric`; ties go to the earlier family.
fn best_family(
    cells: &[CellRecord],
    label: Instrument,
    m: ModalitySet,
    h: u32,
    metric: Metric,
) -> Option<&CellRecord> {
    let mut cands: Vec<&CellRecord> = cells
        .iter()
        .filter(|c| {
            c.label == label
                && c.modality == m
                && c.granularity_hours == h
                && c.value(metric).is_some()
        })
        .collect();
    cands.sort_by_key(|c| c.family);
    argmax_first(cands.iter().map(|c| c.value(metric))).map(|i| cands[i])
}

pub fn build_grid(cells: &[CellRecord], label: Instrument, metric: Metric) -> ResultGrid {
    let (_, modalities, granularities, _) = axes(cells);
    let mut grid: Vec<Vec<Option<GridCell>>> = modalities
        .iter()
        .map(|&m| {
            granularities
                .iter()
                .map(|&h| {
                    best_family(cells, label, m, h, metric).map(|c| GridCell {
                        value: c.value(metric).expect("filtered"),
                        halfwidth: c.halfwidth(metric),
                        family: c.family,
                        row_best: false,
                        col_best: false,
                    })
                })
                .collect()
        })
        .collect();
    for row in grid.iter_mut() {
        if let Some(j) = argmax_first(row.iter().map(|c| c.as_ref().map(|c| c.value))) {
            row[j].as_mut().expect("argmax is present").row_best = true;
        }
    }
    for j in 0..granularities.len() {
        if let Some(i) = argmax_first(grid.iter().map(|row| row[j].as_ref().map(|c| c.value))) {
            grid[i][j].as_mut().expect("argmax is present").col_best = true;
        }
    }
    ResultGrid {
        label,
        metric,
        modalities,
        granularities,
        cells: grid,
    }
}

pub fn format_value(value: Real, halfwidth: Real) -> String {
    format!("{value:.2} ± {halfwidth:.2}")
}

fn emphasize(text: String, bold: bool, italic: bool) -> String {
    match (bold, italic) {
        (true, true) => format!("***{text}***"),
        (true, false) => format!("**{text}**"),
        (false, true) => format!("*{text}*"),
        (false, false) => text,
    }
}

pub fn render_grid(grid: &ResultGrid) -> String {
    let short = GRID_METRICS
        .iter()
        .find(|g| g.0 == grid.metric)
        .map_or(grid.metric.name(), |g| g.2);
    let mut s = String::new();
    let _ = writeln!(s, "## {} {}\n", grid.label.condition(), short);
    let _ = writeln!(
        s,
        "Best-model pooled LOPO {short} ± bootstrap CI halfwidth. Bold: best in column. Italic: best in row.\n"
    );
    let cols: Vec<String> = grid.granularities.iter().map(|h| format!("{h}h")).collect();
    let _ = writeln!(
        s,
        "| Modality | {} | Best Agg. | Best Model |",
        cols.join(" | ")
    );
    let _ = writeln!(s, "|:--|{}:-:|:-:|", "--:|".repeat(cols.len()));
    for (r, m) in grid.modalities.iter().enumerate() {
        let vals: Vec<String> = grid.cells[r]
            .iter()
            .map(|c| {
                c.as_ref().map_or("n/a".to_string(), |c| {
                    emphasize(format_value(c.value, c.halfwidth), c.col_best, c.row_best)
                })
            })
            .collect();
        let (agg, model) = grid
            .row_best(r)
            .map_or(("n/a".to_string(), "n/a".to_string()), |j| {
                (
                    cols[j].clone(),
                    grid.cells[r][j]
                        .as_ref()
                        .expect("flagged")
                        .family
                        .to_string(),
                )
            });
        let _ = writeln!(s, "| {m} | {} | {agg} | {model} |", vals.join(" | "));
    }
    let best: Vec<String> = (0..grid.granularities.len())
        .map(|j| {
            grid.col_best(j).map_or("n/a".to_string(), |i| {
                format!(
                    "{} ({})",
                    grid.cells[i][j].as_ref().expect("flagged").family,
                    grid.modalities[i]
                )
            })
        })
        .collect();
    let _ = writeln!(s, "| Best Model | {} | | |", best.join(" | "));
    s
}

/// Per `(label, modality)`: how many granularities each family won on F1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinCountRow {
    pub label: Instrument,
    pub modality: ModalitySet,
    pub counts: BTreeMap<Family, usize>,
}

impl WinCountRow {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

pub fn emit_win_counts(cells: &[CellRecord]) -> Vec<WinCountRow> {
    let (labels, modalities, hours, families) = axes(cells);
    let mut rows = Vec::new();
    for &label in &labels {
        for &m in &modalities {
            let mut counts: BTreeMap<Family, usize> = families.iter().map(|&f| (f, 0)).collect();
            for &h in &hours {
                if let Some(c) = best_family(cells, label, m, h, Metric::F1) {
                    *counts.get_mut(&c.family).expect("family axis") += 1;
                }
            }
            rows.push(WinCountRow {
                label,
                modality: m,
                counts,
            });
        }
    }
    rows
}

pub fn render_win_counts(rows: &[WinCountRow]) -> String {
    let families: Vec<Family> = rows
        .first()
        .map(|r| r.counts.keys().copied().collect())
        .unwrap_or_default();
    let mut s = String::new();
    let names: Vec<&str> = families.iter().map(|f| f.name()).collect();
    let _ = writeln!(s, "label,modality,{},total", names.join(","));
    for r in rows {
        let counts: Vec<String> = families.iter().map(|f| r.counts[f].to_string()).collect();
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.label.condition(),
            r.modality,
            counts.join(","),
            r.total()
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImportanceRow {
    pub modality: ModalitySet,
    pub rank: usize,
    pub feature: String,
    pub mean_importance: Real,
    /// Granularities at which the feature ranked within the top k.
    pub top_k_levels: usize,
}

/// Mean importance across granularities of `IMPORTANCE_FAMILY` cells, keeping
/// features that rank within the top `top_k` at any single granularity.
pub fn emit_feature_importance(
    cells: &[CellRecord],
    label: Instrument,
    top_k: usize,
) -> Result<Vec<ImportanceRow>, ReportError> {
    let (_, modalities, _, _) = axes(cells);
    let mut out = Vec::new();
    let mut any = false;
    for &m in &modalities {
        let per_level: Vec<&CellRecord> = cells
            .iter()
            .filter(|c| {
                c.label == label
                    && c.modality == m
                    && c.family == IMPORTANCE_FAMILY
                    && c.importance.is_some()
            })
            .collect();
        let Some(first) = per_level.first() else {
            continue;
        };
        any = true;
        let names = &first.feature_names;
        let d = names.len();
        let mut mean = vec![0.0; d];
        let mut top_hits = vec![0usize; d];
        for c in &per_level {
            let imp = c.importance.as_ref().expect("filtered");
            for (a, v) in mean.iter_mut().zip(imp) {
                *a += v / per_level.len() as Real;
            }
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
            for &j in order.iter().take(top_k) {
                top_hits[j] += 1;
            }
        }
        let mut kept: Vec<usize> = (0..d).filter(|&j| top_hits[j] > 0).collect();
        kept.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(names[a].cmp(&names[b])));
        out.extend(kept.into_iter().enumerate().map(|(r, j)| ImportanceRow {
            modality: m,
            rank: r + 1,
            feature: names[j].clone(),
            mean_importance: mean[j],
            top_k_levels: top_hits[j],
        }));
    }
    if any {
        Ok(out)
    } else {
        Err(ReportError::FamilyAbsent(IMPORTANCE_FAMILY))
    }
}

pub fn render_importance(rows: &[ImportanceRow]) -> String {
    let mut s = String::from("modality,rank,feature,mean_importance,top_k_levels\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.modality, r.rank, r.feature, r.mean_importance, r.top_k_levels
        );
    }
    s
}

pub fn grid_file_name(label: Instrument, stem: &str) -> String {
    format!("grid_{}_{stem}.md", label.condition())
}

pub fn importance_file_name(label: Instrument) -> String {
    format!("importance_{}.csv", label.condition())
}

/// Write grids, win counts and importance tables from cell records.
pub fn emit_reports(
    cells: &[CellRecord],
    top_k: usize,
    out: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let (labels, _, _, _) = axes(cells);
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<(), ReportError> {
        let path = out.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    for &label in &labels {
        for (metric, stem, _) in GRID_METRICS {
            put(
                grid_file_name(label, stem),
                render_grid(&build_grid(cells, label, metric)),
            )?;
        }
        match emit_feature_importance(cells, label, top_k) {
            Ok(rows) => put(importance_file_name(label), render_importance(&rows))?,
            Err(ReportError::FamilyAbsent(_)) => log::info!(
                "no {IMPORTANCE_FAMILY} cells for {}; importance table skipped",
                label.condition()
            ),
            Err(e) => return Err(e),
        }
    }
    put(
        WINCOUNTS_FILE.to_string(),
        render_win_counts(&emit_win_counts(cells)),
    )?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::ConfusionCounts;
    use crate::ingest::Modality;

    fn cell(label: Instrument, m: ModalitySet, h: u32, f: Family, f1: f64, ba: f64) -> CellRecord {
        let counts = ConfusionCounts::default();
        let mut point = crate::evaluate::compute_metrics::<f64>(&counts);
        point.f1 = f1;
        point.balanced_accuracy = ba;
        let ci = Metric::ALL
            .into_iter()
            .map(|m| {
                (
                    m,
                    crate::evaluate::Interval {
                        lower: 0.0,
                        upper: 0.1,
                        halfwidth: 0.05,
                    },
                )
            })
            .collect();
        CellRecord {
            cell: cell_id(label, m, h, f),
            label,
            modality: m,
            granularity_hours: h,
            family: f,
            status: CellStatus::Ok,
            reason: None,
            n_segments: 1,
            n_participants: 1,
            n_positive: 0,
            metrics: Some(MetricReport {
                counts,
                point,
                ci,
                n_bootstrap: 1,
                level: 0.95,
                seed: 0,
            }),
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            importance: Some(vec![0.5, 0.3, 0.2]),
            audit: LeakageAudit::default(),
            notes: vec![],
        }
    }

    const STEPS: ModalitySet = ModalitySet::Single(Modality::Steps);

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.7012, 0.0423), "0.70 ± 0.04");
        assert_eq!(format_value(1.0, 0.0), "1.00 ± 0.00");
    }

    #[test]
    fn single_cell_is_both_bold_and_italic() {
        let cells = vec![cell(Instrument::Cesd10, STEPS, 8, Family::Rf, 0.8, 0.7)];
        let g = build_grid(&cells, Instrument::Cesd10, Metric::F1);
        let c = g.cells[0][0].as_ref().unwrap();
        assert!(c.row_best && c.col_best);
        assert!(render_grid(&g).contains("***0.80 ± 0.05***"));
    }

    #[test]
    fn ties_go_to_lower_granularity_first_modality_and_first_family() {
        let l = Instrument::Cesd10;
        let cells = vec![
            cell(l, ModalitySet::All, 4, Family::Rf, 0.6, 0.6),
            cell(l, ModalitySet::All, 8, Family::Rf, 0.6, 0.6),
            cell(l, STEPS, 4, Family::Gb, 0.6, 0.6),
            cell(l, STEPS, 4, Family::Dt, 0.6, 0.6),
            cell(l, STEPS, 8, Family::Dt, 0.5, 0.5),
        ];
        let g = build_grid(&cells, l, Metric::F1);
        assert_eq!(g.row_best(0), Some(0));
        assert_eq!(g.col_best(0), Some(0));
        assert_eq!(g.col_best(1), Some(0));
        assert_eq!(g.cells[1][0].as_ref().unwrap().family, Family::Dt);
        for r in 0..2 {
            assert_eq!(
                g.cells[r].iter().flatten().filter(|c| c.row_best).count(),
                1
            );
        }
    }

    #[test]
    fn one_family_winning_everywhere_counts_all_levels() {
        let l = Instrument::Stai;
        let mut cells = Vec::new();
        for h in Granularity::HOURS {
            cells.push(cell(l, STEPS, h, Family::Adaboost, 0.9, 0.5));
            cells.push(cell(l, STEPS, h, Family::Lr, 0.4, 0.9));
        }
        let rows = emit_win_counts(&cells);
        assert_eq!(rows[0].counts[&Family::Adaboost], 6);
        assert_eq!(rows[0].total(), 6);
        assert!(render_win_counts(&rows).contains("anxiety,steps,0,6,6"));
    }

    #[test]
    fn importance_lists_everything_when_top_k_covers_all() {
        let cells = vec![cell(Instrument::Pss4, STEPS, 8, Family::Adaboost, 0.5, 0.5)];
        let rows = emit_feature_importance(&cells, Instrument::Pss4, 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].feature, "a");
        let rows = emit_feature_importance(&cells, Instrument::Pss4, 1).unwrap();
        assert_eq!(rows.len(), 1);
        let no_ada = vec![cell(Instrument::Pss4, STEPS, 8, Family::Rf, 0.5, 0.5)];
        assert!(matches!(
            emit_feature_importance(&no_ada, Instrument::Pss4, 3),
            Err(ReportError::FamilyAbsent(_))
        ));
    }

    #[test]
    fn config_hash_ignores_paths_and_requires_seed() {
        let a = RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        };
        let b = RunConfig {
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(
            a.hash(),
            RunConfig {
                seed: Some(8),
                ..a.clone()
            }
            .hash()
        );
        assert!(RunConfig::default().validate().is_err());
        assert_eq!(a.n_cells(), 648);
    }

    #[test]
    fn labels_serialize_by_condition() {
        let c = RunConfig {
            labels: vec![Instrument::Stai],
            seed: Some(1),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"labels\":[\"anxiety\"]"));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
