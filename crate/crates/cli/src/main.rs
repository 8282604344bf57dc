use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wearscreen_core::aggregate::Granularity;
use wearscreen_core::features::{write_feature_csv, ModalitySet};
use wearscreen_core::ingest::Modality;
use wearscreen_core::pipeline::{feature_records, load_dir, prepare, PrepareOptions};
use wearscreen_core::report::{digest_dir, emit_reports, load_cells, run_sweep, RunConfig};
use wearscreen_core::synth::{write_to_dir, Effect, SynthConfig};

#[derive(Parser)]
#[command(
    name = "wearscreen",
    version,
    about = "Weekly wearable-sensor screening experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the ingest CSV layout.
    Synth(SynthArgs),
    /// Parse an input directory and report rejected rows and inclusion.
    IngestCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 24)]
        granularity: u32,
    },
    /// Write the weekly feature matrix for one modality set and granularity.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "all")]
        modality: ModalitySet,
        #[arg(long, default_value_t = 24)]
        granularity: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment sweep.
    Run(RunArgs),
    /// Rebuild grids, win counts and importance tables from `metrics/*.json`.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with `SynthConfig` fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    participants: Option<usize>,
    #[arg(long)]
    incomplete: Option<usize>,
    #[arg(long)]
    weeks_min: Option<usize>,
    #[arg(long)]
    weeks_max: Option<usize>,
    #[arg(long)]
    effect: Option<Effect>,
    #[arg(long)]
    missingness: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Heart-rate sample spacing in seconds.
    #[arg(long)]
    hr_interval: Option<i64>,
    #[arg(long, value_delimiter = ',')]
    modalities: Option<Vec<Modality>>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.participants {
        cfg.n_participants = v;
        if a.incomplete.is_none() && cfg.n_incomplete > v {
            cfg.n_incomplete = 0;
        }
    }
    cfg.n_incomplete = a.incomplete.unwrap_or(cfg.n_incomplete);
    cfg.weeks_min = a.weeks_min.unwrap_or(cfg.weeks_min);
    cfg.weeks_max = a.weeks_max.unwrap_or(cfg.weeks_max.max(cfg.weeks_min));
    cfg.effect = a.effect.unwrap_or(cfg.effect);
    cfg.missingness_rate = a.missingness.unwrap_or(cfg.missingness_rate);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    cfg.heart_rate_interval_secs = a.hr_interval.unwrap_or(cfg.heart_rate_interval_secs);
    if let Some(m) = a.modalities {
        cfg.modalities = m;
    }
    for p in write_to_dir(&cfg, &a.out).with_context(|| format!("writing {}", a.out.display()))? {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn ingest_check(input: &Path, hours: u32) -> Result<ExitCode> {
    let inputs =
        load_dir(input).with_context(|| format!("reading input directory {}", input.display()))?;
    for (m, pts) in &inputs.sensors {
        println!("{m}: {} rows", pts.len());
    }
    println!("surveys: {} rows", inputs.surveys.len());
    println!("rejected rows: {}", inputs.issues.len());
    for (file, issue) in inputs.issues.iter().take(20) {
        println!("  {file}: {issue}");
    }
    let prepared = prepare(&inputs, PrepareOptions::default());
    let (records, report) = feature_records(&prepared, ModalitySet::All, Granularity::new(hours)?);
    println!(
        "participants: {} total, {} with a complete week of every modality, {} dropped; {} weekly segments",
        report.total,
        report.retained.len(),
        report.dropped.len(),
        records.len()
    );
    Ok(if inputs.issues.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn features(input: &Path, set: ModalitySet, hours: u32, out: &Path) -> Result<ExitCode> {
    let inputs =
        load_dir(input).with_context(|| format!("reading input directory {}", input.display()))?;
    let prepared = prepare(&inputs, PrepareOptions::default());
    let (records, _) = feature_records(&prepared, set, Granularity::new(hours)?);
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_feature_csv(file, set, &records)?;
    println!("wrote {} rows to {}", records.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let mut cfg: RunConfig = read_toml(&a.config)?;
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    if let Some(i) = a.input {
        cfg.input_dir = i;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if cfg.seed.is_none() {
        bail!("no seed: set `seed` in the config or pass --seed");
    }
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let inputs = load_dir(&cfg.input_dir)
        .with_context(|| format!("reading input directory {}", cfg.input_dir.display()))?;
    if !inputs.issues.is_empty() {
        log::warn!("{} input rows rejected", inputs.issues.len());
    }
    let digest = digest_dir(&cfg.input_dir)?;
    let outcome = run_sweep(&cfg, &inputs, &digest, jobs)?;
    let m = &outcome.manifest;
    println!(
        "{} cells: {} ok, {} skipped; artifacts in {}",
        m.n_cells,
        m.n_ok,
        m.n_skipped,
        outcome.out_dir.display()
    );
    for c in outcome.cells.iter().filter(|c| c.reason.is_some()).take(10) {
        println!(
            "  skipped {}: {}",
            c.cell,
            c.reason.as_deref().unwrap_or("")
        );
    }
    Ok(ExitCode::from(outcome.exit_code() as u8))
}

fn report(out: &Path, top_k: usize) -> Result<ExitCode> {
    let cells = load_cells(out)?;
    if cells.is_empty() {
        bail!("no metrics records under {}", out.join("metrics").display());
    }
    for p in emit_reports(&cells, top_k, out)? {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::IngestCheck { input, granularity } => ingest_check(&input, granularity),
        Command::Features {
            input,
            modality,
            granularity,
            out,
        } => features(&input, modality, granularity, &out),
        Command::Run(a) => run(a),
        Command::Report { out, top_k } => report(&out, top_k),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
