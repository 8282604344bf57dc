use std::path::Path;
use std::process::{Command, Output};

fn wearscreen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wearscreen"))
        .args(args)
        .output()
        .unwrap()
}

fn synth(dir: &Path, participants: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--participants",
        participants,
        "--incomplete",
        "1",
    ];
    args.extend_from_slice(&[
        "--weeks-min",
        "1",
        "--weeks-max",
        "1",
        "--seed",
        "2",
        "--hr-interval",
        "60",
    ]);
    args.extend_from_slice(extra);
    wearscreen(&args)
}

#[test]
fn synth_then_ingest_check_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, "4", &[]).status.success());
    for f in [
        "steps.csv",
        "sleep.csv",
        "heart.csv",
        "calories.csv",
        "distance.csv",
        "surveys.csv",
        "truth_manifest.csv",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }

    let check = wearscreen(&["ingest-check", "--input", data.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(0));
    let text = String::from_utf8(check.stdout).unwrap();
    assert!(text.contains("rejected rows: 0"), "{text}");
    assert!(text.contains("4 total, 3 with a complete week"), "{text}");

    let out = dir.path().join("steps.csv");
    let f = wearscreen(&[
        "features",
        "--input",
        data.to_str().unwrap(),
        "--modality",
        "steps",
        "--granularity",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(f.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    // header plus one week for each complete participant
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().next().unwrap().contains("steps_agg_mean"));
}

#[test]
fn ingest_check_flags_rejected_rows() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), "4", &["--modalities", "steps"])
        .status
        .success());
    let path = dir.path().join("steps.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("p000,not-a-time,12\n");
    std::fs::write(&path, text).unwrap();
    let check = wearscreen(&["ingest-check", "--input", dir.path().to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(2));
    assert!(String::from_utf8(check.stdout)
        .unwrap()
        .contains("rejected rows: 1"));
}

#[test]
fn run_and_report_rebuild_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(
        synth(&data, "6", &["--modalities", "steps", "--effect", "strong"])
            .status
            .success()
    );
    let cfg = dir.path().join("run.toml");
    let toml = format!(
        "input_dir = {:?}\nlabels = [\"depression\"]\nmodalities = [\"steps\"]\ngranularities = [24]\nmodels = [\"dt\", \"lr\"]\nseed = 4\n\n[tuning]\nenabled = false\n\n[bootstrap]\nresamples = 50\n",
        data.to_str().unwrap()
    );
    std::fs::write(&cfg, toml).unwrap();
    let out = dir.path().join("out");
    let run = wearscreen(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let grid = out.join("grid_depression_f1.md");
    let before = std::fs::read_to_string(&grid).unwrap();
    std::fs::remove_file(&grid).unwrap();
    assert!(wearscreen(&["report", "--out", out.to_str().unwrap()])
        .status
        .success());
    assert_eq!(std::fs::read_to_string(&grid).unwrap(), before);
}

#[test]
fn run_without_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "input_dir = \"nowhere\"\n").unwrap();
    let run = wearscreen(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8(run.stderr).unwrap().contains("no seed"));
}
