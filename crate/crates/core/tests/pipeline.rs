use std::collections::BTreeMap;
use std::time::Instant;

use wearscreen_core::aggregate::Granularity;
use wearscreen_core::evaluate::{compute_metrics, lopo_cv, Dataset, EvalConfig, MetricValues};
use wearscreen_core::features::ModalitySet;
use wearscreen_core::ingest::{Instrument, Modality};
use wearscreen_core::models::{Family, Hyperparams};
use wearscreen_core::pipeline::{feature_records, prepare, Inputs, PrepareOptions};
use wearscreen_core::synth::{generate, Effect, SynthConfig};

fn rf_untuned() -> EvalConfig {
    let mut fixed = BTreeMap::new();
    fixed.insert(
        Family::Rf,
        Hyperparams::Rf {
            n_trees: 100,
            max_depth: 8,
            feature_subsample_fraction: 0.3,
            bootstrap: true,
        },
    );
    EvalConfig {
        tune: false,
        rfe: false,
        fixed,
        ..EvalConfig::default()
    }
}

fn recover(effect: Effect, seed: u64, m: Modality, inst: Instrument) -> MetricValues<f64> {
    let cfg = SynthConfig {
        n_participants: 60,
        n_incomplete: 0,
        weeks_min: 4,
        weeks_max: 4,
        effect,
        seed,
        heart_rate_interval_secs: 60,
        modalities: vec![m],
        ..SynthConfig::default()
    };
    let t = Instant::now();
    let inputs: Inputs = generate(&cfg).unwrap().into();
    let prepared = prepare(&inputs, PrepareOptions::default());
    let (records, report) = feature_records(
        &prepared,
        ModalitySet::Single(m),
        Granularity::new(8).unwrap(),
    );
    assert_eq!(report.retained.len(), 60);
    let data = Dataset::from_records(&records, inst).unwrap();
    assert_eq!(data.len(), 240);
    let res = lopo_cv(&data, Family::Rf, &rf_untuned(), seed).unwrap();
    let mv = compute_metrics(&res.counts(Family::Rf));
    eprintln!(
        "{m} {inst} {effect:?} seed {seed}: f1 {:.3} ba {:.3} in {:?}",
        mv.f1,
        mv.balanced_accuracy,
        t.elapsed()
    );
    mv
}

#[test]
fn strong_effect_is_recovered_on_every_planted_channel() {
    for (m, inst) in [
        (Modality::Steps, Instrument::Cesd10),
        (Modality::Sleep, Instrument::Cesd10),
        (Modality::Distance, Instrument::Stai),
        (Modality::HeartRate, Instrument::Pss4),
    ] {
        let mv = recover(Effect::Strong, 7, m, inst);
        assert!(mv.f1 >= 0.85 && mv.balanced_accuracy >= 0.80, "{m}: {mv:?}");
    }
}

#[test]
fn null_effect_is_near_chance() {
    for seed in 0..3 {
        let mv = recover(Effect::None, seed, Modality::Steps, Instrument::Cesd10);
        assert!((0.35..=0.65).contains(&mv.balanced_accuracy), "{mv:?}");
    }
}
