//! Statistical behaviour of the synthetic harness: metrics must degrade
//! monotonically as noise grows, and the zero-noise chain must be perfect.

use papyri_core::coco::Dataset;
use papyri_core::eval::{evaluate, EvalConfig};
use papyri_core::synth::{generate_scene, perturb, ConfusionModel, NoiseSpec, SceneSpec};

fn scene(seed: u64) -> Dataset {
    generate_scene(&SceneSpec {
        seed,
        lines: 4,
        chars_per_line: (8, 12),
        ..SceneSpec::default()
    })
    .unwrap()
    .0
}

fn noisy_map(ds: &Dataset, seed: u64, drop: f64, sigma: f64) -> f64 {
    let cats = ds.categories.evaluated_ids();
    let noise = NoiseSpec {
        seed,
        jitter_sigma: sigma,
        drop_prob: drop,
        spurious_rate: 1.0,
        confusion: ConfusionModel::uniform(cats, 0.05),
        tp_score: (0.8, 0.1),
        fp_score: (0.3, 0.1),
    };
    let preds = perturb(ds, &noise).unwrap();
    evaluate(ds, &preds, &EvalConfig::recognition())
        .unwrap()
        .map
}

#[test]
fn map_degrades_with_drop_probability() {
    let drops = [0.0, 0.25, 0.6];
    let mut means = [0.0f64; 3];
    for seed in 0..20u64 {
        let ds = scene(seed);
        for (i, &drop) in drops.iter().enumerate() {
            means[i] += noisy_map(&ds, 1000 + seed, drop, 1.0);
        }
    }
    for pair in means.windows(2) {
        assert!(
            pair[0] >= pair[1],
            "mean mAP rose as drop probability grew: {means:?}"
        );
    }
}

#[test]
fn map_degrades_with_jitter() {
    let sigmas = [0.0, 2.0, 8.0];
    let mut means = [0.0f64; 3];
    for seed in 0..20u64 {
        let ds = scene(seed);
        for (i, &sigma) in sigmas.iter().enumerate() {
            means[i] += noisy_map(&ds, 2000 + seed, 0.1, sigma);
        }
    }
    for pair in means.windows(2) {
        assert!(
            pair[0] >= pair[1],
            "mean mAP rose as jitter grew: {means:?}"
        );
    }
}

#[test]
fn zero_noise_chain_is_perfect() {
    for seed in 0..5u64 {
        let ds = scene(seed);
        let noise = NoiseSpec::zero(seed, ds.categories.evaluated_ids());
        let preds = perturb(&ds, &noise).unwrap();
        for cfg in [EvalConfig::detection(), EvalConfig::recognition()] {
            let report = evaluate(&ds, &preds, &cfg).unwrap();
            assert_eq!(report.map, 1.0);
            assert_eq!(report.ap50, Some(1.0));
            assert_eq!(report.ap75, Some(1.0));
            assert_eq!(report.ar50, Some(1.0));
            assert_eq!(report.ar75, Some(1.0));
        }
    }
}
