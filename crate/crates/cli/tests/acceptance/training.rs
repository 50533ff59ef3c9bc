//! Training protocol on the synthetic blob corpus.

use std::time::Instant;

use hfl_core::boundary_map;
use hfl_core::eval::{self, GtMode, PrCurve};
use hfl_core::features::{self, InterpMode};
use hfl_core::regressor::{self, LabeledSample, Origin, RegressorHead, TrainConfig};

use crate::common::{blob_scene, Scene};
use crate::Check;

const SIDE: usize = 48;
const TRAIN_IMAGES: u64 = 30;
const HOLDOUT_IMAGES: u64 = 10;
const TEST_IMAGES: u64 = 8;
const AGREE_TOL: f32 = 1.0;
const MATCH_TOL: f32 = 1.0;
/// Training seeds over which mining's effect on holdout false negatives is measured.
const MINING_SEEDS: std::ops::Range<u64> = 0..8;

fn config() -> TrainConfig {
    TrainConfig {
        epochs_phase1: 30,
        epochs_phase2: 30,
        learning_rate: 0.02,
        momentum: 0.9,
        batch_size: 32,
        fn_threshold: 0.5,
        dropout_rate: 0.2,
        hidden: 64,
        seed: 11,
    }
}

fn samples(scenes: &[Scene], origin: Origin) -> Vec<LabeledSample> {
    let mut out = Vec::new();
    for s in scenes {
        let cs = s.candidates();
        let m = features::batch_descriptors(&mut s.stack(), &cs, InterpMode::Bilinear).unwrap();
        let labels = eval::agreement_labels(&s.annotations, &cs, AGREE_TOL).unwrap();
        out.extend(regressor::samples_from_matrix(&m, &labels, origin).unwrap());
    }
    out
}

fn curve(head: &RegressorHead, s: &Scene) -> PrCurve {
    let cs = s.candidates();
    let m = features::batch_descriptors(&mut s.stack(), &cs, InterpMode::Bilinear).unwrap();
    let preds = head.predict(&m).unwrap();
    let map = boundary_map::assemble(&preds, &cs, s.dims()).unwrap();
    eval::pr_curve(&map, &s.annotations, GtMode::Any, &eval::default_thresholds(), MATCH_TOL).unwrap()
}

fn ods(head: &RegressorHead, scenes: &[Scene]) -> f64 {
    let curves: Vec<PrCurve> = scenes.iter().map(|s| curve(head, s)).collect();
    eval::aggregate(&curves).unwrap().ods_f
}

/// Ceiling for any head: predictions equal to the agreement labels themselves.
fn oracle_ods(scenes: &[Scene]) -> f64 {
    let curves: Vec<PrCurve> = scenes
        .iter()
        .map(|s| {
            let cs = s.candidates();
            let labels = eval::agreement_labels(&s.annotations, &cs, AGREE_TOL).unwrap();
            let map = boundary_map::assemble(&labels, &cs, s.dims()).unwrap();
            eval::pr_curve(&map, &s.annotations, GtMode::Any, &eval::default_thresholds(), MATCH_TOL).unwrap()
        })
        .collect();
    eval::aggregate(&curves).unwrap().ods_f
}

fn bits(h: &RegressorHead) -> Vec<u32> {
    h.w1().iter()
        .chain(h.b1())
        .chain(h.w2())
        .chain(std::iter::once(&h.b2()))
        .map(|v| v.to_bits())
        .collect()
}

pub fn protocol(c: &mut Check) {
    let start = Instant::now();
    let scenes = |from: u64, n: u64| (from..from + n).map(|i| blob_scene(1000 + i, SIDE, SIDE)).collect::<Vec<_>>();
    let train_scenes = scenes(0, TRAIN_IMAGES);
    let hold_scenes = scenes(TRAIN_IMAGES, HOLDOUT_IMAGES);
    let test_scenes = scenes(TRAIN_IMAGES + HOLDOUT_IMAGES, TEST_IMAGES);
    let train_set = samples(&train_scenes, Origin::Train);
    let holdout = samples(&hold_scenes, Origin::Holdout);
    let cfg = config();

    let dim = train_set[0].descriptor.len();
    let init = RegressorHead::init(dim, cfg.hidden, cfg.dropout_rate, cfg.seed).unwrap();
    let report = regressor::train_with_mining(&init, &train_set, &holdout, &cfg).unwrap();
    let trained = ods(&report.head, &test_scenes);
    c.note(format!("label-oracle ODS {:.3}", oracle_ods(&test_scenes)));
    let untrained = ods(&init, &test_scenes);
    c.note(format!(
        "{} train / {} holdout samples, ODS trained {trained:.3} vs untrained {untrained:.3}",
        train_set.len(),
        holdout.len()
    ));
    c.ensure(trained - untrained >= 0.2, format!("ODS gain {:.3} < 0.2", trained - untrained));

    c.note(format!(
        "holdout FN phase1 {} -> phase2 {}",
        report.holdout_fn_phase1, report.holdout_fn_phase2
    ));
    let (mut fn1, mut fn2, mut improved) = (0, 0, 0);
    for seed in MINING_SEEDS {
        let cfg = TrainConfig { seed, ..config() };
        let init = RegressorHead::init(dim, cfg.hidden, cfg.dropout_rate, cfg.seed).unwrap();
        let r = regressor::train_with_mining(&init, &train_set, &holdout, &cfg).unwrap();
        fn1 += r.holdout_fn_phase1;
        fn2 += r.holdout_fn_phase2;
        improved += usize::from(r.holdout_fn_phase2 <= r.holdout_fn_phase1);
    }
    c.note(format!(
        "seeds {MINING_SEEDS:?}: FN total {fn1} -> {fn2}, {improved}/{} runs not worse",
        MINING_SEEDS.count()
    ));
    c.ensure(fn2 <= fn1, "phase-2 false negatives exceed phase 1 over the seed panel");

    let balanced = regressor::balance_quartiles(&train_set, cfg.seed).unwrap();
    let mut counts = [0usize; 4];
    for s in &balanced {
        counts[regressor::quartile(s.label)] += 1;
    }
    let mut raw = [0usize; 4];
    for s in &train_set {
        raw[regressor::quartile(s.label)] += 1;
    }
    let nonempty: Vec<usize> = (0..4).filter(|&q| raw[q] > 0).map(|q| counts[q]).collect();
    c.note(format!("quartiles raw {raw:?} balanced {counts:?}"));
    c.ensure(
        nonempty.windows(2).all(|w| w[0] == w[1]) && (0..4).all(|q| raw[q] > 0 || counts[q] == 0),
        "balanced quartile counts differ",
    );

    let again = regressor::train_with_mining(&init, &train_set, &holdout, &cfg).unwrap();
    c.ensure(bits(&again.head) == bits(&report.head), "equal-seed runs differ");
    c.ensure(
        again.phase1_loss == report.phase1_loss && again.phase2_loss == report.phase2_loss,
        "equal-seed loss traces differ",
    );
    let secs = start.elapsed().as_secs_f64();
    c.note(format!("{secs:.1}s"));
    c.ensure(secs < 300.0, "slower than 5 min");
}
