//! Criteria 6-8 and 10: empirical properties of real training runs on the
//! synthetic dataset. Training is expensive, so every configuration is
//! trained exactly once and shared through a lazy fixture; criterion 10's
//! teacher-hash audit piggybacks on every distillation run the fixture makes.

use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use resdistill::attention::AttentionMode;
use resdistill::backbone::{build_model, Model, ModelConfig};
use resdistill::data::{generate_synthetic, DatasetManifest, MagnificationFactor};
use resdistill::losses::{Alignment, DistillConfig};
use resdistill::trainer::{mean_std, run_training, RunReport, TrainConfig, TrainOutcome};

use crate::{fail, pass};

const SEEDS: [u64; 3] = [0, 1, 2];
const PER_CLASS: usize = 200;
const CLASSES: usize = 4;
const SIZE: usize = 48;
const EPOCHS: usize = 20;
const LR: f64 = 3e-3;
const ALPHA_FM: f64 = 0.1;
const ALPHA_AT: f64 = 0.1;

fn model_cfg() -> ModelConfig {
    ModelConfig {
        input_channels: 3,
        block_channels: vec![8, 16, 16],
        num_classes: CLASSES,
        input_size: SIZE,
    }
}

fn train_cfg(seed: u64, factor: u32, distill: Option<DistillConfig>) -> TrainConfig {
    TrainConfig {
        epochs: EPOCHS,
        batch_size: 32,
        learning_rate: LR,
        seed,
        magnification: MagnificationFactor::new(factor).unwrap(),
        distill,
    }
}

fn distill_cfg(mode: AttentionMode) -> DistillConfig {
    DistillConfig {
        alpha_fm: ALPHA_FM,
        alpha_at: ALPHA_AT,
        alpha_kd: 0.0,
        use_sr: false,
        attention_mode: mode,
        alignment: Alignment::DegradeRestore,
    }
}

pub struct Fixture {
    _dir: tempfile::TempDir,
    /// Plain-student mean test accuracy per factor (1, 2, 4, 8), 3 seeds.
    pub baseline_acc: Vec<(u32, Vec<f64>)>,
    /// FM+AT distillation at factor 8, per attention mode: (mode, test
    /// accuracies, selected-epoch validation kappas), 3 seeds each.
    pub distilled: Vec<(AttentionMode, Vec<f64>, Vec<f64>)>,
    /// Wall-clock of teacher + baseline-f8 + distilled-f8 (3 seeds each).
    pub pipeline_secs: f64,
    /// (hash before, hash after) pairs for every distillation run.
    pub teacher_hashes: Vec<(String, String)>,
}

fn selected_val_kappa(report: &RunReport) -> f64 {
    report.epochs[report.selected_epoch - 1].val_kappa
}

fn build_fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data: DatasetManifest =
        generate_synthetic(PER_CLASS, CLASSES, SIZE, 7, dir.path()).unwrap();
    let mcfg = model_cfg();

    let mut pipeline_secs = 0.0;
    let mut teacher_hashes = Vec::new();

    // Teachers double as the factor-1 baseline students: identical protocol.
    let start = Instant::now();
    let teachers: Vec<TrainOutcome> = SEEDS
        .iter()
        .map(|&s| run_training(&mcfg, &train_cfg(s, 1, None), &data, None).unwrap())
        .collect();
    pipeline_secs += start.elapsed().as_secs_f64();

    let mut frozen_teacher: Model<f32> = {
        let mut m = build_model::<f32>(&mcfg, SEEDS[0]).unwrap();
        m.restore(&teachers[0].model.snapshot());
        m.freeze();
        m
    };
    // Belt and braces: the fixture clones parameters, never the live model.
    assert_eq!(frozen_teacher.param_hash(), teachers[0].model.param_hash());

    let mut baseline_acc = vec![(
        1u32,
        teachers.iter().map(|t| t.report.test_accuracy).collect::<Vec<_>>(),
    )];
    for factor in [2u32, 4, 8] {
        let start = Instant::now();
        let accs: Vec<f64> = SEEDS
            .iter()
            .map(|&s| {
                run_training(&mcfg, &train_cfg(s, factor, None), &data, None)
                    .unwrap()
                    .report
                    .test_accuracy
            })
            .collect();
        if factor == 8 {
            pipeline_secs += start.elapsed().as_secs_f64();
        }
        baseline_acc.push((factor, accs));
    }

    let mut distilled = Vec::new();
    for mode in [
        AttentionMode::ReluMinMax,
        AttentionMode::Raw,
        AttentionMode::MinMax,
    ] {
        let start = Instant::now();
        let mut accs = Vec::new();
        let mut kappas = Vec::new();
        for &s in &SEEDS {
            let before = frozen_teacher.param_hash();
            let outcome = run_training(
                &mcfg,
                &train_cfg(s, 8, Some(distill_cfg(mode))),
                &data,
                Some(&frozen_teacher),
            )
            .unwrap();
            teacher_hashes.push((before, frozen_teacher.param_hash()));
            accs.push(outcome.report.test_accuracy);
            kappas.push(selected_val_kappa(&outcome.report));
        }
        if mode == AttentionMode::ReluMinMax {
            pipeline_secs += start.elapsed().as_secs_f64();
        }
        distilled.push((mode, accs, kappas));
    }
    // Keep the teacher borrowable for the hash audit above.
    let _ = &mut frozen_teacher;

    Fixture {
        _dir: dir,
        baseline_acc,
        distilled,
        pipeline_secs,
        teacher_hashes,
    }
}

fn fixture() -> &'static Mutex<Fixture> {
    static FIXTURE: OnceLock<Mutex<Fixture>> = OnceLock::new();
    FIXTURE.get_or_init(|| Mutex::new(build_fixture()))
}

pub fn criterion_6() {
    let fx = fixture().lock().unwrap();
    let means: Vec<(u32, f64)> = fx
        .baseline_acc
        .iter()
        .map(|(f, accs)| (*f, mean_std(accs).0))
        .collect();
    let ordered = means.windows(2).all(|w| w[0].1 >= w[1].1);
    let drop = means[0].1 - means[3].1;
    let summary: Vec<String> = means
        .iter()
        .map(|(f, m)| format!("f{f} {m:.3}"))
        .collect();
    if !ordered {
        fail(
            6,
            &format!("baseline accuracy not non-increasing: {}", summary.join(", ")),
        );
    }
    if drop < 0.05 {
        fail(
            6,
            &format!(
                "factor-8 accuracy only {:.3} below factor-1 (need >= 0.05): {}",
                drop,
                summary.join(", ")
            ),
        );
    }
    pass(
        6,
        &format!(
            "3-seed mean baseline accuracy non-increasing ({}), factor-8 drop {:.3}",
            summary.join(" >= "),
            drop
        ),
    );
}

pub fn criterion_7() {
    let fx = fixture().lock().unwrap();
    let base_f8 = mean_std(&fx.baseline_acc[3].1).0;
    let (mode, accs, _) = &fx.distilled[0];
    assert_eq!(*mode, AttentionMode::ReluMinMax);
    let distilled = mean_std(accs).0;
    let gain = distilled - base_f8;
    let mins = fx.pipeline_secs / 60.0;
    if gain < 0.02 {
        fail(
            7,
            &format!(
                "FM+AT gain at factor 8 is {gain:+.3} (distilled {distilled:.3} vs baseline {base_f8:.3}), need >= +0.02"
            ),
        );
    }
    if mins >= 30.0 {
        fail(7, &format!("pipeline took {mins:.1} min (budget 30 min)"));
    }
    pass(
        7,
        &format!(
            "FM+AT at factor 8: {distilled:.3} vs baseline {base_f8:.3} ({gain:+.3}, 3-seed mean); pipeline {mins:.1} min"
        ),
    );
}

pub fn criterion_8() {
    let fx = fixture().lock().unwrap();
    let kappa_of = |mode: AttentionMode| -> f64 {
        fx.distilled
            .iter()
            .find(|(m, _, _)| *m == mode)
            .map(|(_, _, kappas)| mean_std(kappas).0)
            .unwrap()
    };
    let relu = kappa_of(AttentionMode::ReluMinMax);
    let raw = kappa_of(AttentionMode::Raw);
    let minmax = kappa_of(AttentionMode::MinMax);
    let numbers =
        format!("val kappa (3-seed mean): relu_min_max {relu:.3}, raw {raw:.3}, min_max {minmax:.3}");
    if relu >= raw && relu >= minmax {
        pass(8, &numbers);
    } else {
        fail(8, &format!("DIVERGENCE — ordering violated; {numbers}"));
    }
}

pub fn criterion_10() {
    let fx = fixture().lock().unwrap();
    let runs = fx.teacher_hashes.len();
    for (i, (before, after)) in fx.teacher_hashes.iter().enumerate() {
        if before != after {
            fail(
                10,
                &format!("teacher hash changed during distillation run {i}: {before} -> {after}"),
            );
        }
    }
    let first = &fx.teacher_hashes[0].0;
    if fx.teacher_hashes.iter().any(|(b, _)| b != first) {
        fail(10, "teacher hash drifted between distillation runs");
    }
    pass(
        10,
        &format!("teacher parameter hash {first:.12}… unchanged across {runs} distillation runs"),
    );
}
