//! Acceptance suite: one test per release criterion, each printing a single
//! `ACCEPTANCE n: PASS/FAIL` line. The empirical criteria (6-8) train real
//! models on the synthetic dataset and share one set of training runs through
//! a lazy fixture; everything else is analytic and fast.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resdistill::attention::{grad_cam, AttentionMode};
use resdistill::backbone::{build_model, Model, ModelConfig};
use resdistill::data::{generate_synthetic, DatasetManifest, MagnificationFactor};
use resdistill::losses::{
    at_plus_loss, ce_loss, fm_loss, kd_loss, sr_loss, Alignment, DistillConfig,
};
use resdistill::metrics::quadratic_kappa;
use resdistill::tensor::{Elem, Graph, Tensor};
use resdistill::trainer::{run_training, TrainConfig};

fn pass(n: usize, msg: &str) {
    println!("ACCEPTANCE {n}: PASS — {msg}");
}

fn fail(n: usize, msg: &str) -> ! {
    panic!("ACCEPTANCE {n}: FAIL — {msg}");
}

// ---------------------------------------------------------------------------
// Criterion 1: every differentiable op and every loss matches central finite
// differences, relative error < 1e-3 (f32) / 1e-6 (f64), >= 5 random
// instances each, total runtime < 60 s.
// ---------------------------------------------------------------------------

/// Margin-aware sampler: keeps magnitudes in [0.1, 1.0] so ReLU kinks and
/// max-pool ties stay far away relative to the finite-difference step.
fn sample<E: Elem>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    (0..n)
        .map(|_| {
            let mag: f64 = rng.gen_range(0.1..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            E::from(mag * sign).unwrap()
        })
        .collect()
}

fn positive<E: Elem>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    (0..n)
        .map(|_| E::from(rng.gen_range(0.1..1.0)).unwrap())
        .collect()
}

/// Random values with pairwise spacing of at least 0.1, so no two entries can
/// trade places under a finite-difference step. Max pooling is checked on
/// these: near a within-window tie the perturbation flips the argmax and the
/// central difference measures the wrong branch.
fn well_separated<E: Elem>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    let mut vals: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64 + rng.gen_range(-0.01..0.01))
        .collect();
    vals.shuffle(rng);
    vals.into_iter().map(|v| E::from(v).unwrap()).collect()
}

/// Positive values bounded away from zero. The log-bearing losses are checked
/// on this range: central differences of `ln` near 0.1 pick up curvature error
/// of order `step^2 / p^2`, which exceeds the f32 tolerance at step 1e-2.
fn well_conditioned_prob<E: Elem>(rng: &mut ChaCha8Rng, n: usize) -> Vec<E> {
    (0..n)
        .map(|_| E::from(rng.gen_range(0.4..1.0)).unwrap())
        .collect()
}

/// Analytic gradients via `backward` against central finite differences for a
/// scalar-valued builder over leaf tensors. Returns the worst relative error.
fn fd_worst<E: Elem, F>(inputs: &[(Vec<usize>, Vec<E>)], step: f64, build: F) -> f64
where
    F: Fn(&Graph<E>, &[Tensor<E>]) -> Tensor<E>,
{
    fd_worst_sampled(inputs, step, usize::MAX, build)
}

/// Like `fd_worst`, but probes at most `max_coords` coordinates per leaf
/// (evenly strided); the analytic gradient still comes from one full
/// backward pass. Used for the model-parameter losses where a full
/// finite-difference sweep would dominate the suite's time budget.
fn fd_worst_sampled<E: Elem, F>(
    inputs: &[(Vec<usize>, Vec<E>)],
    step: f64,
    max_coords: usize,
    build: F,
) -> f64
where
    F: Fn(&Graph<E>, &[Tensor<E>]) -> Tensor<E>,
{
    let g: Graph<E> = Graph::new();
    let leaves: Vec<Tensor<E>> = inputs
        .iter()
        .map(|(s, d)| Tensor::from_vec(s, d.clone()).unwrap().with_grad())
        .collect();
    let loss = build(&g, &leaves);
    assert_eq!(loss.numel(), 1, "builder must produce a scalar");
    g.backward(&loss).unwrap();
    let analytic: Vec<Vec<E>> = leaves.iter().map(|t| t.grad().unwrap()).collect();

    let eval = |data: &[(Vec<usize>, Vec<E>)]| -> f64 {
        let g: Graph<E> = Graph::new();
        let leaves: Vec<Tensor<E>> = data
            .iter()
            .map(|(s, d)| Tensor::from_vec(s, d.clone()).unwrap().with_grad())
            .collect();
        build(&g, &leaves).data()[0].to_f64().unwrap()
    };

    let mut worst = 0.0f64;
    for (ti, (_, data)) in inputs.iter().enumerate() {
        let stride = data.len().div_ceil(max_coords).max(1);
        for i in (0..data.len()).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[ti].1[i] = plus[ti].1[i] + E::from(step).unwrap();
            let mut minus = inputs.to_vec();
            minus[ti].1[i] = minus[ti].1[i] - E::from(step).unwrap();
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic[ti][i].to_f64().unwrap();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    worst
}

/// One of the three feature-space losses checked through full model
/// parameters.
#[derive(Clone, Copy)]
enum FeatureLoss {
    Fm,
    AtPlus,
    Sr,
}

/// Teacher-side constants for the feature-space losses, stored as raw f64 so
/// the same numbers feed both element types exactly.
struct TeacherConstants {
    features: (Vec<usize>, Vec<f64>),
    map_values: (Vec<usize>, Vec<f64>),
    channel_weights: (Vec<usize>, Vec<f64>),
}

fn feature_loss_value<E: Elem>(
    g: &Graph<E>,
    student: &Model<E>,
    teacher: &Model<E>,
    which: FeatureLoss,
    input: &[f64],
    tc: &TeacherConstants,
) -> Tensor<E> {
    let cast = |v: &[f64]| -> Vec<E> { v.iter().map(|x| E::from(*x).unwrap()).collect() };
    let t_features = Tensor::from_vec(&tc.features.0, cast(&tc.features.1)).unwrap();
    let batch = Tensor::from_vec(&[1, 1, 8, 8], cast(input)).unwrap();
    let rec = student.forward_with_features(g, &batch).unwrap();
    match which {
        FeatureLoss::Fm => {
            fm_loss(g, &t_features, &rec.features, Alignment::DegradeRestore).unwrap()
        }
        FeatureLoss::AtPlus => {
            let smaps = grad_cam(g, &rec, AttentionMode::ReluMinMax, true).unwrap();
            let tmaps = resdistill::attention::AttentionMap {
                values: Tensor::from_vec(&tc.map_values.0, cast(&tc.map_values.1)).unwrap(),
                mode: AttentionMode::ReluMinMax,
                channel_weights: Tensor::from_vec(
                    &tc.channel_weights.0,
                    cast(&tc.channel_weights.1),
                )
                .unwrap(),
            };
            at_plus_loss(g, &tmaps, &smaps, Alignment::DegradeRestore).unwrap()
        }
        FeatureLoss::Sr => sr_loss(g, &t_features, &rec.features, teacher).unwrap(),
    }
}

/// Gradient check for the feature-space losses through full model parameters.
///
/// The analytic gradient is computed in `E`. The finite-difference oracle is
/// always evaluated in f64 at the bit-identical parameter point (f32 values
/// are exactly representable in f64): an f32-sized step perturbs enough to
/// flip a maxpool argmax inside the network, where central differences stop
/// measuring the derivative. For AT+ the classifier head is excluded — the
/// Grad-CAM channel weights are constants by contract, so the analytic
/// gradient deliberately drops that dependence.
fn feature_loss_cases<E: Elem>(inst: usize) -> Vec<(&'static str, f64)> {
    let cfg = ModelConfig {
        input_channels: 1,
        block_channels: vec![2, 2],
        num_classes: 3,
        input_size: 8,
    };
    let mut r = ChaCha8Rng::seed_from_u64(0xFEA7 + inst as u64);

    let mut student = build_model::<E>(&cfg, 100 + inst as u64).unwrap();
    // Shift the conv biases positive so most pre-activations clear the relu
    // kink; this keeps the finite-difference point well-conditioned without
    // changing what the check exercises.
    let names: Vec<String> = student
        .named_params()
        .iter()
        .map(|(n, _)| n.clone())
        .collect();
    {
        let mut snap = student.snapshot();
        for (pi, name) in names.iter().enumerate() {
            if name.ends_with(".bias") && name != "head.bias" {
                for v in &mut snap[pi] {
                    *v = *v + E::from(0.5).unwrap();
                }
            }
        }
        student.restore(&snap);
    }
    let mut teacher = build_model::<E>(&cfg, 900 + inst as u64).unwrap();
    teacher.freeze();
    let input: Vec<f64> = sample::<f64>(&mut r, 64);
    let teacher_input: Vec<E> = sample(&mut r, 64);

    let tc = {
        let g: Graph<E> = Graph::new();
        let batch = Tensor::from_vec(&[1, 1, 8, 8], teacher_input).unwrap();
        let rec = teacher.forward_with_features(&g, &batch).unwrap();
        let maps = grad_cam(&g, &rec, AttentionMode::ReluMinMax, false).unwrap();
        let dump = |t: &Tensor<E>| -> (Vec<usize>, Vec<f64>) {
            (
                t.shape().to_vec(),
                t.data().iter().map(|x| x.to_f64().unwrap()).collect(),
            )
        };
        TeacherConstants {
            features: dump(&rec.features),
            map_values: dump(&maps.values),
            channel_weights: dump(&maps.channel_weights),
        }
    };

    // f64 twin at exactly the same parameter values for the numeric side.
    let to64 = |snap: &[Vec<E>]| -> Vec<Vec<f64>> {
        snap.iter()
            .map(|p| p.iter().map(|x| x.to_f64().unwrap()).collect())
            .collect()
    };
    let mut student64 = build_model::<f64>(&cfg, 0).unwrap();
    student64.restore(&to64(&student.snapshot()));
    let mut teacher64 = build_model::<f64>(&cfg, 0).unwrap();
    teacher64.restore(&to64(&teacher.snapshot()));
    teacher64.freeze();

    let step = 1e-5;
    let max_coords = 8;
    let mut out = Vec::new();
    for (name, which) in [
        ("loss fm", FeatureLoss::Fm),
        ("loss at_plus", FeatureLoss::AtPlus),
        ("loss sr", FeatureLoss::Sr),
    ] {
        student.zero_grads();
        {
            let g: Graph<E> = Graph::new();
            let loss = feature_loss_value(&g, &student, &teacher, which, &input, &tc);
            assert_eq!(loss.numel(), 1);
            g.backward(&loss).unwrap();
        }
        let analytic: Vec<Vec<E>> = student
            .named_params()
            .iter()
            .map(|(_, t)| t.grad().unwrap())
            .collect();

        let base = student64.snapshot();
        let mut worst = 0.0f64;
        for (pi, data) in base.iter().enumerate() {
            if matches!(which, FeatureLoss::AtPlus) && names[pi].starts_with("head.") {
                continue;
            }
            let stride = data.len().div_ceil(max_coords).max(1);
            for i in (0..data.len()).step_by(stride) {
                let mut eval = |delta: f64| -> f64 {
                    let mut snap = base.clone();
                    snap[pi][i] += delta;
                    student64.restore(&snap);
                    let g: Graph<f64> = Graph::new();
                    feature_loss_value(&g, &student64, &teacher64, which, &input, &tc).data()[0]
                };
                let numeric = (eval(step) - eval(-step)) / (2.0 * step);
                let a = analytic[pi][i].to_f64().unwrap();
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                if rel > 1e-4 && std::env::var_os("ACCEPTANCE_TRACE").is_some() {
                    eprintln!(
                        "[fd] {} {} [{i}]: analytic {a:.6e} numeric {numeric:.6e} rel {rel:.3e}",
                        name, names[pi]
                    );
                }
                worst = worst.max(rel);
            }
        }
        student64.restore(&base);
        out.push((name, worst));
    }
    out
}

/// Runs the op/loss gradient suite for one element type; returns (name, worst
/// relative error) per case so the caller can apply the tolerance.
fn gradient_suite<E: Elem>(instances: usize) -> Vec<(String, f64)> {
    let step = if E::BYTES == 4 { 1e-2 } else { 1e-5 };
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE97);

    for inst in 0..instances {
        let r = &mut rng;
        let t0 = std::cell::Cell::new(Instant::now());
        let mut case = |name: &str, worst: f64| {
            if std::env::var_os("ACCEPTANCE_TRACE").is_some() {
                eprintln!("[trace] {name}#{inst}: {:?}", t0.get().elapsed());
            }
            t0.set(Instant::now());
            out.push((format!("{name}#{inst}"), worst))
        };

        let v6 = || vec![6usize];
        case(
            "op add",
            fd_worst::<E, _>(
                &[(v6(), sample(r, 6)), (v6(), sample(r, 6))],
                step,
                |g, t| g.sum_all(&g.add(&t[0], &t[1]).unwrap()),
            ),
        );
        case(
            "op sub",
            fd_worst::<E, _>(
                &[(v6(), sample(r, 6)), (v6(), sample(r, 6))],
                step,
                |g, t| g.sum_all(&g.sub(&t[0], &t[1]).unwrap()),
            ),
        );
        case(
            "op mul",
            fd_worst::<E, _>(
                &[(v6(), sample(r, 6)), (v6(), sample(r, 6))],
                step,
                |g, t| g.sum_all(&g.mul(&t[0], &t[1]).unwrap()),
            ),
        );
        case(
            "op scale",
            fd_worst::<E, _>(&[(v6(), sample(r, 6))], step, |g, t| {
                g.sum_all(&g.scale(&t[0], 1.7))
            }),
        );
        case(
            "op relu",
            fd_worst::<E, _>(&[(v6(), sample(r, 6))], step, |g, t| {
                g.sum_all(&g.relu(&t[0]))
            }),
        );
        case(
            "op log_clamped",
            fd_worst::<E, _>(&[(v6(), well_conditioned_prob(r, 6))], step, |g, t| {
                g.sum_all(&g.log_clamped(&t[0]))
            }),
        );
        case(
            "op mean_all",
            fd_worst::<E, _>(&[(v6(), sample(r, 6))], step, |g, t| g.mean_all(&t[0])),
        );
        // sum_all is exercised as the reduction of every other case; give it
        // a weighted readout of its own so its backward is isolated too.
        case(
            "op sum_all",
            fd_worst::<E, _>(&[(v6(), sample(r, 6))], step, |g, t| {
                g.scale(&g.sum_all(&t[0]), 0.31)
            }),
        );
        case(
            "op linear",
            fd_worst::<E, _>(
                &[
                    (vec![2, 3], sample(r, 6)),
                    (vec![4, 3], sample(r, 12)),
                    (vec![4], sample(r, 4)),
                ],
                step,
                |g, t| g.sum_all(&g.linear(&t[0], &t[1], &t[2]).unwrap()),
            ),
        );
        case(
            "op conv2d",
            fd_worst::<E, _>(
                &[
                    (vec![1, 2, 4, 4], sample(r, 32)),
                    (vec![3, 2, 3, 3], sample(r, 54)),
                    (vec![3], sample(r, 3)),
                ],
                step,
                |g, t| {
                    let y = g.conv2d(&t[0], &t[1], Some(&t[2]), 1, 1).unwrap();
                    // Weighted readout so every output position matters
                    // differently.
                    let w = Tensor::from_vec(
                        y.shape(),
                        (0..y.numel())
                            .map(|i| E::from(0.1 + 0.01 * i as f64).unwrap())
                            .collect(),
                    )
                    .unwrap();
                    g.sum_all(&g.mul(&y, &w).unwrap())
                },
            ),
        );
        case(
            "op maxpool2",
            fd_worst::<E, _>(&[(vec![1, 2, 4, 4], well_separated(r, 32))], step, |g, t| {
                g.sum_all(&g.maxpool2(&t[0]).unwrap())
            }),
        );
        case(
            "op global_avg_pool",
            fd_worst::<E, _>(&[(vec![2, 3, 2, 2], sample(r, 24))], step, |g, t| {
                g.sum_all(&g.global_avg_pool(&t[0]).unwrap())
            }),
        );
        case(
            "op bilinear_resize",
            fd_worst::<E, _>(&[(vec![1, 2, 3, 3], sample(r, 18))], step, |g, t| {
                let y = g.bilinear_resize(&t[0], 5, 5).unwrap();
                let w = Tensor::from_vec(
                    y.shape(),
                    (0..y.numel())
                        .map(|i| E::from(0.1 + 0.02 * i as f64).unwrap())
                        .collect(),
                )
                .unwrap();
                g.sum_all(&g.mul(&y, &w).unwrap())
            }),
        );
        case(
            "op softmax",
            fd_worst::<E, _>(&[(vec![2, 4], sample(r, 8))], step, |g, t| {
                let p = g.softmax(&t[0]).unwrap();
                let w = Tensor::from_vec(
                    &[2, 4],
                    (0..8).map(|i| E::from(0.2 + 0.1 * i as f64).unwrap()).collect(),
                )
                .unwrap();
                g.sum_all(&g.mul(&p, &w).unwrap())
            }),
        );
        case(
            "op minmax_normalize_maps",
            fd_worst::<E, _>(&[(vec![1, 2, 2, 2], well_separated(r, 8))], step, |g, t| {
                let y = g.minmax_normalize_maps(&t[0]).unwrap();
                let w = Tensor::from_vec(
                    y.shape(),
                    (0..y.numel())
                        .map(|i| E::from(0.15 + 0.05 * i as f64).unwrap())
                        .collect(),
                )
                .unwrap();
                g.sum_all(&g.mul(&y, &w).unwrap())
            }),
        );
        // The channel weights are a constant by contract (gradient flows into
        // the features only), so only the features tensor is an FD leaf.
        let cam_weights: Vec<E> = sample(r, 6);
        case(
            "op cam_weighted_sum",
            fd_worst::<E, _>(
                &[(vec![1, 3, 2, 2], sample(r, 12))],
                step,
                |g, t| {
                    let cw = Tensor::from_vec(&[1, 2, 3], cam_weights.clone()).unwrap();
                    let y = g.cam_weighted_sum(&t[0], &cw).unwrap();
                    let w = Tensor::from_vec(
                        y.shape(),
                        (0..y.numel())
                            .map(|i| E::from(0.1 + 0.03 * i as f64).unwrap())
                            .collect(),
                    )
                    .unwrap();
                    g.sum_all(&g.mul(&y, &w).unwrap())
                },
            ),
        );

        // Losses. CE and KD differentiate through the probability argument;
        // FM / AT+ / SR differentiate through full model parameters so the
        // entire pipeline (including Grad-CAM's channel-weight readout in the
        // AT+ case) faces the finite-difference oracle.
        let labels: Vec<E> = {
            let mut l = vec![E::zero(); 8];
            for row in 0..2 {
                let k = r.gen_range(0..4);
                l[row * 4 + k] = E::one();
            }
            l
        };
        case(
            "loss ce",
            fd_worst::<E, _>(&[(vec![2, 4], well_conditioned_prob(r, 8))], step, {
                let labels = labels.clone();
                move |g, t| {
                    let lab = Tensor::from_vec(&[2, 4], labels.clone()).unwrap();
                    ce_loss(g, &t[0], &lab).unwrap()
                }
            }),
        );
        let tprob: Vec<E> = {
            let raw = positive::<E>(r, 8);
            let mut p = Vec::with_capacity(8);
            for row in 0..2 {
                let s: E = raw[row * 4..(row + 1) * 4].iter().copied().sum();
                for i in 0..4 {
                    p.push(raw[row * 4 + i] / s);
                }
            }
            p
        };
        case(
            "loss kd",
            fd_worst::<E, _>(&[(vec![2, 4], well_conditioned_prob(r, 8))], step, {
                let tprob = tprob.clone();
                move |g, t| {
                    let tp = Tensor::from_vec(&[2, 4], tprob.clone()).unwrap();
                    kd_loss(g, &tp, &t[0]).unwrap()
                }
            }),
        );

        // Feature-space losses through full model parameters.
        for (name, worst) in feature_loss_cases::<E>(inst) {
            case(name, worst);
        }
    }
    out
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let mut worst_f32 = (String::new(), 0.0f64);
    for (name, err) in gradient_suite::<f32>(5) {
        if err > worst_f32.1 {
            worst_f32 = (name.clone(), err);
        }
        if err > 1e-3 {
            fail(1, &format!("f32 {name}: relative error {err:.3e} > 1e-3"));
        }
    }
    let mut worst_f64 = (String::new(), 0.0f64);
    for (name, err) in gradient_suite::<f64>(5) {
        if err > worst_f64.1 {
            worst_f64 = (name.clone(), err);
        }
        if err > 1e-6 {
            fail(1, &format!("f64 {name}: relative error {err:.3e} > 1e-6"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 60.0 {
        fail(1, &format!("gradient suite took {secs:.1} s (budget 60 s)"));
    }
    pass(
        1,
        &format!(
            "all ops and losses match finite differences over 5 instances each; \
             worst f32 {:.2e} ({}), worst f64 {:.2e} ({}), {:.1} s",
            worst_f32.1, worst_f32.0, worst_f64.1, worst_f64.0, secs
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: Grad-CAM channel weights and the full ReluMinMax map match an
// independent finite-difference construction, max abs diff < 1e-4, on >= 10
// random (model, input) pairs.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_grad_cam_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11);
    let mut worst = 0.0f64;
    for pair in 0..10 {
        let cfg = ModelConfig {
            input_channels: 1,
            block_channels: vec![2, 3],
            num_classes: 2 + (pair % 3),
            input_size: 8,
        };
        let model = build_model::<f64>(&cfg, 40 + pair as u64).unwrap();
        let input: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = Tensor::from_vec(&[1, 1, 8, 8], input).unwrap();

        let g = Graph::new();
        let rec = model.forward_with_features(&g, &batch).unwrap();
        let maps = grad_cam(&g, &rec, AttentionMode::ReluMinMax, false).unwrap();

        let feats = rec.features.data().to_vec();
        let fshape = rec.features.shape().to_vec();
        let (c, h, w) = (fshape[1], fshape[2], fshape[3]);
        let hw = h * w;
        let k = cfg.num_classes;

        // Independent construction: finite-difference d logit_k / d feature
        // through the head alone, averaged spatially, then the weighted sum,
        // ReLU, and min-max re-derived with plain f64 arithmetic.
        let logit_at = |feat: &[f64], cls: usize| -> f64 {
            let g = Graph::new();
            let f = Tensor::from_vec(&fshape, feat.to_vec()).unwrap();
            let r = model.forward_from_features(&g, &f).unwrap();
            r.logits.data()[cls]
        };
        let step = 1e-6;
        let mut alpha_fd = vec![0.0f64; k * c];
        for cls in 0..k {
            for ch in 0..c {
                let mut s = 0.0;
                for i in 0..hw {
                    let idx = ch * hw + i;
                    let mut plus = feats.clone();
                    plus[idx] += step;
                    let mut minus = feats.clone();
                    minus[idx] -= step;
                    s += (logit_at(&plus, cls) - logit_at(&minus, cls)) / (2.0 * step);
                }
                alpha_fd[cls * c + ch] = s / hw as f64;
            }
        }
        for (i, &a) in maps.channel_weights.data().iter().enumerate() {
            worst = worst.max((a - alpha_fd[i]).abs());
        }

        let mut map_fd = vec![0.0f64; k * hw];
        for cls in 0..k {
            let cell = &mut map_fd[cls * hw..(cls + 1) * hw];
            for i in 0..hw {
                let mut v = 0.0;
                for ch in 0..c {
                    v += alpha_fd[cls * c + ch] * feats[ch * hw + i];
                }
                cell[i] = v.max(0.0); // ReLU
            }
            let (lo, hi) = cell
                .iter()
                .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if hi > lo {
                for v in cell.iter_mut() {
                    *v = (*v - lo) / (hi - lo);
                }
            } else {
                for v in cell.iter_mut() {
                    *v = 0.0;
                }
            }
        }
        for (i, &m) in maps.values.data().iter().enumerate() {
            worst = worst.max((m - map_fd[i]).abs());
        }
    }
    if worst >= 1e-4 {
        fail(2, &format!("max abs diff {worst:.3e} >= 1e-4"));
    }
    pass(
        2,
        &format!("channel weights and ReluMinMax maps match FD construction on 10 pairs, max abs diff {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: a Student cloned from the Teacher at factor 1 yields
// fm_loss == 0 and at_plus_loss == 0 exactly.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_self_distillation_fixed_point() {
    let cfg = ModelConfig {
        input_channels: 3,
        block_channels: vec![4, 8],
        num_classes: 4,
        input_size: 16,
    };
    let mut teacher = build_model::<f32>(&cfg, 77).unwrap();
    teacher.freeze();
    let student = build_model::<f32>(&cfg, 77).unwrap(); // same seed = clone

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input: Vec<f32> = (0..2 * 3 * 16 * 16).map(|_| rng.gen_range(0.0..1.0)).collect();
    let batch = Tensor::from_vec(&[2, 3, 16, 16], input).unwrap();

    let g = Graph::new();
    let t_rec = teacher.forward_with_features(&g, &batch).unwrap();
    let s_rec = student.forward_with_features(&g, &batch).unwrap();
    let t_maps = grad_cam(&g, &t_rec, AttentionMode::ReluMinMax, false).unwrap();
    let s_maps = grad_cam(&g, &s_rec, AttentionMode::ReluMinMax, true).unwrap();

    let fm = fm_loss(
        &g,
        &t_rec.features.detach(),
        &s_rec.features,
        Alignment::DegradeRestore,
    )
    .unwrap()
    .data()[0];
    let at = at_plus_loss(&g, &t_maps, &s_maps, Alignment::DegradeRestore)
        .unwrap()
        .data()[0];
    if fm != 0.0 || at != 0.0 {
        fail(3, &format!("fm = {fm:e}, at = {at:e} (both must be exactly 0)"));
    }
    pass(3, "cloned Student at factor 1: fm == 0 and at == 0 exactly");
}

// ---------------------------------------------------------------------------
// Criterion 4: distillation with all weights zero reproduces the plain
// trajectory bit-identically for the same seed.
// ---------------------------------------------------------------------------

fn tiny_dataset() -> (tempfile::TempDir, DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(10, 3, 32, 99, dir.path()).unwrap();
    (dir, manifest)
}

#[test]
fn criterion_4_all_zero_degeneracy() {
    let (_dir, data) = tiny_dataset();
    let model_cfg = ModelConfig {
        input_channels: 3,
        block_channels: vec![4, 8],
        num_classes: 3,
        input_size: 32,
    };
    let cfg_plain = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 5,
        magnification: MagnificationFactor::new(2).unwrap(),
        distill: None,
    };
    let mut cfg_zero = cfg_plain.clone();
    cfg_zero.distill = Some(DistillConfig::default());

    let plain = run_training(&model_cfg, &cfg_plain, &data, None).unwrap();
    let mut teacher = build_model::<f32>(&model_cfg, 1).unwrap();
    teacher.freeze();
    // A teacher may even be present; with zero weights it must never be consulted.
    let zero = run_training(&model_cfg, &cfg_zero, &data, Some(&teacher)).unwrap();

    if plain.model.param_hash() != zero.model.param_hash() {
        fail(4, "final parameter hashes differ");
    }
    if plain.loss_log != zero.loss_log {
        fail(4, "per-step loss logs differ");
    }
    let (a, b) = (&plain.report, &zero.report);
    if a.epochs != b.epochs || a.test_accuracy != b.test_accuracy || a.test_kappa != b.test_kappa {
        fail(4, "reports differ");
    }
    pass(4, "all-zero distillation matches the plain trajectory bit for bit");
}

// ---------------------------------------------------------------------------
// Criterion 5: quadratic kappa matches a brute-force confusion-matrix oracle
// to 1e-12 on 1000 random (pred, ref) pairs with K in {2..6}, including
// degenerate single-class cases.
// ---------------------------------------------------------------------------

fn kappa_oracle(pred: &[usize], reference: &[usize], k: usize) -> f64 {
    let n = pred.len() as f64;
    let mut obs = vec![0.0f64; k * k];
    let mut pm = vec![0.0f64; k];
    let mut rm = vec![0.0f64; k];
    for (&p, &r) in pred.iter().zip(reference) {
        obs[r * k + p] += 1.0;
        pm[p] += 1.0;
        rm[r] += 1.0;
    }
    let weight = |i: usize, j: usize| {
        let d = i as f64 - j as f64;
        d * d / ((k - 1) as f64 * (k - 1) as f64)
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            num += weight(i, j) * obs[i * k + j];
            den += weight(i, j) * rm[i] * pm[j] / n;
        }
    }
    if den == 0.0 {
        // Both sides concentrated on one class: 1 on agreement, 0 otherwise.
        return if num == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - num / den
}

#[test]
fn criterion_5_kappa_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0990);
    let mut degenerate_seen = 0usize;
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let k = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=40);
        let (pred, reference): (Vec<usize>, Vec<usize>) = if trial % 10 == 0 {
            // Degenerate: everything on a single class on one or both sides.
            degenerate_seen += 1;
            let cp = rng.gen_range(0..k);
            let cr = rng.gen_range(0..k);
            let pred = vec![cp; n];
            let reference = if trial % 20 == 0 {
                vec![cr; n]
            } else {
                (0..n).map(|_| rng.gen_range(0..k)).collect()
            };
            (pred, reference)
        } else {
            (
                (0..n).map(|_| rng.gen_range(0..k)).collect(),
                (0..n).map(|_| rng.gen_range(0..k)).collect(),
            )
        };
        let ours = quadratic_kappa(&pred, &reference, k).unwrap();
        let oracle = kappa_oracle(&pred, &reference, k);
        let diff = (ours - oracle).abs();
        worst = worst.max(diff);
        if diff > 1e-12 {
            fail(
                5,
                &format!("trial {trial} (k={k}, n={n}): ours {ours} vs oracle {oracle}"),
            );
        }
    }
    pass(
        5,
        &format!("1000 pairs (incl. {degenerate_seen} degenerate) match the oracle, worst diff {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: identical config + seed => identical report.json.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_determinism() {
    let (_dir, data) = tiny_dataset();
    let model_cfg = ModelConfig {
        input_channels: 3,
        block_channels: vec![4, 8],
        num_classes: 3,
        input_size: 32,
    };
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 11,
        magnification: MagnificationFactor::new(4).unwrap(),
        distill: None,
    };
    let a = run_training(&model_cfg, &cfg, &data, None).unwrap();
    let b = run_training(&model_cfg, &cfg, &data, None).unwrap();
    let ja = serde_json::to_string(&a.report).unwrap();
    let jb = serde_json::to_string(&b.report).unwrap();
    if ja != jb {
        fail(9, "serialized reports differ for identical config + seed");
    }
    pass(9, "two identical runs serialize to byte-identical report.json");
}

// ---------------------------------------------------------------------------
// Criteria 6, 7, 8, 10: empirical properties on the synthetic dataset. All
// training runs are shared through one fixture so the whole suite trains each
// configuration exactly once.
// ---------------------------------------------------------------------------

mod empirical;

#[test]
fn criterion_6_resolution_damage() {
    empirical::criterion_6();
}

#[test]
fn criterion_7_distillation_gain() {
    empirical::criterion_7();
}

#[test]
fn criterion_8_normalization_ablation() {
    empirical::criterion_8();
}

#[test]
fn criterion_10_frozen_teacher_invariance() {
    empirical::criterion_10();
}

