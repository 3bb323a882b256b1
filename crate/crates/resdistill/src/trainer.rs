//! Teacher training, Student distillation against a frozen Teacher, Adam
//! optimization, validation-based checkpoint selection, alpha grid search,
//! and multi-seed aggregation.
//!
//! Every source of randomness is derived from the run seed, so two runs
//! with the same seed agree bit for bit. Sub-seeds are split out with
//! [`derive_seed`], which separates domains (epoch shuffling, per-sample
//! augmentation) without correlation:
//!
//! ```
//! use resdistill::trainer::derive_seed;
//!
//! assert_eq!(derive_seed(7, 1, 3), derive_seed(7, 1, 3));
//! assert_ne!(derive_seed(7, 1, 3), derive_seed(7, 2, 3));
//! assert_ne!(derive_seed(7, 1, 3), derive_seed(8, 1, 3));
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::grad_cam;
use crate::backbone::{build_model, Model, ModelConfig};
use crate::data::{
    augment, balanced_indices, degrade, load_image, DatasetManifest, MagnificationFactor, Split,
};
use crate::error::{Error, Result};
use crate::losses::{
    at_plus_loss, ce_loss, fm_loss, kd_loss, sr_loss, total_loss, DistillConfig, LossTerms,
};
use crate::metrics::{evaluate_images, EvalResult};
use crate::tensor::{Elem, Graph, Tensor};

/// Short content hash identifying the code version in every artifact.
pub fn code_version() -> String {
    let mut hasher = Sha256::new();
    hasher.update(env!("CARGO_PKG_NAME").as_bytes());
    hasher.update(env!("CARGO_PKG_VERSION").as_bytes());
    let digest = format!("{:x}", hasher.finalize());
    format!("{}-{}", env!("CARGO_PKG_VERSION"), &digest[..12])
}

/// Deterministic per-(tag, index) seed derivation, splitmix64 finalizer.
pub fn derive_seed(base: u64, tag: u64, idx: u64) -> u64 {
    let mut z = base
        ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ idx.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub magnification: MagnificationFactor,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 0,
            magnification: MagnificationFactor::new(1).unwrap(),
            distill: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }
}

/// Adam with bias correction; state advances one step per call even when the
/// gradient is zero.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One update over all parameters, reading each tensor's accumulated
    /// gradient buffer. A NaN gradient aborts with the step index.
    pub fn step<E: Elem>(&mut self, params: &mut [&mut Tensor<E>], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pi, param) in params.iter_mut().enumerate() {
            let grad = param
                .grad()
                .ok_or_else(|| Error::Config("adam_step on a tensor without gradient".into()))?;
            if grad.iter().any(|g| g.is_nan()) {
                return Err(Error::NanGradient(self.t as usize));
            }
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            let data = param.data_mut();
            for (i, g) in grad.iter().enumerate() {
                let g = g.to_f64().unwrap();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let update = lr * mhat / (vhat.sqrt() + self.epsilon);
                data[i] = data[i] - E::from(update).unwrap();
            }
        }
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub ce: f64,
    pub fm: f64,
    pub at: f64,
    pub kd: f64,
    pub total: f64,
    pub val_accuracy: f64,
    pub val_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) maximizing validation kappa; ties go to the earliest.
    pub selected_epoch: usize,
    pub test_accuracy: f64,
    pub test_kappa: f64,
    pub per_class_accuracy: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_hash: Option<String>,
    pub nonstandard_config: bool,
    pub code_version: String,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub report: RunReport,
    /// One JSON line per optimization step: {step, ce, fm, at, kd, total}.
    pub loss_log: Vec<String>,
}

struct LoadedSplit {
    images: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

fn load_split(manifest: &DatasetManifest, split: Split) -> Result<LoadedSplit> {
    let indices = manifest.split_indices(split);
    let mut images = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in &indices {
        images.push(load_image(&manifest.records[i].path)?);
        labels.push(manifest.records[i].label);
    }
    Ok(LoadedSplit { images, labels })
}

fn stack(images: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let shape = images[0].shape().to_vec();
    let mut data = Vec::with_capacity(images.len() * images[0].numel());
    for img in images {
        data.extend_from_slice(img.data());
    }
    let mut full = vec![images.len()];
    full.extend_from_slice(&shape);
    Tensor::from_vec(&full, data)
}

fn one_hot(labels: &[usize], k: usize) -> Tensor<f32> {
    let mut data = vec![0f32; labels.len() * k];
    for (i, &l) in labels.iter().enumerate() {
        data[i * k + l] = 1.0;
    }
    Tensor::from_vec(&[labels.len(), k], data).expect("one-hot shape")
}

/// Core training loop shared by Teacher training and Student distillation.
/// `teacher` is consulted only when an active distillation term needs it.
pub fn run_training(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &DatasetManifest,
    teacher: Option<&Model<f32>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    data.validate()?;
    if data.split_indices(Split::Val).is_empty() {
        return Err(Error::Data("dataset lacks a validation split".into()));
    }
    let k = model_cfg.num_classes;
    if k != data.num_classes() {
        return Err(Error::Config(format!(
            "model has {k} classes, dataset has {}",
            data.num_classes()
        )));
    }
    let distill = cfg.distill.clone().unwrap_or_default();
    let active_distill = !distill.is_plain();
    let teacher = if active_distill {
        let t = teacher.ok_or_else(|| {
            Error::Config("distillation terms require a teacher model".into())
        })?;
        if !t.is_frozen() {
            return Err(Error::Config("teacher model must be frozen".into()));
        }
        if t.config.num_classes != k {
            return Err(Error::Config(format!(
                "teacher has {} classes, student has {k}",
                t.config.num_classes
            )));
        }
        if t.config.input_channels != model_cfg.input_channels {
            return Err(Error::Config("teacher/student input channel mismatch".into()));
        }
        if distill.alpha_fm > 0.0 && t.config.feature_channels() != model_cfg.feature_channels() {
            return Err(Error::Config(format!(
                "feature matching needs equal channel counts (teacher {}, student {})",
                t.config.feature_channels(),
                model_cfg.feature_channels()
            )));
        }
        Some(t)
    } else {
        None
    };
    let teacher_hash_before = teacher.map(|t| t.param_hash());

    let train = load_split(data, Split::Train)?;
    let val = load_split(data, Split::Val)?;
    let test = load_split(data, Split::Test)?;
    if train.images.is_empty() {
        return Err(Error::Data("dataset lacks a train split".into()));
    }

    let mut model = build_model::<f32>(model_cfg, cfg.seed)?;
    let mut adam = Adam::new();
    let steps_per_epoch = train.images.len().div_ceil(cfg.batch_size);
    let epoch_len = steps_per_epoch * cfg.batch_size;

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut loss_log = Vec::new();
    let mut best: Option<(f64, usize, Vec<Vec<f32>>)> = None;
    let mut step_counter = 0usize;

    for epoch in 1..=cfg.epochs {
        let order = balanced_indices(&train.labels, epoch_len, derive_seed(cfg.seed, 1, epoch as u64))?;
        let mut sums = [0f64; 5]; // ce, fm, at, kd, total
        for batch_ids in order.chunks(cfg.batch_size) {
            let mut clean = Vec::with_capacity(batch_ids.len());
            let mut degraded = Vec::with_capacity(batch_ids.len());
            let mut labels = Vec::with_capacity(batch_ids.len());
            for (j, &idx) in batch_ids.iter().enumerate() {
                let sample_index = (step_counter % steps_per_epoch) * cfg.batch_size + j;
                let aug_seed = derive_seed(cfg.seed, 2 + epoch as u64, sample_index as u64);
                let img = augment(&train.images[idx], aug_seed)?;
                degraded.push(degrade(&img, cfg.magnification)?);
                clean.push(img);
                labels.push(train.labels[idx]);
            }
            let student_input = stack(&degraded)?;
            let labels_t = one_hot(&labels, k);

            let g = Graph::new();
            let student = model.forward_with_features(&g, &student_input)?;
            let ce = ce_loss(&g, &student.probs, &labels_t)?;

            let mut terms = LossTerms {
                ce,
                fm: None,
                at: None,
                kd: None,
            };
            if let Some(t) = teacher {
                let teacher_input = stack(&clean)?;
                let t_record = t.forward_with_features(&g, &teacher_input)?;
                if distill.alpha_fm > 0.0 {
                    terms.fm = Some(fm_loss(
                        &g,
                        &t_record.features.detach(),
                        &student.features,
                        distill.alignment,
                    )?);
                }
                if distill.alpha_at > 0.0 {
                    let t_maps = grad_cam(&g, &t_record, distill.attention_mode, false)?;
                    let s_maps = grad_cam(&g, &student, distill.attention_mode, true)?;
                    terms.at = Some(at_plus_loss(&g, &t_maps, &s_maps, distill.alignment)?);
                }
                if distill.alpha_kd > 0.0 {
                    terms.kd = Some(if distill.use_sr {
                        sr_loss(&g, &t_record.features.detach(), &student.features, t)?
                    } else {
                        kd_loss(&g, &t_record.probs.detach(), &student.probs)?
                    });
                }
            }
            let total = total_loss(&g, &terms, &distill)?;

            model.zero_grads();
            g.backward(&total)?;
            adam.step(&mut model.params_mut(), cfg.learning_rate)?;

            step_counter += 1;
            let comp = [
                terms.ce.item() as f64,
                terms.fm.as_ref().map(|t| t.item() as f64).unwrap_or(0.0),
                terms.at.as_ref().map(|t| t.item() as f64).unwrap_or(0.0),
                terms.kd.as_ref().map(|t| t.item() as f64).unwrap_or(0.0),
                total.item() as f64,
            ];
            for (s, c) in sums.iter_mut().zip(comp) {
                *s += c;
            }
            loss_log.push(format!(
                "{{\"step\":{},\"ce\":{},\"fm\":{},\"at\":{},\"kd\":{},\"total\":{}}}",
                step_counter, comp[0], comp[1], comp[2], comp[3], comp[4]
            ));
        }

        let val_metrics = evaluate_images(&model, &val.images, &val.labels, cfg.magnification)?;
        let n = steps_per_epoch as f64;
        epochs.push(EpochStats {
            epoch,
            ce: sums[0] / n,
            fm: sums[1] / n,
            at: sums[2] / n,
            kd: sums[3] / n,
            total: sums[4] / n,
            val_accuracy: val_metrics.accuracy,
            val_kappa: val_metrics.kappa,
        });
        let better = match &best {
            Some((kappa, _, _)) => val_metrics.kappa > *kappa,
            None => true,
        };
        if better {
            best = Some((val_metrics.kappa, epoch, model.snapshot()));
        }
    }

    let (_, selected_epoch, snapshot) = best.expect("at least one epoch");
    model.restore(&snapshot);
    let test_metrics: EvalResult =
        evaluate_images(&model, &test.images, &test.labels, cfg.magnification)?;

    if let (Some(before), Some(t)) = (&teacher_hash_before, teacher) {
        let after = t.param_hash();
        if *before != after {
            return Err(Error::Other(
                "frozen teacher parameters changed during distillation".into(),
            ));
        }
    }

    let report = RunReport {
        seed: cfg.seed,
        model: model_cfg.clone(),
        train: cfg.clone(),
        epochs,
        selected_epoch,
        test_accuracy: test_metrics.accuracy,
        test_kappa: test_metrics.kappa,
        per_class_accuracy: test_metrics.per_class_accuracy,
        teacher_hash: teacher_hash_before,
        nonstandard_config: distill.is_nonstandard(),
        code_version: code_version(),
    };
    Ok(TrainOutcome {
        model,
        report,
        loss_log,
    })
}

/// Teacher training: plain cross-entropy on undegraded inputs.
pub fn train_teacher(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &DatasetManifest,
) -> Result<TrainOutcome> {
    if cfg.distill.is_some() {
        return Err(Error::Config(
            "teacher training takes no distillation config".into(),
        ));
    }
    if cfg.magnification.get() != 1 {
        return Err(Error::Config(
            "teacher training runs at magnification factor 1".into(),
        ));
    }
    run_training(model_cfg, cfg, data, None)
}

/// Student distillation against a frozen Teacher.
pub fn distill_student(
    teacher: &Model<f32>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &DatasetManifest,
) -> Result<TrainOutcome> {
    if cfg.distill.is_none() {
        return Err(Error::Config(
            "distill_student requires a distillation config".into(),
        ));
    }
    run_training(model_cfg, cfg, data, Some(teacher))
}

/// Validation kappa of the selected epoch.
fn selected_val_kappa(report: &RunReport) -> f64 {
    report.epochs[report.selected_epoch - 1].val_kappa
}

pub struct GridSearchOutcome {
    pub best_config: TrainConfig,
    /// (label, alpha, report) for every run, in execution order.
    pub reports: Vec<(String, f64, RunReport)>,
}

/// Sequential per-term sweep: alpha_FM first with alpha_AT fixed at its base
/// value, then alpha_AT with alpha_FM fixed at its winner. Ties in
/// validation kappa go to the smaller alpha.
pub fn grid_search_alpha(
    teacher: &Model<f32>,
    model_cfg: &ModelConfig,
    base_cfg: &TrainConfig,
    alphas: &[f64],
    data: &DatasetManifest,
) -> Result<GridSearchOutcome> {
    if alphas.is_empty() {
        return Err(Error::Config("grid search needs a non-empty alpha set".into()));
    }
    let base_distill = base_cfg
        .distill
        .clone()
        .ok_or_else(|| Error::Config("grid search requires a distillation config".into()))?;
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut reports = Vec::new();
    let mut sweep = |label: &str, make: &dyn Fn(f64) -> DistillConfig| -> Result<f64> {
        let mut best: Option<(f64, f64)> = None; // (kappa, alpha)
        for &alpha in &sorted {
            let mut cfg = base_cfg.clone();
            cfg.distill = Some(make(alpha));
            let outcome = distill_student(teacher, model_cfg, &cfg, data)?;
            let kappa = selected_val_kappa(&outcome.report);
            reports.push((format!("{label}_{alpha}"), alpha, outcome.report));
            if best.map(|(k, _)| kappa > k).unwrap_or(true) {
                best = Some((kappa, alpha));
            }
        }
        Ok(best.unwrap().1)
    };

    let best_fm = sweep("fm", &|alpha| DistillConfig {
        alpha_fm: alpha,
        ..base_distill.clone()
    })?;
    let best_at = sweep("at", &|alpha| DistillConfig {
        alpha_fm: best_fm,
        alpha_at: alpha,
        ..base_distill.clone()
    })?;

    let mut best_config = base_cfg.clone();
    best_config.distill = Some(DistillConfig {
        alpha_fm: best_fm,
        alpha_at: best_at,
        ..base_distill
    });
    Ok(GridSearchOutcome {
        best_config,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub seeds: Vec<u64>,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub test_kappa_mean: f64,
    pub test_kappa_std: f64,
    pub reports: Vec<RunReport>,
}

/// Mean and sample standard deviation over per-seed values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run one experiment per seed and aggregate the test metrics.
pub fn multi_seed<F>(run: F, seeds: &[u64]) -> Result<MultiSeedReport>
where
    F: Fn(u64) -> Result<RunReport>,
{
    if seeds.is_empty() {
        return Err(Error::Config("multi_seed needs at least one seed".into()));
    }
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let report =
            run(seed).map_err(|e| Error::Other(format!("seed {seed} failed: {e}")))?;
        reports.push(report);
    }
    let accs: Vec<f64> = reports.iter().map(|r| r.test_accuracy).collect();
    let kappas: Vec<f64> = reports.iter().map(|r| r.test_kappa).collect();
    let (acc_mean, acc_std) = mean_std(&accs);
    let (kappa_mean, kappa_std) = mean_std(&kappas);
    Ok(MultiSeedReport {
        seeds: seeds.to_vec(),
        test_accuracy_mean: acc_mean,
        test_accuracy_std: acc_std,
        test_kappa_mean: kappa_mean,
        test_kappa_std: kappa_std,
        reports,
    })
}
