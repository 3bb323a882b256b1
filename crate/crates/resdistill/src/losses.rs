//! Training criteria: cross-entropy, softmax distillation, feature matching,
//! attention matching, the softmax-regression baseline, and their weighted
//! combination.
//!
//! All losses are scalars built from tape ops, so gradients come out of the
//! same backward pass as everything else. Teacher-side inputs must arrive
//! detached; passing a graph-connected teacher tensor is an error.
//!
//! With every distillation weight at zero, [`total_loss`] returns the
//! cross-entropy tensor itself — the same tape node, not a copy:
//!
//! ```
//! use resdistill::losses::{ce_loss, total_loss, DistillConfig, LossTerms};
//! use resdistill::tensor::{Graph, Tensor};
//!
//! let g: Graph<f32> = Graph::new();
//! let probs = Tensor::from_vec(&[1, 2], vec![0.25, 0.75]).unwrap();
//! let labels = Tensor::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
//! let ce = ce_loss(&g, &probs, &labels).unwrap();
//! let terms = LossTerms { ce: ce.clone(), fm: None, at: None, kd: None };
//! let total = total_loss(&g, &terms, &DistillConfig::default()).unwrap();
//! assert_eq!(total.data(), ce.data());
//! assert_eq!(total.data()[0], -(0.75f32.ln()) / 2.0); // 1/(N·K) convention
//! ```

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionMap, AttentionMode};
use crate::backbone::Model;
use crate::error::{Error, Result};
use crate::tensor::{Elem, Graph, Tensor};

/// How Teacher and Student spatial grids are brought to a common size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Low-resolution inputs are degraded and restored to the original pixel
    /// size, so the grids already agree; a mismatch is an error.
    DegradeRestore,
    /// Bilinearly upsample the student grid to the teacher grid.
    FeatureInterp,
}

/// Loss-term toggles and weights for a distillation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub alpha_fm: f64,
    pub alpha_at: f64,
    /// Weight of the softmax-distillation slot; also weights the SR baseline
    /// term when `use_sr` is set. Zero disables.
    pub alpha_kd: f64,
    pub use_sr: bool,
    pub attention_mode: AttentionMode,
    pub alignment: Alignment,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha_fm: 0.0,
            alpha_at: 0.0,
            alpha_kd: 0.0,
            use_sr: false,
            attention_mode: AttentionMode::ReluMinMax,
            alignment: Alignment::DegradeRestore,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("alpha_fm", self.alpha_fm),
            ("alpha_at", self.alpha_at),
            ("alpha_kd", self.alpha_kd),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// True when no distillation term is active and the criterion degenerates
    /// to plain cross-entropy.
    pub fn is_plain(&self) -> bool {
        self.alpha_fm == 0.0 && self.alpha_at == 0.0 && self.alpha_kd == 0.0 && !self.use_sr
    }

    /// SR combined with attention matching falls outside the standard
    /// baseline presets; allowed, but flagged in run metadata.
    pub fn is_nonstandard(&self) -> bool {
        self.use_sr && self.alpha_at > 0.0
    }
}

fn one_hot_check<E: Elem>(labels: &Tensor<E>) -> Result<()> {
    let k = match labels.shape() {
        [_, k] => *k,
        s => {
            return Err(Error::ShapeMismatch(format!(
                "labels must be N×K one-hot, got {:?}",
                s
            )))
        }
    };
    for row in labels.data().chunks_exact(k) {
        let mut ones = 0;
        for &v in row {
            if v == E::one() {
                ones += 1;
            } else if v != E::zero() {
                return Err(Error::Config(
                    "labels must be one-hot (entries 0 or 1)".into(),
                ));
            }
        }
        if ones != 1 {
            return Err(Error::Config(
                "labels must be one-hot (exactly one 1 per row)".into(),
            ));
        }
    }
    Ok(())
}

/// Cross-entropy with the 1/K convention:
/// mean over the batch of −(1/K)·Σ_k y_k·log(ŷ_k), log clamped at 1e-12.
pub fn ce_loss<E: Elem>(g: &Graph<E>, probs: &Tensor<E>, labels: &Tensor<E>) -> Result<Tensor<E>> {
    if probs.shape() != labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ce_loss: probs {:?} vs labels {:?}",
            probs.shape(),
            labels.shape()
        )));
    }
    one_hot_check(labels)?;
    let logp = g.log_clamped(probs);
    let picked = g.mul(&logp, labels)?;
    let total = g.sum_all(&picked);
    Ok(g.scale(&total, -1.0 / probs.numel() as f64))
}

/// Softmax distillation: mean over the batch of −(1/K)·Σ_k ŷ^t_k·log(ŷ^s_k).
/// No temperature. The teacher side must be detached.
pub fn kd_loss<E: Elem>(
    g: &Graph<E>,
    teacher_probs: &Tensor<E>,
    student_probs: &Tensor<E>,
) -> Result<Tensor<E>> {
    if teacher_probs.is_attached() || teacher_probs.requires_grad() {
        return Err(Error::Config(
            "kd_loss: teacher probabilities must be detached from the graph".into(),
        ));
    }
    if teacher_probs.shape() != student_probs.shape() {
        return Err(Error::ShapeMismatch(format!(
            "kd_loss: teacher {:?} vs student {:?}",
            teacher_probs.shape(),
            student_probs.shape()
        )));
    }
    let logp = g.log_clamped(student_probs);
    let picked = g.mul(&logp, teacher_probs)?;
    let total = g.sum_all(&picked);
    Ok(g.scale(&total, -1.0 / student_probs.numel() as f64))
}

fn align_spatial<E: Elem>(
    g: &Graph<E>,
    what: &str,
    teacher: &Tensor<E>,
    student: &Tensor<E>,
    alignment: Alignment,
) -> Result<Tensor<E>> {
    let (th, tw) = match teacher.shape() {
        [.., h, w] => (*h, *w),
        _ => return Err(Error::ShapeMismatch(format!("{what}: teacher rank"))),
    };
    let (sh, sw) = match student.shape() {
        [.., h, w] => (*h, *w),
        _ => return Err(Error::ShapeMismatch(format!("{what}: student rank"))),
    };
    if (sh, sw) == (th, tw) {
        return Ok(student.clone());
    }
    match alignment {
        Alignment::DegradeRestore => Err(Error::ShapeMismatch(format!(
            "{what}: spatial grids {sh}x{sw} vs {th}x{tw} must already agree under degrade_restore"
        ))),
        Alignment::FeatureInterp => g.bilinear_resize(student, th, tw),
    }
}

/// Feature matching: mean over batch and positions of the squared channel
/// distance, (1/|Ω|)·Σ_i ||f^t_i − f^s_i||².
pub fn fm_loss<E: Elem>(
    g: &Graph<E>,
    teacher_features: &Tensor<E>,
    student_features: &Tensor<E>,
    alignment: Alignment,
) -> Result<Tensor<E>> {
    if teacher_features.is_attached() || teacher_features.requires_grad() {
        return Err(Error::Config(
            "fm_loss: teacher features must be detached from the graph".into(),
        ));
    }
    let (n, c) = match teacher_features.shape() {
        [n, c, _, _] => (*n, *c),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "fm_loss: teacher features must be N×C×h×w, got {:?}",
                s
            )))
        }
    };
    match student_features.shape() {
        [ns, cs, _, _] if *ns == n && *cs == c => {}
        s => {
            return Err(Error::ShapeMismatch(format!(
                "fm_loss: student features {:?} disagree with teacher channels {c}",
                s
            )))
        }
    }
    let student = align_spatial(g, "fm_loss", teacher_features, student_features, alignment)?;
    let diff = g.sub(teacher_features, &student)?;
    let sq = g.mul(&diff, &diff)?;
    let total = g.sum_all(&sq);
    let spatial: usize = teacher_features.numel() / (n * c);
    Ok(g.scale(&total, 1.0 / (n * spatial) as f64))
}

/// Attention matching: (1/K)·Σ_k (1/|Ω|)·Σ_i (a^t − a^s)², batch mean.
pub fn at_plus_loss<E: Elem>(
    g: &Graph<E>,
    teacher_maps: &AttentionMap<E>,
    student_maps: &AttentionMap<E>,
    alignment: Alignment,
) -> Result<Tensor<E>> {
    if teacher_maps.mode != student_maps.mode {
        return Err(Error::Config(format!(
            "at_plus_loss: attention mode mismatch ({} vs {})",
            teacher_maps.mode, student_maps.mode
        )));
    }
    if teacher_maps.values.is_attached() || teacher_maps.values.requires_grad() {
        return Err(Error::Config(
            "at_plus_loss: teacher maps must be detached from the graph".into(),
        ));
    }
    let (n, k) = match teacher_maps.values.shape() {
        [n, k, _, _] => (*n, *k),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "at_plus_loss: maps must be N×K×h×w, got {:?}",
                s
            )))
        }
    };
    match student_maps.values.shape() {
        [ns, ks, _, _] if *ns == n && *ks == k => {}
        s => {
            return Err(Error::ShapeMismatch(format!(
                "at_plus_loss: student maps {:?} disagree with teacher N={n}, K={k}",
                s
            )))
        }
    }
    let student = align_spatial(
        g,
        "at_plus_loss",
        &teacher_maps.values,
        &student_maps.values,
        alignment,
    )?;
    let diff = g.sub(&teacher_maps.values, &student)?;
    let sq = g.mul(&diff, &diff)?;
    let total = g.sum_all(&sq);
    let spatial: usize = teacher_maps.values.numel() / (n * k);
    Ok(g.scale(&total, 1.0 / (n * k * spatial) as f64))
}

/// Softmax-regression baseline: pass both feature maps through the frozen
/// Teacher head and cross-entropy the student distribution against the
/// detached teacher one, with the same 1/K convention as `kd_loss`.
pub fn sr_loss<E: Elem>(
    g: &Graph<E>,
    teacher_features: &Tensor<E>,
    student_features: &Tensor<E>,
    teacher: &Model<E>,
) -> Result<Tensor<E>> {
    if !teacher.is_frozen() {
        return Err(Error::Config("sr_loss: teacher model must be frozen".into()));
    }
    let target = teacher
        .forward_from_features(g, &teacher_features.detach())?
        .probs
        .detach();
    let student = teacher.forward_from_features(g, student_features)?;
    kd_loss(g, &target, &student.probs)
}

/// Component scalars entering the combined criterion. Disabled terms are
/// simply absent.
pub struct LossTerms<E: Elem> {
    pub ce: Tensor<E>,
    pub fm: Option<Tensor<E>>,
    pub at: Option<Tensor<E>>,
    pub kd: Option<Tensor<E>>,
}

/// Weighted combination: ce + α_FM·fm + α_AT⁺·at + α_KD·kd. With every
/// weight at zero the result is the `ce` tensor itself, bit for bit.
pub fn total_loss<E: Elem>(
    g: &Graph<E>,
    terms: &LossTerms<E>,
    config: &DistillConfig,
) -> Result<Tensor<E>> {
    config.validate()?;
    let mut total = terms.ce.clone();
    for (weight, term) in [
        (config.alpha_fm, &terms.fm),
        (config.alpha_at, &terms.at),
        (config.alpha_kd, &terms.kd),
    ] {
        if weight > 0.0 {
            let term = term.as_ref().ok_or_else(|| {
                Error::Config("total_loss: weighted term missing its scalar".into())
            })?;
            total = g.add(&total, &g.scale(term, weight))?;
        }
    }
    Ok(total)
}
