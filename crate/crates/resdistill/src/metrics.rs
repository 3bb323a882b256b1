//! Accuracy and Cohen's quadratically weighted kappa.
//!
//! Quadratic weighting punishes far-off ordinal confusions harder than
//! adjacent ones, which is why two prediction vectors with the same accuracy
//! can have very different kappa:
//!
//! ```
//! use resdistill::metrics::{accuracy, quadratic_kappa};
//!
//! let reference = vec![0, 1, 2, 3, 0, 1, 2, 3];
//! let adjacent = vec![1, 1, 2, 3, 0, 2, 2, 3]; // two off-by-one errors
//! let extreme  = vec![3, 1, 2, 3, 0, 1, 2, 0]; // two maximal-distance errors
//! assert_eq!(accuracy(&adjacent, &reference).unwrap(),
//!            accuracy(&extreme, &reference).unwrap());
//! assert!(quadratic_kappa(&adjacent, &reference, 4).unwrap()
//!       > quadratic_kappa(&extreme, &reference, 4).unwrap());
//! ```

use crate::error::{Error, Result};

/// K×K counts, rows = reference, columns = predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(pred: &[usize], reference: &[usize], k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {k}")));
        }
        if pred.len() != reference.len() {
            return Err(Error::Data(format!(
                "prediction length {} vs reference length {}",
                pred.len(),
                reference.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::Data("empty label sequence".into()));
        }
        let mut counts = vec![0u64; k * k];
        for (&p, &r) in pred.iter().zip(reference) {
            if p >= k || r >= k {
                return Err(Error::Data(format!(
                    "label out of range: pred {p}, ref {r}, K={k}"
                )));
            }
            counts[r * k + p] += 1;
        }
        Ok(Self {
            k,
            counts,
            total: pred.len() as u64,
        })
    }
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[usize], reference: &[usize]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Data(format!(
            "prediction length {} vs reference length {}",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("accuracy over empty input".into()));
    }
    let hits = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Cohen's kappa with quadratic weights w_ij = (i−j)²/(K−1)².
///
/// κ = 1 − Σ w·O / Σ w·E, with O the observed confusion proportions and E
/// the outer product of the marginals. A zero expected-disagreement
/// denominator returns 1.0 when the observed disagreement is also zero,
/// otherwise 0.0.
pub fn quadratic_kappa(pred: &[usize], reference: &[usize], k: usize) -> Result<f64> {
    let cm = ConfusionMatrix::from_labels(pred, reference, k)?;
    let n = cm.total as f64;
    let mut row_marginals = vec![0.0; k];
    let mut col_marginals = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            let o = cm.counts[i * k + j] as f64 / n;
            row_marginals[i] += o;
            col_marginals[j] += o;
        }
    }
    let denom_w = ((k - 1) * (k - 1)) as f64;
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) * (i as f64 - j as f64)) / denom_w;
            observed += w * cm.counts[i * k + j] as f64 / n;
            expected += w * row_marginals[i] * col_marginals[j];
        }
    }
    if expected == 0.0 {
        return Ok(if observed == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - observed / expected)
}

/// Per-class accuracy (recall): fraction of each reference class predicted
/// correctly. Classes absent from the reference report NaN.
pub fn per_class_accuracy(pred: &[usize], reference: &[usize], k: usize) -> Result<Vec<f64>> {
    let cm = ConfusionMatrix::from_labels(pred, reference, k)?;
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let row: u64 = cm.counts[i * k..(i + 1) * k].iter().sum();
        if row == 0 {
            out.push(f64::NAN);
        } else {
            out.push(cm.counts[i * k + i] as f64 / row as f64);
        }
    }
    Ok(out)
}

use crate::backbone::Model;
use crate::data::{degrade, load_image, DatasetManifest, MagnificationFactor, Split};
use crate::tensor::{Graph, Tensor};

/// Metrics of one split evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub kappa: f64,
    pub per_class_accuracy: Vec<f64>,
}

/// Argmax predictions for pre-loaded images, degraded per magnification.
/// No augmentation; deterministic.
pub fn predict(
    model: &Model<f32>,
    images: &[Tensor<f32>],
    magnification: MagnificationFactor,
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let mut batch = Vec::new();
        let (c, s) = (chunk[0].shape()[0], chunk[0].shape()[1]);
        for img in chunk {
            let degraded = degrade(img, magnification)?;
            batch.extend_from_slice(degraded.data());
        }
        let batch = Tensor::from_vec(&[chunk.len(), c, s, s], batch)?;
        let g = Graph::new();
        let record = model.forward_with_features(&g, &batch)?;
        let k = model.config.num_classes;
        for row in record.logits.data().chunks_exact(k) {
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            preds.push(argmax);
        }
    }
    Ok(preds)
}

/// Evaluate a model on one manifest split at a given magnification.
pub fn evaluate_split(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    split: Split,
    magnification: MagnificationFactor,
) -> Result<EvalResult> {
    let indices = manifest.split_indices(split);
    if indices.is_empty() {
        return Err(Error::Data(format!("split {split} is empty")));
    }
    let mut images = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in &indices {
        images.push(load_image(&manifest.records[i].path)?);
        labels.push(manifest.records[i].label);
    }
    evaluate_images(model, &images, &labels, magnification)
}

/// Evaluate on pre-loaded (image, label) pairs.
pub fn evaluate_images(
    model: &Model<f32>,
    images: &[Tensor<f32>],
    labels: &[usize],
    magnification: MagnificationFactor,
) -> Result<EvalResult> {
    let preds = predict(model, images, magnification, 64)?;
    let k = model.config.num_classes;
    Ok(EvalResult {
        accuracy: accuracy(&preds, labels)?,
        kappa: quadratic_kappa(&preds, labels, k)?,
        per_class_accuracy: per_class_accuracy(&preds, labels, k)?,
    })
}
