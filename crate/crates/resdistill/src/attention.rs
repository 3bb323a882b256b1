//! Grad-CAM attention maps.
//!
//! Channel weights are the spatial mean of the gradient of a class logit
//! with respect to the feature map, read out through `grad_query` so the
//! parameter gradient buffers stay untouched. The weights are treated as
//! constants in the loss graph; gradient flows back through the features
//! only.
//!
//! Min–max normalized maps span exactly `[0, 1]` per (sample, class) unless
//! the raw map is spatially constant, in which case they are all-zero:
//!
//! ```
//! use resdistill::attention::{grad_cam, AttentionMode};
//! use resdistill::backbone::{build_model, ModelConfig};
//! use resdistill::tensor::{Graph, Tensor};
//!
//! let config = ModelConfig { input_channels: 1, block_channels: vec![2, 3],
//!                            num_classes: 2, input_size: 8 };
//! let model = build_model::<f32>(&config, 11).unwrap();
//! let input: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin()).collect();
//! let batch = Tensor::from_vec(&[1, 1, 8, 8], input).unwrap();
//! let g = Graph::new();
//! let record = model.forward_with_features(&g, &batch).unwrap();
//! let map = grad_cam(&g, &record, AttentionMode::MinMax, false).unwrap();
//! assert_eq!(map.values.shape(), &[1, 2, 2, 2]); // N×K×h×w
//! let vals = map.values.data();
//! let (min, max) = vals.iter().fold((f32::MAX, f32::MIN),
//!     |(lo, hi), &v| (lo.min(v), hi.max(v)));
//! assert_eq!((min, max), (0.0, 1.0));
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::ForwardRecord;
use crate::error::{Error, Result};
use crate::tensor::{bilinear_kernel, e, Elem, Graph, Tensor};

/// Normalization applied to the gradient-weighted channel sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// No rectification, no normalization.
    Raw,
    /// Per-map min-max only.
    MinMax,
    /// ReLU then per-map min-max; the default.
    ReluMinMax,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttentionMode::Raw => "raw",
            AttentionMode::MinMax => "minmax",
            AttentionMode::ReluMinMax => "relu_minmax",
        };
        f.write_str(s)
    }
}

impl FromStr for AttentionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(AttentionMode::Raw),
            "minmax" => Ok(AttentionMode::MinMax),
            "relu_minmax" => Ok(AttentionMode::ReluMinMax),
            other => Err(Error::Config(format!(
                "unknown attention mode {other:?} (expected raw, minmax, relu_minmax)"
            ))),
        }
    }
}

/// Per-class spatial saliency, one map per (sample, class).
pub struct AttentionMap<E: Elem> {
    /// N×K×h×w map values.
    pub values: Tensor<E>,
    pub mode: AttentionMode,
    /// Detached N×K×C channel weights.
    pub channel_weights: Tensor<E>,
}

/// Grad-CAM over a forward record. With `differentiable` the returned values
/// stay connected to the graph through the features; otherwise the whole map
/// is detached (Teacher side).
pub fn grad_cam<E: Elem>(
    g: &Graph<E>,
    record: &ForwardRecord<E>,
    mode: AttentionMode,
    differentiable: bool,
) -> Result<AttentionMap<E>> {
    let (n, k) = match record.logits.shape() {
        [n, k] => (*n, *k),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "grad_cam logits must be N×K, got {:?}",
                s
            )))
        }
    };
    if k == 0 {
        return Err(Error::Config("grad_cam: zero classes".into()));
    }
    let (c, hw) = match record.features.shape() {
        [nf, c, h, w] if *nf == n => (*c, h * w),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "grad_cam features must be N×C×h×w with matching batch, got {:?}",
                s
            )))
        }
    };
    if !record.features.is_attached() {
        return Err(Error::Detached);
    }

    let mut alpha = vec![E::zero(); n * k * c];
    let inv_hw = e::<E>(1.0 / hw as f64);
    for cls in 0..k {
        // Column selector: d(sum_n z_{n,cls})/df gives per-sample gradients,
        // since sample rows are independent.
        let mut mask = vec![E::zero(); n * k];
        for b in 0..n {
            mask[b * k + cls] = E::one();
        }
        let mask = Tensor::from_vec(&[n, k], mask)?;
        let picked = g.mul(&record.logits, &mask)?;
        let target = g.sum_all(&picked);
        let grad = g.grad_query(&target, &record.features)?;
        for b in 0..n {
            for ch in 0..c {
                let s: E = grad.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                    .iter()
                    .copied()
                    .sum();
                alpha[(b * k + cls) * c + ch] = s * inv_hw;
            }
        }
    }
    let channel_weights = Tensor::from_vec(&[n, k, c], alpha)?;

    let raw = g.cam_weighted_sum(&record.features, &channel_weights)?;
    let values = match mode {
        AttentionMode::Raw => raw,
        AttentionMode::MinMax => g.minmax_normalize_maps(&raw)?,
        AttentionMode::ReluMinMax => {
            let rect = g.relu(&raw);
            g.minmax_normalize_maps(&rect)?
        }
    };
    let values = if differentiable {
        values
    } else {
        values.detach()
    };
    Ok(AttentionMap {
        values,
        mode,
        channel_weights,
    })
}

/// Outcome metadata of a heatmap export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportInfo {
    /// True when negative map values were clamped to zero (RAW mode).
    pub clamped_negative: bool,
}

/// Write one (sample, class) map as an 8-bit grayscale PNG, bilinearly
/// upsampled to `out_size` pixels square.
pub fn export_heatmap<E: Elem>(
    map: &AttentionMap<E>,
    sample: usize,
    class: usize,
    out_size: usize,
    path: &Path,
) -> Result<ExportInfo> {
    let (n, k, h, w) = match map.values.shape() {
        [n, k, h, w] => (*n, *k, *h, *w),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "attention map must be N×K×h×w, got {:?}",
                s
            )))
        }
    };
    if sample >= n || class >= k {
        return Err(Error::Config(format!(
            "heatmap index (sample {sample}, class {class}) out of range {n}x{k}"
        )));
    }
    let plane = &map.values.data()[(sample * k + class) * h * w..(sample * k + class + 1) * h * w];
    let clamped_negative = plane.iter().any(|&v| v < E::zero());
    let up = bilinear_kernel(plane, 1, 1, h, w, out_size, out_size);
    let pixels: Vec<u8> = up
        .iter()
        .map(|&v| {
            let v: f64 = v.to_f64().unwrap_or(0.0).clamp(0.0, 1.0);
            (255.0 * v).round() as u8
        })
        .collect();
    let img = image::GrayImage::from_raw(out_size as u32, out_size as u32, pixels)
        .expect("buffer sized to out_size^2");
    img.save(path)
        .map_err(|e| Error::Other(format!("failed to write heatmap PNG: {e}")))?;
    Ok(ExportInfo { clamped_negative })
}
