//! Inter-resolution knowledge distillation with Grad-CAM attention transfer.
//!
//! A Teacher classifier trained on full-resolution images transfers its
//! softmax scores, spatial features, and class-activation attention into a
//! Student that sees degraded low-resolution inputs. Everything is built
//! from first principles on a small reverse-mode tensor engine: the
//! backbone, the Grad-CAM maps, the distillation losses, the resolution
//! pipeline, the metrics, and a reproducible experiment harness.
//!
//! The companion guide under `book/` walks through each piece; the snippets
//! there mirror the doc-tests in this crate.
//!
//! # Quick tour
//!
//! Scalar autodiff through the tape:
//!
//! ```
//! use resdistill::tensor::{Graph, Tensor};
//!
//! let g: Graph<f64> = Graph::new();
//! let x = Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap().with_grad();
//! let sq = g.mul(&x, &x).unwrap();
//! let loss = g.sum_all(&sq);
//! g.backward(&loss).unwrap();
//! assert_eq!(x.grad().unwrap(), vec![2.0, -4.0]); // d(sum x^2)/dx = 2x
//! ```
//!
//! A forward pass that exposes the pre-pool features, as the feature and
//! attention losses require:
//!
//! ```
//! use resdistill::backbone::{build_model, ModelConfig};
//! use resdistill::tensor::{Graph, Tensor};
//!
//! let config = ModelConfig { input_channels: 3, block_channels: vec![4, 8],
//!                            num_classes: 4, input_size: 16 };
//! let model = build_model::<f32>(&config, 7).unwrap();
//! let batch = Tensor::zeros(&[2, 3, 16, 16]);
//! let g = Graph::new();
//! let record = model.forward_with_features(&g, &batch).unwrap();
//! assert_eq!(record.features.shape(), &[2, 8, 4, 4]);
//! assert_eq!(record.probs.shape(), &[2, 4]);
//! ```

pub mod attention;
pub mod backbone;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
