//! Configurable VGG-style classifier.
//!
//! Each block is conv3×3 (pad 1) → relu → maxpool2. The classifier head is a
//! global average pool followed by one linear layer, so the spatial feature
//! map ahead of the pool is available for feature matching and Grad-CAM.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{e, read_tensor, write_tensor, Elem, Graph, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ATDM";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Output channels of each conv block.
    pub block_channels: Vec<usize>,
    pub num_classes: usize,
    /// Square input size in pixels.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            block_channels: vec![8, 16],
            num_classes: 4,
            input_size: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_channels.is_empty() || self.block_channels.iter().any(|&c| c == 0) {
            return Err(Error::Config(
                "block_channels must be a non-empty list of positive counts".into(),
            ));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        let div = 1usize << self.block_channels.len();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be divisible by 2^{} = {div}",
                self.input_size,
                self.block_channels.len()
            )));
        }
        Ok(())
    }

    /// Spatial extent of the feature map after all blocks.
    pub fn feature_size(&self) -> usize {
        self.input_size >> self.block_channels.len()
    }

    pub fn feature_channels(&self) -> usize {
        *self.block_channels.last().expect("validated non-empty")
    }

    /// Total trainable scalar count, by the closed-form layer formula.
    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut cin = self.input_channels;
        for &cout in &self.block_channels {
            total += cout * cin * 9 + cout;
            cin = cout;
        }
        total + self.num_classes * cin + self.num_classes
    }
}

/// One forward pass worth of intermediate results: the spatial features ahead
/// of the global average pool, the pre-softmax logits, and the softmax scores.
pub struct ForwardRecord<E: Elem> {
    pub features: Tensor<E>,
    pub logits: Tensor<E>,
    pub probs: Tensor<E>,
}

pub struct Model<E: Elem> {
    pub config: ModelConfig,
    /// (conv weight C'×C×3×3, conv bias C') per block.
    blocks: Vec<(Tensor<E>, Tensor<E>)>,
    head_weight: Tensor<E>,
    head_bias: Tensor<E>,
    frozen: bool,
}

/// Deterministic Kaiming-uniform initialization: conv and linear weights are
/// drawn from U(−b, b) with b = sqrt(6 / fan_in); biases start at zero.
pub fn build_model<E: Elem>(config: &ModelConfig, seed: u64) -> Result<Model<E>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: &[usize], fan_in: usize| -> Tensor<E> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| e::<E>(rng.gen_range(-bound..bound)))
            .collect();
        Tensor::param(shape, data).expect("shape/data agree")
    };
    let mut blocks = Vec::new();
    let mut cin = config.input_channels;
    for &cout in &config.block_channels {
        let weight = draw(&[cout, cin, 3, 3], cin * 9);
        let bias = Tensor::zeros(&[cout]).with_grad();
        blocks.push((weight, bias));
        cin = cout;
    }
    let head_weight = draw(&[config.num_classes, cin], cin);
    let head_bias = Tensor::zeros(&[config.num_classes]).with_grad();
    Ok(Model {
        config: config.clone(),
        blocks,
        head_weight,
        head_bias,
        frozen: false,
    })
}

impl<E: Elem> Model<E> {
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Drop all gradient buffers; parameters become constants.
    pub fn freeze(&mut self) {
        for (w, b) in &mut self.blocks {
            *w = w.detach();
            *b = b.detach();
        }
        self.head_weight = self.head_weight.detach();
        self.head_bias = self.head_bias.detach();
        self.frozen = true;
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = Vec::new();
        for (i, (w, b)) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.weight"), w));
            out.push((format!("block{i}.bias"), b));
        }
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<E>> {
        let mut out: Vec<&mut Tensor<E>> = Vec::new();
        for (w, b) in &mut self.blocks {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over the serialized parameters, in declaration order.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.named_params() {
            hasher.update(name.as_bytes());
            let mut buf = Vec::new();
            write_tensor(&mut buf, t).expect("in-memory write");
            hasher.update(&buf);
        }
        format!("{:x}", hasher.finalize())
    }

    pub fn zero_grads(&self) {
        for (_, t) in self.named_params() {
            t.zero_grad();
        }
    }

    /// Full forward pass exposing the spatial features ahead of the pool.
    pub fn forward_with_features(
        &self,
        g: &Graph<E>,
        batch: &Tensor<E>,
    ) -> Result<ForwardRecord<E>> {
        let s = self.config.input_size;
        match batch.shape() {
            [_, c, h, w] if *c == self.config.input_channels && *h == s && *w == s => {}
            shape => {
                return Err(Error::ShapeMismatch(format!(
                    "batch {:?} does not match model input {}x{}x{}",
                    shape, self.config.input_channels, s, s
                )))
            }
        }
        let mut x = batch.clone();
        for (w, b) in &self.blocks {
            x = g.conv2d(&x, w, Some(b), 1, 1)?;
            x = g.relu(&x);
            x = g.maxpool2(&x)?;
        }
        let features = x;
        self.forward_from_features(g, &features)
    }

    /// Classifier head only: GAP → linear → softmax on a given feature map.
    pub fn forward_from_features(
        &self,
        g: &Graph<E>,
        features: &Tensor<E>,
    ) -> Result<ForwardRecord<E>> {
        let pooled = g.global_avg_pool(features)?;
        let logits = g.linear(&pooled, &self.head_weight, &self.head_bias)?;
        let probs = g.softmax(&logits)?;
        Ok(ForwardRecord {
            features: features.clone(),
            logits,
            probs,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Other(e.to_string()))?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        let params = self.named_params();
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(&mut w, t)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Model<E>> {
        let file = File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated checkpoint header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad checkpoint magic {magic:?}"
            )));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)
            .map_err(|_| Error::Checkpoint("truncated checkpoint header".into()))?;
        if version[0] != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                version[0]
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| Error::Checkpoint("truncated config block".into()))?;
        let mut cfg_buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut cfg_buf)
            .map_err(|_| Error::Checkpoint("truncated config block".into()))?;
        let config: ModelConfig = serde_json::from_slice(&cfg_buf)
            .map_err(|e| Error::Checkpoint(format!("bad config JSON: {e}")))?;
        config.validate()?;
        let mut count = [0u8; 4];
        r.read_exact(&mut count)
            .map_err(|_| Error::Checkpoint("truncated tensor table".into()))?;
        let count = u32::from_le_bytes(count) as usize;

        let mut model = build_model::<E>(&config, 0)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {count} tensors, config implies {}",
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let mut nlen = [0u8; 2];
            r.read_exact(&mut nlen)
                .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
            let mut nbuf = vec![0u8; u16::from_le_bytes(nlen) as usize];
            r.read_exact(&mut nbuf)
                .map_err(|_| Error::Checkpoint("truncated tensor name".into()))?;
            let got = String::from_utf8(nbuf)
                .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
            if &got != name {
                return Err(Error::Checkpoint(format!(
                    "tensor name mismatch: expected {name}, found {got}"
                )));
            }
            let t = read_tensor::<E>(&mut r)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} shape {:?} does not match config shape {:?}",
                    t.shape(),
                    shape
                )));
            }
            model.set_param(name, t)?;
        }
        Ok(model)
    }

    fn set_param(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let value = value.with_grad();
        for (i, (w, b)) in self.blocks.iter_mut().enumerate() {
            if name == format!("block{i}.weight") {
                *w = value;
                return Ok(());
            }
            if name == format!("block{i}.bias") {
                *b = value;
                return Ok(());
            }
        }
        match name {
            "head.weight" => self.head_weight = value,
            "head.bias" => self.head_bias = value,
            _ => return Err(Error::Checkpoint(format!("unknown tensor name {name}"))),
        }
        Ok(())
    }

    /// Snapshot of all parameter payloads, for best-epoch restoration.
    pub fn snapshot(&self) -> Vec<Vec<E>> {
        self.named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<E>]) {
        for (param, saved) in self.params_mut().into_iter().zip(snapshot) {
            param.data_mut().copy_from_slice(saved);
        }
    }
}
