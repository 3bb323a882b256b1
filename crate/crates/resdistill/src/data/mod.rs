//! Dataset ingestion, the multi-magnification degradation pipeline,
//! class-balanced sampling, and the synthetic texture dataset.
//!
//! Degradation bilinearly downsamples by the magnification factor and then
//! upsamples back, so the output keeps the input's pixel size but loses the
//! fine detail. Factor 1 is the identity, and a constant image survives any
//! factor unchanged:
//!
//! ```
//! use resdistill::data::{degrade, MagnificationFactor};
//! use resdistill::tensor::Tensor;
//!
//! let flat = Tensor::from_vec(&[1, 8, 8], vec![0.5f32; 64]).unwrap();
//! let f8: MagnificationFactor = "8".parse().unwrap();
//! assert_eq!(degrade(&flat, f8).unwrap().data(), flat.data());
//! let f1: MagnificationFactor = "1".parse().unwrap();
//! let ramp = Tensor::from_vec(&[1, 8, 8],
//!     (0..64).map(|i| i as f32).collect()).unwrap();
//! assert_eq!(degrade(&ramp, f1).unwrap().data(), ramp.data());
//! ```

mod augment;
mod synthetic;

pub use augment::augment;
pub use synthetic::generate_synthetic;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_kernel, Tensor};

/// Power-of-two degradation level standing in for the magnification ladder
/// 10×, 5×, 2.5×, 1.25×.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct MagnificationFactor(u32);

impl MagnificationFactor {
    pub fn new(factor: u32) -> Result<Self> {
        match factor {
            1 | 2 | 4 | 8 => Ok(Self(factor)),
            other => Err(Error::Config(format!(
                "magnification factor must be one of 1, 2, 4, 8; got {other}"
            ))),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn halvings(self) -> u32 {
        self.0.trailing_zeros()
    }

    pub const ALL: [MagnificationFactor; 4] = [
        MagnificationFactor(1),
        MagnificationFactor(2),
        MagnificationFactor(4),
        MagnificationFactor(8),
    ];
}

impl TryFrom<u32> for MagnificationFactor {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<MagnificationFactor> for u32 {
    fn from(f: MagnificationFactor) -> u32 {
        f.0
    }
}

impl fmt::Display for MagnificationFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for MagnificationFactor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let v: u32 = s
            .parse()
            .map_err(|_| Error::Config(format!("bad magnification factor {s:?}")))?;
        Self::new(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!(
                "unknown split {other:?} (expected train, val, test)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
    pub group_id: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub class_names: Vec<String>,
    /// Square image size in pixels.
    pub base_size: usize,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Labels dense in [0, K) and no group shared between splits.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_classes();
        let mut seen = vec![false; k];
        for r in &self.records {
            if r.label >= k {
                return Err(Error::Data(format!(
                    "label {} out of range for {k} classes ({})",
                    r.label,
                    r.path.display()
                )));
            }
            seen[r.label] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(Error::Data(format!(
                "labels are not dense: class {missing} has no samples"
            )));
        }
        let mut groups: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            match groups.entry(r.group_id.as_str()) {
                std::collections::hash_map::Entry::Occupied(e) if *e.get() != r.split => {
                    return Err(Error::Data(format!(
                        "group {:?} appears in both {} and {} splits",
                        r.group_id,
                        e.get(),
                        r.split
                    )));
                }
                std::collections::hash_map::Entry::Occupied(_) => {}
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(r.split);
                }
            }
        }
        Ok(())
    }
}

/// Read a manifest CSV (header `image,label,split,group`, paths relative to
/// the CSV's directory) and validate it. The base size comes from the first
/// image's dimensions.
pub fn load_manifest(csv_path: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("manifest header: {e}")))?
        .clone();
    let expected = ["image", "label", "split", "group"];
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::Data(format!(
            "manifest header {got:?} does not match {expected:?}"
        )));
    }
    let root = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    let mut max_label = 0usize;
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("manifest row {}: {e}", i + 2)))?;
        let path = root.join(&row[0]);
        if !path.exists() {
            return Err(Error::Data(format!(
                "missing image file {}",
                path.display()
            )));
        }
        let label: usize = row[1]
            .parse()
            .map_err(|_| Error::Data(format!("bad label {:?} in row {}", &row[1], i + 2)))?;
        max_label = max_label.max(label);
        records.push(ImageRecord {
            path,
            label,
            split: row[2].parse()?,
            group_id: row[3].to_string(),
        });
    }
    if records.is_empty() {
        return Err(Error::Data("manifest holds no records".into()));
    }
    let first = load_image(&records[0].path)?;
    let base_size = first.shape()[1];
    let manifest = DatasetManifest {
        records,
        class_names: (0..=max_label).map(|c| format!("class_{c}")).collect(),
        base_size,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Load an 8-bit PNG/JPEG as a 3×S×S tensor in [0, 1]. Grayscale images are
/// replicated across the three channels.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot load image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    if w != h {
        return Err(Error::Data(format!(
            "image {} is {}x{}, expected square patches",
            path.display(),
            w,
            h
        )));
    }
    let s = w as usize;
    let mut data = vec![0f32; 3 * s * s];
    for (x, y, pixel) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * s * s + y as usize * s + x as usize] = pixel[ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, s, s], data)
}

/// Degrade-and-restore: sequential bilinear halving `log2(factor)` times,
/// then one bilinear upsample back to the original size. Factor 1 is the
/// identity, bit for bit.
pub fn degrade(image: &Tensor<f32>, factor: MagnificationFactor) -> Result<Tensor<f32>> {
    let (c, s) = match image.shape() {
        [c, h, w] if h == w => (*c, *h),
        shape => {
            return Err(Error::ShapeMismatch(format!(
                "degrade expects a square C×S×S image, got {:?}",
                shape
            )))
        }
    };
    if factor.get() == 1 {
        return Ok(image.clone());
    }
    if s % factor.get() as usize != 0 {
        return Err(Error::Config(format!(
            "image size {s} not divisible by magnification factor {factor}"
        )));
    }
    let mut data = image.data().to_vec();
    let mut cur = s;
    for _ in 0..factor.halvings() {
        data = bilinear_kernel(&data, 1, c, cur, cur, cur / 2, cur / 2);
        cur /= 2;
    }
    let restored = bilinear_kernel(&data, 1, c, cur, cur, s, s);
    Tensor::from_vec(&[c, s, s], restored)
}

/// Class-balanced sampling with replacement: each draw picks a class
/// uniformly, then a sample uniformly within it.
pub fn balanced_indices(labels: &[usize], epoch_len: usize, seed: u64) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::Data("balanced_indices over empty labels".into()));
    }
    let k = labels.iter().max().unwrap() + 1;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        per_class[l].push(i);
    }
    if let Some(empty) = per_class.iter().position(|v| v.is_empty()) {
        return Err(Error::Data(format!(
            "class {empty} has no training samples"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(epoch_len);
    for _ in 0..epoch_len {
        let cls = rng.gen_range(0..k);
        let within = rng.gen_range(0..per_class[cls].len());
        out.push(per_class[cls][within]);
    }
    Ok(out)
}
