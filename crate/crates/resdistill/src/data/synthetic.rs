//! Synthetic desk-scale dataset: band-limited oriented gratings whose
//! dominant spatial frequency grows with the class index, plus additive
//! Gaussian noise. Degrading with larger factors removes exactly the
//! frequencies that separate the upper classes.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, ImageRecord, Split};
use crate::error::{Error, Result};

const NOISE_SIGMA: f64 = 0.05;

/// Dominant frequency (cycles per image) of each class: a warped geometric
/// ladder from 1.5 cycles per image up to a bit below the original Nyquist
/// rate. The interpolation parameter is raised to the power 1.5 so the lower
/// classes stay coarse — their gratings survive even deep degradation, only
/// losing contrast — while the upper classes crowd toward the Nyquist rate
/// and are the first to alias away as the degradation factor grows.
pub fn class_frequencies(classes: usize, size: usize) -> Vec<f64> {
    let lo = 1.5;
    let hi = 0.33 * size as f64;
    (0..classes)
        .map(|j| {
            if classes == 1 {
                lo
            } else {
                let t = j as f64 / (classes - 1) as f64;
                lo * (hi / lo).powf(t.powf(1.5))
            }
        })
        .collect()
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// One grating sample with random orientation and phase.
fn render(size: usize, freq: f64, rng: &mut impl Rng) -> Vec<f64> {
    let theta: f64 = rng.gen_range(0.0..PI);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let (sin_t, cos_t) = theta.sin_cos();
    let omega = 2.0 * PI * freq / size as f64;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let proj = x as f64 * cos_t + y as f64 * sin_t;
            let v = 0.5 + 0.35 * (omega * proj + phase).sin() + NOISE_SIGMA * gaussian(rng);
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

/// Generate `num_per_class` grayscale PNGs per class under `out_dir`, write
/// `manifest.csv` next to them, and return the parsed manifest. The split is
/// 70/15/15 per class; every image gets its own synthetic group id.
pub fn generate_synthetic(
    num_per_class: usize,
    classes: usize,
    size: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if size < 32 {
        return Err(Error::Config(format!("size must be >= 32, got {size}")));
    }
    if !(2..=8).contains(&classes) {
        return Err(Error::Config(format!(
            "classes must be in [2, 8], got {classes}"
        )));
    }
    if num_per_class < 7 {
        return Err(Error::Config(
            "need at least 7 samples per class for a 70/15/15 split".into(),
        ));
    }
    fs::create_dir_all(out_dir)?;
    let freqs = class_frequencies(classes, size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut csv_rows = String::from("image,label,split,group\n");
    let n_train = (num_per_class * 70) / 100;
    let n_val = (num_per_class * 15) / 100;
    for cls in 0..classes {
        for i in 0..num_per_class {
            let pixels = render(size, freqs[cls], &mut rng);
            let bytes: Vec<u8> = pixels
                .iter()
                .map(|&v| (v * 255.0).round() as u8)
                .collect();
            let name = format!("c{cls}_{i:04}.png");
            let path = out_dir.join(&name);
            let img = image::GrayImage::from_raw(size as u32, size as u32, bytes)
                .expect("buffer sized to size^2");
            img.save(&path)
                .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let group = format!("synth_c{cls}_{i:04}");
            csv_rows.push_str(&format!("{name},{cls},{split},{group}\n"));
            records.push(ImageRecord {
                path,
                label: cls,
                split,
                group_id: group,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    let mut f = fs::File::create(&manifest_path)?;
    f.write_all(csv_rows.as_bytes())?;
    let manifest = DatasetManifest {
        records,
        class_names: (0..classes).map(|c| format!("class_{c}")).collect(),
        base_size: size,
    };
    manifest.validate()?;
    Ok(manifest)
}
