//! Training-time augmentation: rotation, brightness/contrast jitter, and a
//! random affine (translate + scale). Each transform fires independently
//! with probability 0.5; all randomness comes from the provided seed, so the
//! same (image, seed) pair always produces the same output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reflect an out-of-range coordinate back into [0, size).
fn reflect(v: f32, size: usize) -> f32 {
    let max = (size - 1) as f32;
    let mut v = v;
    // At most a couple of bounces for the offsets in play.
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > max {
            v = 2.0 * max - v;
        } else {
            return v;
        }
    }
}

/// Bilinear sample with reflect padding from a single channel plane.
fn sample_plane(plane: &[f32], size: usize, y: f32, x: f32) -> f32 {
    let y = reflect(y, size);
    let x = reflect(x, size);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(size - 1);
    let x1 = (x0 + 1).min(size - 1);
    let fy = y - y0 as f32;
    let fx = x - x0 as f32;
    plane[y0 * size + x0] * (1.0 - fy) * (1.0 - fx)
        + plane[y0 * size + x1] * (1.0 - fy) * fx
        + plane[y1 * size + x0] * fy * (1.0 - fx)
        + plane[y1 * size + x1] * fy * fx
}

/// Inverse-map warp: output pixel (y, x) samples the input at the mapped
/// source coordinate.
fn warp(
    image: &[f32],
    c: usize,
    size: usize,
    map: impl Fn(f32, f32) -> (f32, f32),
) -> Vec<f32> {
    let mut out = vec![0f32; c * size * size];
    for ch in 0..c {
        let plane = &image[ch * size * size..(ch + 1) * size * size];
        let dst = &mut out[ch * size * size..(ch + 1) * size * size];
        for y in 0..size {
            for x in 0..size {
                let (sy, sx) = map(y as f32, x as f32);
                dst[y * size + x] = sample_plane(plane, size, sy, sx);
            }
        }
    }
    out
}

/// Apply the augmentation stack. Values are clamped to [0, 1] at the end.
/// When every coin flip lands on "skip", the input is returned bit-identical.
pub fn augment(image: &Tensor<f32>, seed: u64) -> Result<Tensor<f32>> {
    let (c, s) = match image.shape() {
        [c, h, w] if h == w && (*c == 1 || *c == 3) => (*c, *h),
        shape => {
            return Err(Error::ShapeMismatch(format!(
                "augment expects C×S×S with C in {{1,3}}, got {:?}",
                shape
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draw every parameter unconditionally so the stream layout is fixed.
    let do_rotate = rng.gen_bool(0.5);
    let angle_deg: f32 = rng.gen_range(-45.0..45.0);
    let do_jitter = rng.gen_bool(0.5);
    let brightness: f32 = rng.gen_range(0.9..1.1);
    let contrast: f32 = rng.gen_range(0.9..1.1);
    let do_affine = rng.gen_bool(0.5);
    let tx: f32 = rng.gen_range(-0.1..0.1) * s as f32;
    let ty: f32 = rng.gen_range(-0.1..0.1) * s as f32;
    let scale: f32 = rng.gen_range(0.9..1.1);

    if !do_rotate && !do_jitter && !do_affine {
        return Ok(image.clone());
    }

    let mut data = image.data().to_vec();
    let center = (s as f32 - 1.0) / 2.0;

    if do_rotate {
        let theta = angle_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        data = warp(&data, c, s, |y, x| {
            let dy = y - center;
            let dx = x - center;
            (center + dy * cos - dx * sin, center + dy * sin + dx * cos)
        });
    }
    if do_jitter {
        for v in &mut data {
            *v = ((*v - 0.5) * contrast + 0.5) * brightness;
        }
    }
    if do_affine {
        let inv = 1.0 / scale;
        data = warp(&data, c, s, |y, x| {
            (
                center + (y - center - ty) * inv,
                center + (x - center - tx) * inv,
            )
        });
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::from_vec(image.shape(), data)
}
