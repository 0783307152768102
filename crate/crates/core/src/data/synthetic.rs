use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::{lct1, Tensor};

pub const SYNTHETIC_CLASSES: [&str; 4] = ["q0_top_left", "q1_top_right", "q2_bottom_left", "q3_bottom_right"];

const GROUND: f32 = 0.1;
const BRIGHT: f32 = 0.9;

/// Four-class quadrant dataset: class `k` lights quadrant `k` (row-major
/// quadrant order) at 0.9 over a 0.1 ground, plus `U(-noise, noise)` per
/// value, clamped to `[0, 1]`. Samples are class-major.
pub fn make_synthetic(n_per_class: usize, resolution: (usize, usize), channels: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic n_per_class must be >= 1".into()));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::Config(format!("synthetic noise {noise} must lie in [0, 0.5)")));
    }
    let (h, w) = resolution;
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("synthetic resolution {h}x{w} needs at least 2x2")));
    }
    if channels == 0 {
        return Err(Error::Config("synthetic channels must be >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(4 * n_per_class);
    for (label, name) in SYNTHETIC_CLASSES.iter().enumerate() {
        let (qr, qc) = (label / 2, label % 2);
        for i in 0..n_per_class {
            let mut data = Vec::with_capacity(channels * h * w);
            for _ in 0..channels {
                for y in 0..h {
                    for x in 0..w {
                        let lit = (y >= h / 2) as usize == qr && (x >= w / 2) as usize == qc;
                        let base = if lit { BRIGHT } else { GROUND };
                        let jitter = if noise > 0.0 { rng.gen_range(-noise..noise) as f32 } else { 0.0 };
                        data.push((base + jitter).clamp(0.0, 1.0));
                    }
                }
            }
            samples.push(Sample {
                image: Tensor::from_vec(vec![channels, h, w], data)?,
                label,
                source_id: format!("{name}/sample_{i:04}.lct1"),
            });
        }
    }
    Dataset::new(
        samples,
        SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        channels,
        resolution,
    )
}

/// Writes `out/<class>/<file>.lct1` using each sample's `source_id` as the
/// relative path.
pub fn write_lct1_dataset(ds: &Dataset, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    for name in ds.class_names() {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in ds.samples() {
        lct1::write(out.join(&s.source_id), &s.image)?;
    }
    Ok(())
}
