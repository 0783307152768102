use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::{lct1, Tensor};

const PRE_SPLIT_DIRS: [&str; 3] = ["train", "valid", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageOptions {
    /// `(H, W)` after resizing.
    pub resolution: (usize, usize),
    /// 3 (RGB) or 1 (luma).
    pub channels: usize,
}

impl Default for ImageOptions {
    fn default() -> Self {
        ImageOptions {
            resolution: (64, 64),
            channels: 3,
        }
    }
}

impl ImageOptions {
    fn validate(&self) -> Result<()> {
        if self.resolution.0 == 0 || self.resolution.1 == 0 {
            return Err(Error::Config(format!("resolution {:?} must be positive", self.resolution)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }
}

/// A dataset root as found on disk.
#[derive(Debug, Clone)]
pub enum DatasetLayout {
    /// `root/<class>/<image>`
    Flat(Dataset),
    /// `root/{train,valid,test}/<class>/<image>`
    PreSplit { train: Dataset, val: Dataset, test: Dataset },
}

/// Loads either layout. The pre-split form is recognised by the presence of
/// all three of `train/`, `valid/` and `test/`.
pub fn load_dataset(root: impl AsRef<Path>, opts: ImageOptions) -> Result<DatasetLayout> {
    let root = root.as_ref();
    if PRE_SPLIT_DIRS.iter().all(|d| root.join(d).is_dir()) {
        let train = load_image_dataset(root.join("train"), opts)?;
        let val = load_image_dataset(root.join("valid"), opts)?;
        let test = load_image_dataset(root.join("test"), opts)?;
        for (name, ds) in [("valid", &val), ("test", &test)] {
            if ds.class_names() != train.class_names() {
                return Err(Error::Data(format!(
                    "{}: classes {:?} differ from train classes {:?}",
                    root.join(name).display(),
                    ds.class_names(),
                    train.class_names()
                )));
            }
        }
        Ok(DatasetLayout::PreSplit { train, val, test })
    } else {
        load_image_dataset(root, opts).map(DatasetLayout::Flat)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

/// Directory-per-class ingestion. Class names are the sorted subdirectory
/// names; samples are ordered by (class, filename). Plain files directly
/// under `root` and dotfiles are ignored; anything else that fails to decode
/// aborts the load.
pub fn load_image_dataset(root: impl AsRef<Path>, opts: ImageOptions) -> Result<Dataset> {
    opts.validate()?;
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("{}: not a directory", root.display())));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("{}: no class subdirectories", root.display())));
    }

    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut jobs = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("{}: class name is not UTF-8", dir.display())))?
            .to_string();
        let files = sorted_entries(dir)?;
        if files.is_empty() {
            return Err(Error::Data(format!("{}: empty class directory", dir.display())));
        }
        for file in files {
            let file_name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            jobs.push((label, format!("{name}/{file_name}"), file));
        }
        class_names.push(name);
    }

    let samples = jobs
        .into_par_iter()
        .map(|(label, source_id, path)| {
            let image = decode_image_file(&path, opts)?;
            Ok(Sample { image, label, source_id })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, class_names, opts.channels, opts.resolution)
}

/// Decodes one PNG, JPEG or `.lct1` file into `[C, H, W]` in `[0, 1]` at
/// the requested resolution.
pub fn decode_image_file(path: &Path, opts: ImageOptions) -> Result<Tensor<f32>> {
    opts.validate()?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (c, h, w, pixels) = match ext.as_str() {
        "lct1" => decode_lct1(path, opts.channels)?,
        "png" | "jpg" | "jpeg" => decode_raster(path, opts.channels)?,
        _ => {
            return Err(Error::Data(format!(
                "{}: unsupported file type (expected png, jpg, jpeg or lct1)",
                path.display()
            )))
        }
    };
    let (oh, ow) = opts.resolution;
    let data = bilinear_resize(&pixels, c, h, w, oh, ow);
    Tensor::from_vec(vec![c, oh, ow], data)
}

fn decode_raster(path: &Path, channels: usize) -> Result<(usize, usize, usize, Vec<f32>)> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: cannot decode image: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let interleaved: Vec<u8> = if channels == 3 {
        img.into_rgb8().into_raw()
    } else {
        img.into_luma8().into_raw()
    };
    let plane = h * w;
    let mut chw = vec![0f32; channels * plane];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            chw[ch * plane + i] = v as f32 / 255.0;
        }
    }
    Ok((channels, h, w, chw))
}

fn decode_lct1(path: &Path, channels: usize) -> Result<(usize, usize, usize, Vec<f32>)> {
    let t = lct1::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (c, h, w) = match *t.dims() {
        [c, h, w] => (c, h, w),
        [h, w] => (1, h, w),
        _ => {
            return Err(Error::Data(format!(
                "{}: expected a [C, H, W] or [H, W] tensor, got {}",
                path.display(),
                t.shape()
            )))
        }
    };
    if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!(
            "{}: pixel value {v} outside [0, 1]",
            path.display()
        )));
    }
    let data = t.into_data();
    match (c, channels) {
        (a, b) if a == b => Ok((c, h, w, data)),
        (1, 3) => Ok((3, h, w, data.repeat(3))),
        _ => Err(Error::Data(format!(
            "{}: has {c} channels, cannot convert to {channels}",
            path.display()
        ))),
    }
}

/// Source coordinate and blend weights for each output index, using
/// half-pixel centres clamped to the border.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize of a `[C, H, W]` buffer to `[C, OH, OW]`.
pub fn bilinear_resize(src: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    assert_eq!(src.len(), c * h * w, "source buffer does not match [C, H, W]");
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let xs = axis_taps(w, ow);
    let ys = axis_taps(h, oh);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut rows = vec![0f64; h * ow];
    for plane in src.chunks_exact(h * w) {
        for (r, row) in plane.chunks_exact(w).enumerate() {
            for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
                rows[r * ow + j] = lerp(row[x0] as f64, row[x1] as f64, fx);
            }
        }
        for &(y0, y1, fy) in &ys {
            for j in 0..ow {
                let v = lerp(rows[y0 * ow + j], rows[y1 * ow + j], fy);
                out.push(v as f32);
            }
        }
    }
    out
}
