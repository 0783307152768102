//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LCDL" | u32 version = 1 | u32 config_len | config_len bytes UTF-8 key=value text
//! u32 param_count | per param: u32 name_len | name | u8 rank | rank × u32 dims | f32 values
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, SequentialModel};
use crate::error::{Error, Result};
use crate::tensor::lct1::Reader;
use crate::tensor::{Real, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCDL";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(model: &SequentialModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = model.config().to_text();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let params = model.named_params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.dims().len() as u8);
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint; nothing is returned unless every byte checks out.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<SequentialModel<T>> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected LCDL"));
    }
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(at, format!("unsupported checkpoint version {version}")));
    }
    let config_len = r.u32("config length")? as usize;
    let at = r.offset();
    let text = std::str::from_utf8(r.take(config_len, "config text")?)
        .map_err(|e| Error::format(at, format!("config text is not UTF-8: {e}")))?;
    let config = ModelConfig::from_text(text).map_err(|e| Error::format(at, e.to_string()))?;
    let mut model = SequentialModel::<T>::new(config, 0).map_err(|e| Error::format(at, e.to_string()))?;

    let expected: Vec<(String, Vec<usize>)> = model
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.dims().to_vec()))
        .collect();
    let at = r.offset();
    let count = r.u32("parameter count")? as usize;
    if count != expected.len() {
        return Err(Error::format(
            at,
            format!("{count} parameters, architecture defines {}", expected.len()),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for (want_name, want_dims) in &expected {
        let name_len = r.u32("parameter name length")? as usize;
        let at = r.offset();
        let name = r.take(name_len, "parameter name")?;
        if name != want_name.as_bytes() {
            return Err(Error::format(
                at,
                format!("parameter {:?}, expected {want_name:?}", String::from_utf8_lossy(name)),
            ));
        }
        let at = r.offset();
        let shape = r.shape(want_name)?;
        if shape.dims() != want_dims.as_slice() {
            return Err(Error::format(
                at,
                format!("{want_name} has shape {shape}, architecture needs {want_dims:?}"),
            ));
        }
        let at = r.offset();
        let data = r.f32s(shape.numel(), want_name)?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                at + 4 * i,
                format!("{want_name}[{i}] is {}, parameters must be finite", data[i]),
            ));
        }
        values.push(Tensor::from_parts(shape, data).cast::<T>());
    }
    r.finish()?;
    for (dst, src) in model.params_mut().into_iter().zip(values) {
        *dst = src;
    }
    Ok(model)
}

pub fn save_checkpoint<T: Real>(model: &SequentialModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<SequentialModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads parameters into an existing model whose architecture must match
/// the checkpoint's exactly.
pub fn load_into<T: Real>(model: &mut SequentialModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let loaded = load_checkpoint::<T>(path)?;
    if loaded.config() != model.config() {
        return Err(Error::Config(format!(
            "checkpoint architecture differs from target model:\n--- checkpoint\n{}--- model\n{}",
            loaded.config().to_text(),
            model.config().to_text()
        )));
    }
    for (dst, (_, src)) in model.params_mut().into_iter().zip(loaded.named_params()) {
        *dst = src.clone();
    }
    Ok(())
}
