//! Single-file model container: a `key=value` manifest followed by named
//! matrices, each stored as dims plus row-major little-endian f32.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{FusionModel, ModelConfig, Variant};
use crate::encoders::decode_matrix;
use crate::error::{Error, Result};
use crate::nn::Module;

const MAGIC: &[u8; 8] = b"RCKPT\x00\x00\x01";

/// Free-form `key=value` metadata stored with the weights.
pub type Manifest = BTreeMap<String, String>;

fn encode_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    buf.extend_from_slice(b"RMAT");
    buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

/// Writes the model with its variant, configuration and `extra` entries in
/// the manifest. Keys in `extra` must not contain `=` or newlines.
pub fn save_checkpoint(path: &Path, model: &FusionModel, extra: &Manifest) -> Result<()> {
    let mut manifest = model.cfg.to_pairs();
    manifest.insert("variant".into(), model.variant.to_string());
    for (k, v) in extra {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!("manifest entry `{k}` is not a single key=value line")));
        }
        manifest.insert(k.clone(), v.clone());
    }
    let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let mut tensors = Vec::new();
    model.clone().visit_tensors("", &mut |name, m| tensors.push((name.to_string(), m.clone())));

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
    buf.extend_from_slice(text.as_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in &tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_matrix(&mut buf, m);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated file")?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<(Manifest, BTreeMap<String, Array2<f64>>), String> {
    let mut c = Cursor { bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err("not a checkpoint file".into());
    }
    let len = c.u32()?;
    let text = std::str::from_utf8(c.take(len)?).map_err(|e| e.to_string())?;
    let mut manifest = Manifest::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| format!("bad manifest line `{line}`"))?;
        manifest.insert(k.to_string(), v.to_string());
    }
    let n = c.u32()?;
    let mut tensors = BTreeMap::new();
    for _ in 0..n {
        let name_len = c.u32()?;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|e| e.to_string())?.to_string();
        let header = c.take(12)?;
        let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let body = c.take(rows * cols * 4)?;
        let mut block = header.to_vec();
        block.extend_from_slice(body);
        tensors.insert(name, decode_matrix(&block)?);
    }
    if c.at != bytes.len() {
        return Err("trailing bytes after the last tensor".into());
    }
    Ok((manifest, tensors))
}

/// Rebuilds a model from a checkpoint. Every tensor the architecture needs
/// must be present with the right shape.
pub fn load_checkpoint(path: &Path) -> Result<(FusionModel, Manifest)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, mut tensors) = parse(&bytes).map_err(|m| Error::format(path, m))?;
    let variant: Variant = manifest
        .get("variant")
        .ok_or_else(|| Error::format(path, "manifest has no variant"))?
        .parse()?;
    let mut cfg = ModelConfig::default();
    cfg.apply_pairs(&manifest)?;
    let mut model = FusionModel::new(cfg, variant)?;
    let mut problem = None;
    model.visit_tensors("", &mut |name, m| match tensors.remove(name) {
        Some(t) if t.dim() == m.dim() => *m = t,
        Some(t) => problem = problem.take().or(Some(format!("{name}: shape {:?}, expected {:?}", t.dim(), m.dim()))),
        None => problem = problem.take().or(Some(format!("missing tensor {name}"))),
    });
    if let Some(p) = problem {
        return Err(Error::format(path, p));
    }
    if let Some(name) = tensors.keys().next() {
        return Err(Error::format(path, format!("unexpected tensor {name}")));
    }
    Ok((model, manifest))
}
