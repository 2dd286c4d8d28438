//! Binary checkpoints: `ASV1`, a little-endian u64 header length, a JSON
//! header, then little-endian f32 payloads in manifest order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::ModelVocab;
use super::model::{Model, TargetStats};
use super::VaeError;
use crate::tensor::{Real, Tensor};

const MAGIC: &[u8; 4] = b"ASV1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub config: ModelConfig,
    pub vocabulary: ModelVocab,
    pub manifest: Vec<ManifestEntry>,
    pub target_stats: Vec<TargetStats>,
    pub step: u64,
}

fn bad(msg: impl Into<String>) -> VaeError {
    VaeError::Checkpoint(msg.into())
}

/// Every named tensor of `model`: parameters, renormalization statistics and
/// clamp state.
fn named_tensors<T: Real>(model: &Model<T>) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<(String, Tensor<T>)> = model.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
    for (i, r) in model.renorm.iter().enumerate() {
        out.push((format!("renorm.{i}.running_mean"), Tensor::row(r.running_mean.clone())));
        out.push((format!("renorm.{i}.running_var"), Tensor::row(r.running_var.clone())));
    }
    let f = |v: &[f64]| Tensor::row(v.iter().map(|&x| T::from_f64(x)).collect());
    out.push(("clamp.bounds".into(), f(&model.clamp)));
    out.push(("clamp.max_abs".into(), f(&model.z_max_abs)));
    out
}

pub fn save<T: Real>(model: &Model<T>, mut out: impl Write) -> Result<(), VaeError> {
    let tensors = named_tensors(model);
    let mut offset = 0u64;
    let manifest = tensors
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry { name: name.clone(), shape: t.shape.clone(), offset };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let header = Header {
        config: model.config.clone(),
        vocabulary: model.vocab.clone(),
        manifest,
        target_stats: model.target_stats.clone(),
        step: model.step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for (_, t) in &tensors {
        for x in &t.data {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn load<T: Real>(mut input: impl Read) -> Result<Model<T>, VaeError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;

    let mut model = Model::<T>::new(header.config, header.vocabulary, 0)?;
    if header.target_stats.len() != model.target_stats.len() {
        return Err(bad("target statistics do not match the heads"));
    }
    model.target_stats = header.target_stats;
    model.step = header.step;
    let expected = named_tensors(&model);
    if expected.len() != header.manifest.len() {
        return Err(bad(format!("expected {} tensors, found {}", expected.len(), header.manifest.len())));
    }
    let mut values = Vec::with_capacity(expected.len());
    for ((name, t), entry) in expected.iter().zip(&header.manifest) {
        if *name != entry.name || t.shape != entry.shape {
            return Err(bad(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, name, t.shape)));
        }
        let start = entry.offset as usize;
        let end = start + 4 * t.len();
        let bytes = payload.get(start..end).ok_or_else(|| bad(format!("payload of {name} truncated")))?;
        let data: Vec<T> =
            bytes.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        values.push(Tensor { shape: t.shape.clone(), data });
    }
    let mut values = values.into_iter();
    for t in model.store.tensors_mut() {
        *t = values.next().expect("manifest length checked");
    }
    for r in model.renorm.iter_mut() {
        r.running_mean = values.next().expect("manifest length checked").data;
        r.running_var = values.next().expect("manifest length checked").data;
    }
    model.clamp = values.next().expect("manifest length checked").to_f64();
    model.z_max_abs = values.next().expect("manifest length checked").to_f64();
    Ok(model)
}

pub fn save_file<T: Real>(model: &Model<T>, path: &std::path::Path) -> Result<(), VaeError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_file<T: Real>(path: &std::path::Path) -> Result<Model<T>, VaeError> {
    load(std::io::BufReader::new(std::fs::File::open(path)?))
}
