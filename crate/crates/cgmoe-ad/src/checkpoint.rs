//! Binary model checkpoints.
//!
//! Layout: an 8-byte magic, a u32 format version, a u64 digest of the model
//! configuration, then named parameter records — name, shape, raw 32-bit
//! little-endian values. The same container serves as the import hook for
//! externally produced weights (imports skip the digest check but still
//! require matching names and shapes).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelBundle, ModelConfig};
use crate::rng::fnv1a;
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"CGMOEAD\0";
const VERSION: u32 = 1;

/// Digest of the model topology; stored in every checkpoint header.
pub fn config_digest(cfg: &ModelConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("model config serializes");
    fnv1a(json.as_bytes())
}

pub fn save<E: Scalar>(path: &Path, model: &ModelBundle<E>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    let mut records: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.visit_params(&mut |name, shape, values, _| {
        records.push((
            name.to_string(),
            shape.to_vec(),
            values.iter().map(|v| v.to_f64() as f32).collect(),
        ));
    });

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&config_digest(&model.cfg).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(&(records.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for (name, shape, values) in &records {
        w.write_all(&(name.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(name.as_bytes()).map_err(io_err)?;
        w.write_all(&(shape.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
        }
        for v in values {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

struct RawCheckpoint {
    digest: u64,
    records: HashMap<String, (Vec<usize>, Vec<f32>)>,
}

fn read_raw(path: &Path) -> Result<RawCheckpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b).map_err(io_err)?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    r.read_exact(&mut u64b).map_err(io_err)?;
    let digest = u64::from_le_bytes(u64b);
    r.read_exact(&mut u32b).map_err(io_err)?;
    let count = u32::from_le_bytes(u32b) as usize;

    let mut records = HashMap::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32b).map_err(io_err)?;
        let name_len = u32::from_le_bytes(u32b) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("checkpoint record name is not UTF-8".into()))?;
        r.read_exact(&mut u32b).map_err(io_err)?;
        let ndim = u32::from_le_bytes(u32b) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut u64b).map_err(io_err)?;
            shape.push(u64::from_le_bytes(u64b) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut f32b = [0u8; 4];
        for _ in 0..numel {
            r.read_exact(&mut f32b).map_err(io_err)?;
            values.push(f32::from_le_bytes(f32b));
        }
        records.insert(name, (shape, values));
    }
    Ok(RawCheckpoint { digest, records })
}

fn apply<E: Scalar>(model: &mut ModelBundle<E>, raw: &RawCheckpoint, path: &Path) -> Result<()> {
    let mut problem: Option<String> = None;
    let mut applied = 0usize;
    model.visit_params_mut(&mut |name, shape, values, _| {
        if problem.is_some() {
            return;
        }
        if let Some((rec_shape, rec_values)) = raw.records.get(name) {
            if rec_shape != shape {
                problem = Some(format!(
                    "parameter {name}: checkpoint shape {rec_shape:?} does not match model shape {shape:?}"
                ));
                return;
            }
            for (dst, &src) in values.iter_mut().zip(rec_values) {
                *dst = E::from_f64(f64::from(src));
            }
            applied += 1;
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Config(msg));
    }
    if applied == 0 {
        return Err(Error::Format(format!(
            "{}: no parameter record matches this model",
            path.display()
        )));
    }
    Ok(())
}

/// Builds a model from `cfg` and restores all parameters from the checkpoint.
/// The stored digest must match the digest of `cfg` (a zero digest, as
/// produced by external exporters, skips the check).
pub fn load<E: Scalar>(path: &Path, cfg: &ModelConfig) -> Result<ModelBundle<E>> {
    let raw = read_raw(path)?;
    let expected = config_digest(cfg);
    if raw.digest != 0 && raw.digest != expected {
        return Err(Error::Config(format!(
            "checkpoint {} was produced under a different model configuration \
             (digest {:#x}, expected {:#x})",
            path.display(),
            raw.digest,
            expected
        )));
    }
    let mut model = ModelBundle::new(cfg.clone())?;
    apply(&mut model, &raw, path)?;
    Ok(model)
}

/// Weight-import hook: overwrites matching parameters in an existing model,
/// ignoring the digest. Shapes must agree; records without a matching
/// parameter name are ignored, so partial blobs (an encoder-only export, for
/// example) import cleanly.
pub fn import<E: Scalar>(path: &Path, model: &mut ModelBundle<E>) -> Result<()> {
    let raw = read_raw(path)?;
    apply(model, &raw, path)
}

/// Expert count recorded in a checkpoint, recovered from the gating matrix
/// record. Used by provenance checks without constructing a model.
pub fn recorded_expert_count(path: &Path) -> Result<usize> {
    let raw = read_raw(path)?;
    raw.records
        .get("gating.w_g")
        .map(|(shape, _)| shape[0])
        .ok_or_else(|| Error::Format("checkpoint has no gating record".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn digest_is_stable_and_config_sensitive() {
        let a = ModelConfig::default();
        let mut b = ModelConfig::default();
        assert_eq!(config_digest(&a), config_digest(&b));
        b.experts = 3;
        assert_ne!(config_digest(&a), config_digest(&b));
    }

    #[test]
    fn rejects_non_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(read_raw(&path), Err(Error::Format(_))));
    }
}
