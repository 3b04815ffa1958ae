//! Checkpoint container: magic `ANCT`, a format version, a JSON header
//! (config, attribute specs, intensity stats, parameter manifest) and the
//! raw little-endian f32 parameter payload in manifest order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::{attribute_specs, AttributeSpec};
use crate::autodiff::Real;
use crate::data::IntensityStats;

use super::config::ModelConfig;
use super::params::ModelParams;
use super::ModelError;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ANCT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    attributes: Vec<AttributeSpec>,
    stats: Option<IntensityStats>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
}

/// Everything needed to reproduce inference: switches, weights and the
/// training split's intensity statistics.
#[derive(Clone, Debug)]
pub struct Checkpoint<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
    pub stats: Option<IntensityStats>,
}

/// Write a checkpoint. Values are stored as f32; an f32 model round-trips
/// bit-exactly.
pub fn save_checkpoint<F: Real>(
    params: &ModelParams<F>,
    config: &ModelConfig,
    stats: Option<&IntensityStats>,
    path: &Path,
) -> Result<(), ModelError> {
    let mut entries = Vec::with_capacity(params.set.len());
    let mut payload: Vec<u8> = Vec::new();
    for p in params.set.iter() {
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len() as u64,
        });
        for v in p.value.data() {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = Header {
        config: config.clone(),
        attributes: attribute_specs(),
        stats: stats.copied(),
        params: entries,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ModelError::Format(format!("header serialization: {e}")))?;

    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(&payload);
    let mut f = fs::File::create(path).map_err(|e| ModelError::Io(e.to_string()))?;
    f.write_all(&bytes).map_err(|e| ModelError::Io(e.to_string()))?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Checkpoint<F>, ModelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 {
        return Err(ModelError::Format("checkpoint shorter than its fixed header".into()));
    }
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Format(format!(
            "bad checkpoint magic {:?}",
            &bytes[0..4]
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(ModelError::Format("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| ModelError::Format(format!("checkpoint header: {e}")))?;
    if header.attributes != attribute_specs() {
        return Err(ModelError::Format(
            "checkpoint attribute table differs from this build".into(),
        ));
    }
    let payload = &bytes[16 + header_len..];

    // rebuild the layout for this config, then fill values by name
    let mut params = ModelParams::<F>::init(&header.config, 0)?;
    if header.params.len() != params.set.len() {
        return Err(ModelError::Format(format!(
            "checkpoint manifest has {} parameters, the architecture needs {}",
            header.params.len(),
            params.set.len()
        )));
    }
    let mut expected_offset = 0u64;
    for entry in &header.params {
        let idx = params.set.index_of(&entry.name).ok_or_else(|| {
            ModelError::Format(format!("unknown parameter {:?} in checkpoint", entry.name))
        })?;
        let param = params.set.get_mut(idx);
        if param.value.shape() != entry.shape.as_slice() {
            return Err(ModelError::Format(format!(
                "parameter {:?} has shape {:?} in the checkpoint, expected {:?}",
                entry.name,
                entry.shape,
                param.value.shape()
            )));
        }
        if entry.offset != expected_offset {
            return Err(ModelError::Format(format!(
                "corrupt manifest: parameter {:?} at offset {}, expected {}",
                entry.name, entry.offset, expected_offset
            )));
        }
        let nbytes = param.value.numel() * 4;
        let start = entry.offset as usize;
        let end = start + nbytes;
        if end > payload.len() {
            return Err(ModelError::Format(format!(
                "truncated payload while reading {:?}",
                entry.name
            )));
        }
        for (dst, chunk) in param
            .value
            .data_mut()
            .iter_mut()
            .zip(payload[start..end].chunks_exact(4))
        {
            *dst = F::of_f64(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        expected_offset += nbytes as u64;
    }
    if expected_offset as usize != payload.len() {
        return Err(ModelError::Format(format!(
            "payload holds {} bytes, manifest accounts for {expected_offset}",
            payload.len()
        )));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        stats: header.stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::model::{ChannelPreset, NoduleModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            preset: ChannelPreset::Tiny,
            ..ModelConfig::default()
        }
    }

    fn volume(seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..2 * 64 * 64).map(|_| rng.gen::<f32>()).collect();
        Tensor::new(vec![2, 64, 64, 1], data).unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = NoduleModel::<f32>::init(tiny(), 42).unwrap();
        let stats = IntensityStats { mean: -700.0, std: 250.0 };
        save_checkpoint(&model.params, &model.config, Some(&stats), &path).unwrap();

        let ckpt = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(ckpt.stats, Some(stats));
        assert_eq!(ckpt.config, model.config);
        let reloaded = NoduleModel { config: ckpt.config, params: ckpt.params };

        let vol = volume(7);
        let a = model.forward(&vol).unwrap();
        let b = reloaded.forward(&vol).unwrap();
        assert_eq!(a.final_predictions, b.final_predictions);
        assert_eq!(a.sam_weights, b.sam_weights);
    }

    #[test]
    fn truncated_file_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = NoduleModel::<f32>::init(tiny(), 1).unwrap();
        save_checkpoint(&model.params, &model.config, None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 100);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&path),
            Err(ModelError::Format(_))
        ));
    }

    #[test]
    fn wrong_magic_and_version_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = NoduleModel::<f32>::init(tiny(), 1).unwrap();
        save_checkpoint(&model.params, &model.config, None, &path).unwrap();

        let good = std::fs::read(&path).unwrap();
        let mut bad = good.clone();
        bad[0..4].copy_from_slice(b"NOPE");
        std::fs::write(&path, &bad).unwrap();
        assert!(load_checkpoint::<f32>(&path).is_err());

        let mut bad = good;
        bad[4..8].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
