//! Nodule volumes and their on-disk format.
//!
//! A volume file is laid out as: magic `NVL1`, three little-endian u32
//! (slice count, 64, 64), then `M*64*64` little-endian f32 intensities in
//! Hounsfield units, slice-major then row-major.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::autodiff::Tensor;

use super::DataError;

pub const VOLUME_MAGIC: &[u8; 4] = b"NVL1";
pub const LATERAL: usize = 64;

/// One nodule's intensity stack, `[M, 64, 64]` in HU.
#[derive(Clone, Debug, PartialEq)]
pub struct NoduleVolume {
    pub id: String,
    pub slices: Tensor<f32>,
}

impl NoduleVolume {
    pub fn new(id: impl Into<String>, slices: Tensor<f32>) -> Result<Self, DataError> {
        let shape = slices.shape();
        if shape.len() != 3 || shape[1] != LATERAL || shape[2] != LATERAL {
            return Err(DataError::Validation(format!(
                "volume must be [M,{LATERAL},{LATERAL}], got {:?}",
                shape
            )));
        }
        Ok(Self {
            id: id.into(),
            slices,
        })
    }

    pub fn depth(&self) -> usize {
        self.slices.shape()[0]
    }

    /// Reshape to the `[M,64,64,1]` layout the model consumes.
    pub fn as_model_input(&self) -> Tensor<f32> {
        self.slices
            .reshaped(&[self.depth(), LATERAL, LATERAL, 1])
            .expect("adding a unit axis preserves the element count")
    }
}

pub fn save_volume(volume: &NoduleVolume, path: &Path) -> Result<(), DataError> {
    let m = volume.depth();
    let mut bytes = Vec::with_capacity(16 + volume.slices.numel() * 4);
    bytes.extend_from_slice(VOLUME_MAGIC);
    bytes.extend_from_slice(&(m as u32).to_le_bytes());
    bytes.extend_from_slice(&(LATERAL as u32).to_le_bytes());
    bytes.extend_from_slice(&(LATERAL as u32).to_le_bytes());
    for v in volume.slices.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<NoduleVolume, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_volume(&bytes, &name).map_err(|e| match e {
        DataError::Format(msg) => DataError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_volume(bytes: &[u8], id: &str) -> Result<NoduleVolume, DataError> {
    if bytes.len() < 16 {
        return Err(DataError::Format("file shorter than the 16-byte header".into()));
    }
    if &bytes[0..4] != VOLUME_MAGIC {
        return Err(DataError::Format(format!(
            "bad magic {:?}, expected {:?}",
            &bytes[0..4],
            VOLUME_MAGIC
        )));
    }
    let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if h != LATERAL || w != LATERAL {
        return Err(DataError::Format(format!(
            "lateral size {h}x{w}, expected {LATERAL}x{LATERAL}"
        )));
    }
    if m == 0 {
        return Err(DataError::Format("slice count is zero".into()));
    }
    let expected = m * h * w;
    let payload = &bytes[16..];
    if payload.len() != expected * 4 {
        return Err(DataError::Format(format!(
            "header claims {m} slices ({} payload bytes) but file holds {}",
            expected * 4,
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    NoduleVolume::new(id, Tensor::new(vec![m, h, w], data).expect("sizes checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(m: usize, seed: u64) -> NoduleVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * LATERAL * LATERAL)
            .map(|_| rng.gen::<f32>() * 1500.0 - 1000.0)
            .collect();
        NoduleVolume::new(
            format!("vol{seed}"),
            Tensor::new(vec![m, LATERAL, LATERAL], data).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vol7.nvl");
        let vol = random_volume(3, 7);
        save_volume(&vol, &path).unwrap();
        let back = load_volume(&path).unwrap();
        assert_eq!(back.slices, vol.slices);
        assert_eq!(back.id, "vol7");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nvl");
        let vol = random_volume(5, 1);
        save_volume(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // drop one slice worth of floats: header says 5, payload holds 4
        bytes.truncate(16 + 4 * LATERAL * LATERAL * 4);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_volume(&path).unwrap_err();
        assert!(matches!(err, DataError::Format(_)), "{err}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nvl");
        let vol = random_volume(1, 2);
        save_volume(&vol, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_volume(&path), Err(DataError::Format(_))));
    }

    #[test]
    fn non_square_volume_is_rejected() {
        let t = Tensor::new(vec![2, 32, 64], vec![0.0; 2 * 32 * 64]).unwrap();
        assert!(NoduleVolume::new("x", t).is_err());
    }
}
