//! Checkpoints: `manifest.json` listing each tensor's name, shape and blob
//! file, plus one little-endian f32 blob per tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub dtype: String,
    pub tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

fn blob_name(idx: usize, name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{idx:04}_{clean}.bin")
}

pub fn save<T: Scalar>(store: &ParamStore<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    for (idx, (name, value)) in store.named_values().into_iter().enumerate() {
        let file = blob_name(idx, name);
        let bytes: Vec<u8> = value
            .data()
            .iter()
            .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
            .collect();
        fs::write(dir.join(&file), bytes)?;
        tensors.push(Entry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
            file,
        });
    }
    let manifest = Manifest {
        format: "agsp-checkpoint/1".into(),
        dtype: "f32".into(),
        tensors,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Load values into an already-constructed store with matching names/shapes.
pub fn load<T: Scalar>(store: &mut ParamStore<T>, dir: &Path) -> Result<()> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.dtype != "f32" {
        return Err(TensorError::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let expected = store.named_values().len();
    if manifest.tensors.len() != expected {
        return Err(TensorError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {expected}",
            manifest.tensors.len()
        )));
    }
    for e in &manifest.tensors {
        let bytes = fs::read(dir.join(&e.file))?;
        let len: usize = e.shape.iter().product();
        if bytes.len() != 4 * len {
            return Err(TensorError::Checkpoint(format!("blob {} has {} bytes, expected {}", e.file, bytes.len(), 4 * len)));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.set_named(&e.name, Tensor::new(&e.shape, data)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let mut s: ParamStore<f32> = ParamStore::new();
        s.add("conv.w", Tensor::new(&[2, 1, 1, 1], vec![0.5, -1.25]).unwrap());
        s.add_buffer("bn.mean", Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save(&s, dir.path()).unwrap();

        let mut t: ParamStore<f32> = ParamStore::new();
        t.add("conv.w", Tensor::zeros(&[2, 1, 1, 1]));
        t.add_buffer("bn.mean", Tensor::zeros(&[2]));
        load(&mut t, dir.path()).unwrap();
        assert_eq!(t.params()[0].value, s.params()[0].value);
        assert_eq!(t.buffers()[0].value, s.buffers()[0].value);

        let blob = std::fs::read(dir.path().join("0000_conv_w.bin")).unwrap();
        assert_eq!(&blob[..4], &0.5f32.to_le_bytes());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s: ParamStore<f32> = ParamStore::new();
        s.add("w", Tensor::zeros(&[3]));
        let dir = tempfile::tempdir().unwrap();
        save(&s, dir.path()).unwrap();
        let mut t: ParamStore<f32> = ParamStore::new();
        t.add("w", Tensor::zeros(&[4]));
        assert!(load(&mut t, dir.path()).is_err());
    }
}
