//! Checkpointing: a JSON manifest (names, shapes, offsets, string
//! metadata) next to a flat little-endian f64 blob. Save then load is
//! bit-exact.

use super::params::ParamSet;
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Offset into the blob, counted in f64 elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: BTreeMap<String, String>,
    entries: Vec<ManifestEntry>,
}

fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut json = prefix.as_os_str().to_owned();
    json.push(".json");
    let mut bin = prefix.as_os_str().to_owned();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

pub fn save_checkpoint(
    prefix: &Path,
    params: &ParamSet,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let (json_path, bin_path) = paths(prefix);
    let mut entries = Vec::with_capacity(params.len());
    let mut blob: Vec<u8> = Vec::with_capacity(params.n_values() * 8);
    let mut offset = 0usize;
    for (name, tensor) in params.iter() {
        entries.push(ManifestEntry {
            name: name.to_string(),
            rows: tensor.nrows(),
            cols: tensor.ncols(),
            offset,
        });
        for &v in tensor.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += tensor.len();
    }
    let manifest = Manifest {
        meta: meta.clone(),
        entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    std::fs::write(&json_path, text)?;
    std::fs::write(&bin_path, blob)?;
    Ok(())
}

pub fn load_checkpoint(prefix: &Path) -> Result<(ParamSet, BTreeMap<String, String>)> {
    let (json_path, bin_path) = paths(prefix);
    let text = std::fs::read_to_string(&json_path).map_err(|e| {
        Error::Checkpoint(format!("cannot read manifest {}: {e}", json_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("bad manifest {}: {e}", json_path.display())))?;
    let blob = std::fs::read(&bin_path)
        .map_err(|e| Error::Checkpoint(format!("cannot read blob {}: {e}", bin_path.display())))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "blob {} length {} is not a multiple of 8",
            bin_path.display(),
            blob.len()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut params = ParamSet::new();
    for e in &manifest.entries {
        let n = e.rows * e.cols;
        let end = e.offset.checked_add(n).filter(|&end| end <= values.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!(
                "entry {} spans {}..{} but blob holds {} values",
                e.name,
                e.offset,
                e.offset + n,
                values.len()
            ))
        })?;
        let tensor = Array2::from_shape_vec((e.rows, e.cols), values[e.offset..end].to_vec())
            .map_err(|err| Error::Checkpoint(format!("entry {}: {err}", e.name)))?;
        params.insert(&e.name, tensor);
    }
    Ok((params, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ParamSet::new();
        params.init_uniform("enc.w", 7, 9, &mut rng);
        params.init_uniform("dec.w", 3, 3, &mut rng);
        params.insert(
            "odd",
            ndarray::arr2(&[[0.1 + 0.2, -0.0, f64::MIN_POSITIVE, 1e300]]),
        );
        let mut meta = BTreeMap::new();
        meta.insert("d_model".to_string(), "64".to_string());
        meta.insert("avg_ref_len".to_string(), "17.25".to_string());

        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("model");
        save_checkpoint(&prefix, &params, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&prefix).unwrap();
        assert_eq!(loaded_meta, meta);
        assert_eq!(loaded.len(), params.len());
        for (name, tensor) in params.iter() {
            let other = loaded.get(name).unwrap();
            assert_eq!(tensor.dim(), other.dim());
            for (a, b) in tensor.iter().zip(other.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "param {name}");
            }
        }
    }

    #[test]
    fn save_twice_produces_identical_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut params = ParamSet::new();
        params.init_uniform("w", 5, 5, &mut rng);
        let meta = BTreeMap::new();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a");
        let p2 = dir.path().join("b");
        save_checkpoint(&p1, &params, &meta).unwrap();
        save_checkpoint(&p2, &params, &meta).unwrap();
        let read = |p: &Path, ext: &str| {
            let mut s = p.as_os_str().to_owned();
            s.push(ext);
            std::fs::read(PathBuf::from(s)).unwrap()
        };
        assert_eq!(read(&p1, ".bin"), read(&p2, ".bin"));
        assert_eq!(read(&p1, ".json"), read(&p2, ".json"));
    }

    #[test]
    fn missing_and_corrupt_files_error() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("nope");
        assert!(load_checkpoint(&prefix).is_err());

        let prefix = dir.path().join("bad");
        std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
        std::fs::write(dir.path().join("bad.bin"), [0u8; 8]).unwrap();
        let err = load_checkpoint(&prefix).unwrap_err().to_string();
        assert!(err.contains("bad manifest"), "{err}");
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut params = ParamSet::new();
        params.insert("w", Array2::zeros((2, 2)));
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("model");
        save_checkpoint(&prefix, &params, &BTreeMap::new()).unwrap();
        std::fs::write(dir.path().join("model.bin"), [0u8; 16]).unwrap();
        let err = load_checkpoint(&prefix).unwrap_err().to_string();
        assert!(err.contains("spans"), "{err}");
    }
}
