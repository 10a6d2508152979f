//! Single-file weight checkpoints: a JSON manifest (tensor names, shapes,
//! byte offsets, frozen flags, plus free-form model metadata) followed by the
//! concatenated TSR1 tensor blobs.
//!
//! Layout: magic `"CKP1"` | u64 LE manifest byte length | manifest JSON |
//! blob section. Offsets in the manifest are relative to the blob section
//! start. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{read_tensor, write_tensor, Tensor};

const MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of this tensor's TSR1 blob, relative to the blob section.
    pub offset: u64,
    pub byte_len: u64,
    /// Whether the parameter was held fixed by the run that produced it.
    pub frozen: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    /// Model-specific metadata (configs, task, seeds).
    pub meta: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
}

/// One named tensor headed for a checkpoint.
pub struct CheckpointTensor<'a> {
    pub name: &'a str,
    pub tensor: &'a Tensor,
    pub frozen: bool,
}

pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, tensors: &[CheckpointTensor]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut entries = Vec::with_capacity(tensors.len());
    let mut blobs: Vec<u8> = Vec::new();
    for t in tensors {
        let offset = blobs.len() as u64;
        write_tensor(&mut blobs, t.tensor)?;
        entries.push(ManifestEntry {
            name: t.name.to_string(),
            shape: t.tensor.shape().to_vec(),
            offset,
            byte_len: blobs.len() as u64 - offset,
            frozen: t.frozen,
        });
    }
    let manifest = Manifest { meta: meta.clone(), entries };
    let json = serde_json::to_vec(&manifest)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&blobs)?;
    w.flush()?;
    Ok(())
}

/// Reads just the manifest of a checkpoint.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let mut r = BufReader::new(File::open(path)?);
    read_manifest_from(&mut r)
}

fn read_manifest_from<R: Read>(r: &mut R) -> Result<Manifest> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("bad checkpoint magic {magic:?}, expected CKP1")));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    Ok(serde_json::from_slice(&json)?)
}

/// Loads the manifest and every tensor.
pub fn load_checkpoint(path: &Path) -> Result<(Manifest, Vec<(String, Tensor, bool)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let manifest = read_manifest_from(&mut r)?;
    let blob_start = r.stream_position()?;
    let mut tensors = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        r.seek(SeekFrom::Start(blob_start + e.offset))?;
        let t = read_tensor(&mut r)
            .map_err(|err| Error::Data(format!("checkpoint tensor {}: {err}", e.name)))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Data(format!(
                "checkpoint tensor {} has shape {:?}, manifest says {:?}",
                e.name,
                t.shape(),
                e.shape
            )));
        }
        tensors.push((e.name.clone(), t, e.frozen));
    }
    Ok((manifest, tensors))
}

/// Saves a whole parameter store with a uniform frozen flag.
pub fn save_store(path: &Path, meta: &serde_json::Value, store: &ParamStore, frozen: bool) -> Result<()> {
    let tensors: Vec<CheckpointTensor> = store
        .iter()
        .map(|(name, tensor)| CheckpointTensor { name, tensor, frozen })
        .collect();
    save_checkpoint(path, meta, &tensors)
}

/// Overwrites matching entries of `store` with tensors loaded from a
/// checkpoint; every loaded name must exist with the same shape, and every
/// store entry must be covered.
pub fn restore_store(store: &mut ParamStore, tensors: &[(String, Tensor, bool)]) -> Result<()> {
    let mut covered = 0usize;
    for (name, tensor, _) in tensors {
        let dst = store
            .get_mut(name)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor {name} has no matching parameter")))?;
        if dst.shape() != tensor.shape() {
            return Err(Error::Data(format!(
                "checkpoint tensor {name} has shape {:?}, parameter wants {:?}",
                tensor.shape(),
                dst.shape()
            )));
        }
        dst.data_mut().copy_from_slice(tensor.data());
        covered += 1;
    }
    if covered != store.len() {
        return Err(Error::Data(format!(
            "checkpoint restored {covered} of {} parameters",
            store.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmpfile(tag: &str) -> PathBuf {
        std::env::temp_dir().join(format!("gf-ckpt-{tag}-{}.ckpt", std::process::id()))
    }

    #[test]
    fn roundtrip_is_bitwise_and_labels_frozen() {
        let path = tmpfile("rt");
        let a = Tensor::new(vec![1.0, -2.5, 3.25], &[3]).unwrap();
        let b = Tensor::new(vec![0.5; 6], &[2, 3]).unwrap();
        let meta = serde_json::json!({"model": "test", "seed": 7});
        save_checkpoint(
            &path,
            &meta,
            &[
                CheckpointTensor { name: "enc.w", tensor: &a, frozen: true },
                CheckpointTensor { name: "head.w", tensor: &b, frozen: false },
            ],
        )
        .unwrap();
        let (manifest, tensors) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest.meta["model"], "test");
        assert_eq!(manifest.entries[0].frozen, true);
        assert_eq!(manifest.entries[1].frozen, false);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&tensors[0].1), bits(&a));
        assert_eq!(bits(&tensors[1].1), bits(&b));

        // Saving the loaded tensors again reproduces the file byte for byte.
        let path2 = tmpfile("rt2");
        save_checkpoint(
            &path2,
            &manifest.meta,
            &[
                CheckpointTensor { name: "enc.w", tensor: &tensors[0].1, frozen: true },
                CheckpointTensor { name: "head.w", tensor: &tensors[1].1, frozen: false },
            ],
        )
        .unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_file(&path).unwrap();
        std::fs::remove_file(&path2).unwrap();
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmpfile("magic");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Data(_))));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn restore_checks_names_and_coverage() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::param(vec![0.0; 4], &[2, 2]).unwrap()).unwrap();
        store.insert("b", Tensor::param(vec![0.0; 2], &[2]).unwrap()).unwrap();
        let w = Tensor::new(vec![1.0; 4], &[2, 2]).unwrap();
        let err = restore_store(&mut store, &[("w".into(), w.clone(), false)]).unwrap_err();
        assert!(err.to_string().contains("1 of 2"));
        let bogus = Tensor::new(vec![1.0; 2], &[2]).unwrap();
        assert!(restore_store(&mut store, &[("missing".into(), bogus, false)]).is_err());
    }
}
