//! On-disk parameters: `manifest.json` plus one little-endian `f32` blob
//! per named array, each guarded by a SHA-256 digest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffkernel::Array;
use crate::kg::RelationSpace;

use super::{ModelConfig, ModelError, ParameterSet};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "redkgr-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: ModelConfig,
    pub num_relations: usize,
    pub seed: u64,
    pub epoch: usize,
    /// Free-form run metadata (training config, metrics).
    #[serde(default)]
    pub extra: serde_json::Value,
    pub arrays: Vec<ArrayEntry>,
}

fn io_err(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(format!("{}: {e}", path.display()))
}

fn blob_bytes(a: &Array<f32>) -> Vec<u8> {
    a.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save(
    dir: &Path,
    params: &ParameterSet<f32>,
    seed: u64,
    epoch: usize,
    extra: serde_json::Value,
) -> Result<PathBuf, ModelError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut arrays = Vec::new();
    for (name, a) in params.named_arrays() {
        let file = format!("{name}.f32");
        let bytes = blob_bytes(a);
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| io_err(&path, e))?;
        arrays.push(ArrayEntry {
            name,
            shape: [a.rows(), a.cols()],
            file,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config: params.config,
        num_relations: params.relation_space.num_raw(),
        seed,
        epoch,
        extra,
        arrays,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, ModelError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format != FORMAT {
        return Err(ModelError::Checkpoint(format!(
            "{}: unsupported format `{}`",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

/// Loads and verifies every blob against its digest and the shapes
/// implied by the stored config.
pub fn load(dir: &Path) -> Result<(ParameterSet<f32>, Manifest), ModelError> {
    let m = read_manifest(dir)?;
    let rels = RelationSpace::new(m.num_relations as u32);
    let want = ParameterSet::<f32>::expected_shapes(&m.config, rels);
    if want.len() != m.arrays.len() {
        return Err(ModelError::Shape(format!(
            "manifest lists {} arrays, config implies {}",
            m.arrays.len(),
            want.len()
        )));
    }
    let mut arrays = Vec::with_capacity(want.len());
    for (entry, shape) in m.arrays.iter().zip(want) {
        if (entry.shape[0], entry.shape[1]) != shape {
            return Err(ModelError::Shape(format!(
                "{}: manifest shape {:?}, config implies {shape:?}",
                entry.name, entry.shape
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != entry.sha256 {
            return Err(ModelError::Checkpoint(format!(
                "{}: checksum mismatch",
                path.display()
            )));
        }
        if bytes.len() != 4 * shape.0 * shape.1 {
            return Err(ModelError::Shape(format!(
                "{}: {} bytes for shape {shape:?}",
                path.display(),
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        arrays.push(Array::new(shape.0, shape.1, data).map_err(ModelError::Kernel)?);
    }
    let params = ParameterSet::from_arrays(m.config, rels, arrays)?;
    Ok((params, m))
}
