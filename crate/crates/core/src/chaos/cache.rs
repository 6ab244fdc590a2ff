use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{moment_tensor, ChaosBasis, MomentTensor};
use crate::{Error, Result};

pub const CACHE_FORMAT_VERSION: u32 = 1;

/// On-disk layout. Values are stored as IEEE-754 bit patterns in hex so a
/// cached tensor is bit-identical to a freshly built one.
#[derive(Serialize, Deserialize)]
struct CacheFile {
    format_version: u32,
    germ_dim: usize,
    order: usize,
    arity: usize,
    basis_size: usize,
    indices: Vec<u32>,
    values_bits: Vec<String>,
}

/// Directory cache of moment tensors keyed by (germ_dim, order, arity).
#[derive(Debug, Clone)]
pub struct TensorCache {
    dir: PathBuf,
}

impl TensorCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn path(&self, basis: &ChaosBasis, arity: usize) -> PathBuf {
        self.dir.join(format!(
            "moments_d{}_p{}_a{}.json",
            basis.germ_dim(),
            basis.order(),
            arity
        ))
    }

    /// Load the tensor if a compatible file exists, else build and store it.
    pub fn get_or_build(&self, basis: &ChaosBasis, arity: usize) -> Result<MomentTensor> {
        let path = self.path(basis, arity);
        if let Some(t) = load(&path, basis, arity)? {
            return Ok(t);
        }
        let tensor = moment_tensor(basis, arity)?;
        store(&path, basis, &tensor)?;
        Ok(tensor)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load(path: &Path, basis: &ChaosBasis, arity: usize) -> Result<Option<MomentTensor>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(path, e)),
    };
    let Ok(file) = serde_json::from_str::<CacheFile>(&text) else {
        return Ok(None);
    };
    if file.format_version != CACHE_FORMAT_VERSION
        || file.germ_dim != basis.germ_dim()
        || file.order != basis.order()
        || file.arity != arity
        || file.basis_size != basis.len()
        || file.indices.len() != file.values_bits.len() * arity
    {
        return Ok(None);
    }
    let mut values = Vec::with_capacity(file.values_bits.len());
    for bits in &file.values_bits {
        match u64::from_str_radix(bits, 16) {
            Ok(b) => values.push(f64::from_bits(b)),
            Err(_) => return Ok(None),
        }
    }
    Ok(Some(MomentTensor::from_parts(
        arity,
        basis.len(),
        file.indices,
        values,
    )))
}

fn store(path: &Path, basis: &ChaosBasis, tensor: &MomentTensor) -> Result<()> {
    let (indices, values) = tensor.parts();
    let file = CacheFile {
        format_version: CACHE_FORMAT_VERSION,
        germ_dim: basis.germ_dim(),
        order: basis.order(),
        arity: tensor.arity(),
        basis_size: tensor.basis_size(),
        indices: indices.to_vec(),
        values_bits: values
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, serde_json::to_string(&file)?).map_err(|e| io_err(path, e))
}
