//! Binary embedding files and the text-embedding provider contract.
//!
//! Layout, all little-endian:
//!
//! ```text
//! 0..4    magic "WEMB"
//! 4..6    version (u16) = 1
//! 6       dtype (u8), 0 = binary32
//! 7       reserved, 0
//! 8..12   dim (u32)
//! 12..20  rows (u64)
//! 20..    rows * dim binary32 values, row-major
//! ```
//!
//! Row keys live in a sidecar text file at `<path>.keys`, one per line.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WEMB";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: usize = 20;

/// Row-major `f32` vectors with one key per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
    keys: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>, keys: Vec<String>) -> Result<Self> {
        if data.len() != keys.len() * dim {
            return Err(Error::invalid(format!(
                "{} values do not fill {} rows of dim {dim}",
                data.len(),
                keys.len()
            )));
        }
        Ok(Self { dim, data, keys })
    }

    /// Rows keyed by their index.
    pub fn from_rows(dim: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data, (0..rows.len()).map(|i| i.to_string()).collect())
    }

    pub fn rows(&self) -> usize {
        self.keys.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on 0; a dim-0 matrix has no data anyway
        (0..self.rows()).map(move |i| self.row(i))
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut keys = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            keys.push(self.keys[i].clone());
        }
        Self {
            dim: self.dim,
            data,
            keys,
        }
    }

    /// Row-wise concatenation.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.rows() > 0 && other.rows() > 0 && self.dim != other.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let dim = if self.rows() > 0 { self.dim } else { other.dim };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let mut keys = self.keys.clone();
        keys.extend_from_slice(&other.keys);
        Self::new(dim, data, keys)
    }
}

pub fn keys_path(path: &Path) -> PathBuf {
    let mut s = OsString::from(path.as_os_str());
    s.push(".keys");
    PathBuf::from(s)
}

pub fn encode(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + matrix.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_embeddings(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    if u32::try_from(matrix.dim).is_err() {
        return Err(Error::invalid(format!("dim {} does not fit in u32", matrix.dim)));
    }
    if let Some(bad) = matrix.keys.iter().find(|k| k.contains(['\n', '\r'])) {
        return Err(Error::KeyWithLineBreak(bad.clone()));
    }
    fs::write(path, encode(matrix)).map_err(|e| Error::io(path, e))?;
    let mut keys = String::new();
    for k in &matrix.keys {
        keys.push_str(k);
        keys.push('\n');
    }
    let kp = keys_path(path);
    fs::write(&kp, keys).map_err(|e| Error::io(kp, e))
}

/// Parses the binary payload. Keys are placeholders (row indices).
pub fn decode(path: &Path, bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic(path.to_owned()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::BadVersion {
            path: path.to_owned(),
            found: version,
        });
    }
    if bytes[6] != DTYPE_F32 {
        return Err(Error::BadDtype {
            path: path.to_owned(),
            found: bytes[6],
        });
    }
    if bytes[7] != 0 {
        return Err(Error::BadReserved {
            path: path.to_owned(),
            found: bytes[7],
        });
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let expected = (rows as u128) * (dim as u128) * 4 + HEADER_LEN as u128;
    let found = bytes.len() as u128;
    if found < expected {
        return Err(Error::Truncated {
            path: path.to_owned(),
            expected: expected.min(u64::MAX as u128) as u64,
            found: found as u64,
        });
    }
    if found > expected {
        return Err(Error::Malformed {
            path: path.to_owned(),
            message: format!("{} trailing bytes after payload", found - expected),
        });
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rows = rows as usize;
    EmbeddingMatrix::new(dim, data, (0..rows).map(|i| i.to_string()).collect())
}

/// Reads a matrix and its sidecar keys. No normalization is applied.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut matrix = decode(path, &bytes)?;
    let kp = keys_path(path);
    let text = fs::read_to_string(&kp).map_err(|e| Error::io(&kp, e))?;
    let keys: Vec<String> = text.lines().map(str::to_owned).collect();
    if keys.len() != matrix.rows() {
        return Err(Error::KeysMismatch {
            path: path.to_owned(),
            rows: matrix.rows(),
            keys: keys.len(),
        });
    }
    matrix.keys = keys;
    Ok(matrix)
}

/// Divides every row by its Euclidean norm.
pub fn normalize(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(matrix.data.len());
    for (i, row) in matrix.row_iter().enumerate() {
        let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(i));
        }
        data.extend(row.iter().map(|&v| (f64::from(v) / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        dim: matrix.dim,
        data,
        keys: matrix.keys.clone(),
    })
}

/// Anything that maps prompt strings to embedding rows, deterministically.
pub trait TextEmbeddingProvider {
    /// One row per prompt, in order, keyed by the prompt text.
    fn embed(&self, prompts: &[String]) -> Result<EmbeddingMatrix>;
}

/// Answers from a precomputed embedding file, keyed by exact prompt text.
#[derive(Debug, Clone)]
pub struct CachedTextEmbeddings {
    matrix: EmbeddingMatrix,
    index: HashMap<String, usize>,
}

impl CachedTextEmbeddings {
    pub fn new(matrix: EmbeddingMatrix) -> Result<Self> {
        let mut index = HashMap::with_capacity(matrix.rows());
        for (i, key) in matrix.keys.iter().enumerate() {
            if index.insert(key.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate cache key {key:?}")));
            }
        }
        Ok(Self { matrix, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_embeddings(path)?)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim
    }

    pub fn contains(&self, prompt: &str) -> bool {
        self.index.contains_key(prompt)
    }
}

impl TextEmbeddingProvider for CachedTextEmbeddings {
    fn embed(&self, prompts: &[String]) -> Result<EmbeddingMatrix> {
        let mut rows = Vec::with_capacity(prompts.len());
        let mut missing = Vec::new();
        for p in prompts {
            match self.index.get(p) {
                Some(&i) => rows.push(i),
                None => missing.push(p),
            }
        }
        if !missing.is_empty() {
            return Err(Error::CacheMiss {
                missing_count: missing.len(),
                first: missing.iter().take(5).map(|s| s.to_string()).collect(),
            });
        }
        Ok(self.matrix.select(&rows))
    }
}
