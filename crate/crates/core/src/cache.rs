//! Binary corrector cache.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 8    | magic `b"PHCORR\0\0"`                     |
//! | 8      | 4    | format version (u32, currently 1)         |
//! | 12     | 32   | SHA-256 key of geometry, resolution, tolerance |
//! | 44     | 8    | dofs per field (u64)                      |
//! | 52     | 8    | number of fields (u64)                    |
//! | 60     | 8·n  | field values (f64), field-major           |

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MAGIC: [u8; 8] = *b"PHCORR\0\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: not a corrector cache file")]
    Magic { path: String },
    #[error("{path}: unsupported cache format version {version}")]
    Version { path: String, version: u32 },
    #[error("{path}: truncated or oversized ({len} bytes, expected {expected})")]
    Length { path: String, len: usize, expected: usize },
    #[error("{path}: key mismatch, file belongs to a different cell setup")]
    Key { path: String },
}

/// SHA-256 key of the inputs that determine the correctors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    /// Hashes a canonical textual description of the cell problem.
    pub fn from_description(text: &str) -> Self {
        CacheKey(Sha256::digest(text.as_bytes()).into())
    }

    pub fn hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn file_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("correctors-{}.bin", &self.hex()[..16]))
    }
}

pub fn encode(key: &CacheKey, fields: &[Vec<f64>]) -> Vec<u8> {
    let n_dofs = fields.first().map_or(0, Vec::len);
    assert!(fields.iter().all(|f| f.len() == n_dofs), "fields must share one length");
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n_dofs * fields.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&key.0);
    out.extend_from_slice(&(n_dofs as u64).to_le_bytes());
    out.extend_from_slice(&(fields.len() as u64).to_le_bytes());
    for f in fields {
        for v in f {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], key: &CacheKey, path: &str) -> Result<Vec<Vec<f64>>, CacheError> {
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes")) as usize;
    if bytes.len() < HEADER_LEN || bytes[..8] != MAGIC {
        return Err(CacheError::Magic { path: path.into() });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CacheError::Version { path: path.into(), version });
    }
    if bytes[12..44] != key.0 {
        return Err(CacheError::Key { path: path.into() });
    }
    let (n_dofs, n_fields) = (u64_at(44), u64_at(52));
    let expected = n_dofs
        .checked_mul(n_fields)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(CacheError::Length { path: path.into(), len: bytes.len(), expected });
    }
    Ok(bytes[HEADER_LEN..]
        .chunks_exact(8 * n_dofs.max(1))
        .take(n_fields)
        .map(|c| c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        .collect())
}

/// Reads cached fields; `Ok(None)` when no file exists for this key.
pub fn load(dir: &Path, key: &CacheKey) -> Result<Option<Vec<Vec<f64>>>, CacheError> {
    let path = key.file_in(dir);
    let name = path.display().to_string();
    match fs::read(&path) {
        Ok(bytes) => decode(&bytes, key, &name).map(Some),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(CacheError::Io { path: name, source }),
    }
}

pub fn store(dir: &Path, key: &CacheKey, fields: &[Vec<f64>]) -> Result<PathBuf, CacheError> {
    let path = key.file_in(dir);
    let io = |source| CacheError::Io { path: path.display().to_string(), source };
    fs::create_dir_all(dir).map_err(io)?;
    fs::write(&path, encode(key, fields)).map_err(io)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let key = CacheKey::from_description("cell a");
        let fields = vec![vec![1.0, -2.5, f64::MIN_POSITIVE], vec![0.0, 1e300, -0.0]];
        let bytes = encode(&key, &fields);
        assert_eq!(bytes.len(), HEADER_LEN + 48);
        let back = decode(&bytes, &key, "mem").unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().flatten().zip(fields.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let other = CacheKey::from_description("cell b");
        assert!(matches!(decode(&bytes, &other, "mem"), Err(CacheError::Key { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 1], &key, "mem"), Err(CacheError::Length { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, &key, "mem"), Err(CacheError::Magic { .. })));
    }

    #[test]
    fn store_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::from_description("x");
        assert!(load(dir.path(), &key).unwrap().is_none());
        store(dir.path(), &key, &[vec![3.0; 4]]).unwrap();
        assert_eq!(load(dir.path(), &key).unwrap().unwrap(), vec![vec![3.0; 4]]);
    }
}
