//! Final lossless stage. Backends are registered by a one-byte id that is
//! recorded in the archive header.

use super::ArchiveError;

pub const STORE: u8 = 0;
pub const ZSTD: u8 = 1;

pub const DEFAULT_BACKEND: u8 = ZSTD;
const ZSTD_LEVEL: i32 = 3;

pub trait Backend: Sync {
    fn id(&self) -> u8;
    fn name(&self) -> &'static str;
    fn compress(&self, raw: &[u8]) -> Result<Vec<u8>, ArchiveError>;
    /// `raw_len` is the exact decoded length recorded in the section header.
    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, ArchiveError>;
}

/// Identity backend.
pub struct Store;

impl Backend for Store {
    fn id(&self) -> u8 {
        STORE
    }

    fn name(&self) -> &'static str {
        "store"
    }

    fn compress(&self, raw: &[u8]) -> Result<Vec<u8>, ArchiveError> {
        Ok(raw.to_vec())
    }

    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, ArchiveError> {
        if stored.len() != raw_len {
            return Err(ArchiveError::backend("store", format!("{} bytes, expected {raw_len}", stored.len())));
        }
        Ok(stored.to_vec())
    }
}

pub struct Zstd;

impl Backend for Zstd {
    fn id(&self) -> u8 {
        ZSTD
    }

    fn name(&self) -> &'static str {
        "zstd"
    }

    fn compress(&self, raw: &[u8]) -> Result<Vec<u8>, ArchiveError> {
        zstd::bulk::compress(raw, ZSTD_LEVEL).map_err(|e| ArchiveError::backend("zstd", e.to_string()))
    }

    fn decompress(&self, stored: &[u8], raw_len: usize) -> Result<Vec<u8>, ArchiveError> {
        let out = zstd::bulk::decompress(stored, raw_len).map_err(|e| ArchiveError::backend("zstd", e.to_string()))?;
        if out.len() != raw_len {
            return Err(ArchiveError::backend("zstd", format!("{} bytes, expected {raw_len}", out.len())));
        }
        Ok(out)
    }
}

static BACKENDS: [&dyn Backend; 2] = [&Store, &Zstd];

pub fn backend(id: u8) -> Result<&'static dyn Backend, ArchiveError> {
    BACKENDS.get(id as usize).copied().ok_or(ArchiveError::UnsupportedBackend(id))
}

pub fn backend_by_name(name: &str) -> Result<&'static dyn Backend, ArchiveError> {
    BACKENDS
        .iter()
        .copied()
        .find(|b| b.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| ArchiveError::Options(format!("unknown backend `{name}`")))
}

pub fn final_stage(raw: &[u8], id: u8) -> Result<Vec<u8>, ArchiveError> {
    backend(id)?.compress(raw)
}

pub fn final_stage_inverse(stored: &[u8], id: u8, raw_len: usize) -> Result<Vec<u8>, ArchiveError> {
    backend(id)?.decompress(stored, raw_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_random_bytes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in [0usize, 1, 100, 65_537] {
            let mut buf = vec![0u8; len];
            rng.fill_bytes(&mut buf);
            for id in [STORE, ZSTD] {
                let c = final_stage(&buf, id).unwrap();
                assert_eq!(final_stage_inverse(&c, id, len).unwrap(), buf);
            }
        }
    }

    #[test]
    fn store_is_identity() {
        let buf = b"anything at all".to_vec();
        assert_eq!(final_stage(&buf, STORE).unwrap(), buf);
    }

    #[test]
    fn constant_megabyte_shrinks() {
        let buf = vec![0x5au8; 1 << 20];
        let c = final_stage(&buf, ZSTD).unwrap();
        assert!(c.len() < buf.len() / 100, "{}", c.len());
    }

    #[test]
    fn unknown_id() {
        assert!(matches!(final_stage(b"x", 9), Err(ArchiveError::UnsupportedBackend(9))));
        assert!(matches!(backend(255), Err(ArchiveError::UnsupportedBackend(255))));
        assert_eq!(backend_by_name("ZSTD").unwrap().id(), ZSTD);
        assert!(backend_by_name("lz4").is_err());
    }

    #[test]
    fn wrong_length_rejected() {
        let c = final_stage(&[1u8; 1000], ZSTD).unwrap();
        assert!(final_stage_inverse(&c, ZSTD, 999).is_err());
        assert!(final_stage_inverse(&[1, 2], STORE, 3).is_err());
    }
}
