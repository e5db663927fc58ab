use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::corpus::{embedding_payload_bytes, EMBEDDING_MAGIC};
use crate::error::{Error, Result};
use crate::retrieval::{binary_code_bytes, flat_code_bytes, BINARY_INDEX_MAGIC, BM25_MAGIC, FLAT_INDEX_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Binary,
    Flat,
    Bm25,
    Embeddings,
}

/// `code_bytes` counts only the searchable payload (packed codes, the f32
/// matrix, or postings plus term dictionary); `file_bytes` is the size on
/// disk including headers and ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageReport {
    pub kind: IndexKind,
    pub code_bytes: u64,
    pub file_bytes: u64,
}

pub fn measure_storage(path: impl AsRef<Path>) -> Result<StorageReport> {
    let path = path.as_ref();
    let bytes = binio::read_all(path)?;
    let file_bytes = bytes.len() as u64;
    if bytes.len() < 8 {
        return Err(Error::Truncated {
            expected: 8,
            found: file_bytes,
        });
    }
    let header = |b: &[u8]| -> (u64, u64) {
        let a = u32::from_le_bytes(b[8..12].try_into().unwrap()) as u64;
        let c = u32::from_le_bytes(b[12..16].try_into().unwrap()) as u64;
        (a, c)
    };
    let magic: &[u8] = &bytes[..8];
    let (kind, code_bytes) = if magic == BM25_MAGIC {
        let idx = crate::retrieval::bm25::decode_inverted_index(&bytes)?;
        (IndexKind::Bm25, idx.code_bytes())
    } else {
        if bytes.len() < 16 {
            return Err(Error::Truncated {
                expected: 16,
                found: file_bytes,
            });
        }
        let (n, w) = header(&bytes);
        if magic == BINARY_INDEX_MAGIC {
            (IndexKind::Binary, binary_code_bytes(n, w))
        } else if magic == FLAT_INDEX_MAGIC {
            (IndexKind::Flat, flat_code_bytes(n, w))
        } else if magic == EMBEDDING_MAGIC {
            (IndexKind::Embeddings, embedding_payload_bytes(n, w))
        } else {
            return Err(Error::BadMagic {
                expected: "an index or embedding file".into(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
    };
    Ok(StorageReport {
        kind,
        code_bytes,
        file_bytes,
    })
}

/// Human-readable size in binary units, one decimal: `1.7 MiB`.
pub fn format_size(bytes: u64) -> String {
    const UNITS: [&str; 5] = ["B", "KiB", "MiB", "GiB", "TiB"];
    let mut v = bytes as f64;
    let mut u = 0;
    while v >= 1024.0 && u < UNITS.len() - 1 {
        v /= 1024.0;
        u += 1;
    }
    if u == 0 {
        format!("{bytes} B")
    } else {
        format!("{v:.1} {}", UNITS[u])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashopt::SignCode;
    use crate::retrieval::{save_binary_index, save_flat_index, BinaryIndex, FlatIndex};

    #[test]
    fn binary_and_flat_files() {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("b");
        let idx = BinaryIndex::from_sign_codes(&vec![SignCode(vec![1; 128]); 1000]).unwrap();
        save_binary_index(&idx, &b).unwrap();
        let r = measure_storage(&b).unwrap();
        assert_eq!(r.kind, IndexKind::Binary);
        assert_eq!(r.code_bytes, 16_000);
        assert_eq!(r.file_bytes, 16 + 16_000 + 8_000);

        let f = dir.path().join("f");
        save_flat_index(&FlatIndex::<f32>::new(4, vec![0.5; 12], vec![0, 1, 2]).unwrap(), &f).unwrap();
        let r = measure_storage(&f).unwrap();
        assert_eq!(
            (r.kind, r.code_bytes, r.file_bytes),
            (IndexKind::Flat, 48, 16 + 48 + 24)
        );
    }

    #[test]
    fn missing_file_and_unknown_magic() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            measure_storage(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
        let p = dir.path().join("junk");
        std::fs::write(&p, b"NOTMAGIC12345678").unwrap();
        assert!(matches!(measure_storage(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn sizes_render_in_binary_units() {
        assert_eq!(format_size(1_745_680), "1.7 MiB");
        assert_eq!(format_size(218_210), "213.1 KiB");
        assert_eq!(format_size(335_170_560), "319.6 MiB");
        assert_eq!(format_size(12), "12 B");
    }
}
