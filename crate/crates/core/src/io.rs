//! Little-endian blobs and framed checkpoint files.
//!
//! A framed file is `MAGIC (8 bytes) | header length (u64 LE) | JSON header |
//! payload`. The header always carries a `version` string.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 8] = b"SEMFIELD";

pub fn write_f32_le(path: &Path, data: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_i32_le(path: &Path, data: &[i32]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_words(path: &Path, expected: Option<usize>) -> Result<Vec<[u8; 4]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::consistency(
            path,
            format!("length {} is not a multiple of 4", bytes.len()),
        ));
    }
    let n = bytes.len() / 4;
    if let Some(want) = expected {
        if n != want {
            return Err(Error::consistency(
                path,
                format!("expected {want} values, found {n}"),
            ));
        }
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect())
}

pub fn read_f32_le(path: &Path, expected: Option<usize>) -> Result<Vec<f32>> {
    Ok(read_words(path, expected)?
        .into_iter()
        .map(f32::from_le_bytes)
        .collect())
}

pub fn read_i32_le(path: &Path, expected: Option<usize>) -> Result<Vec<i32>> {
    Ok(read_words(path, expected)?
        .into_iter()
        .map(i32::from_le_bytes)
        .collect())
}

pub fn f32_payload(data: &[f32]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_framed<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)
        .map_err(|e| Error::format(path, format!("header serialization: {e}")))?;
    let mut buf = Vec::with_capacity(16 + json.len() + payload.len());
    buf.extend_from_slice(FRAME_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(payload);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(serde::Deserialize)]
struct VersionOnly {
    version: String,
}

/// Reads a framed file, checking magic and version, and returns the parsed
/// header with the payload decoded as f32 words.
pub fn read_framed<H: DeserializeOwned>(path: &Path, version: &str) -> Result<(H, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != FRAME_MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + len > bytes.len() {
        return Err(Error::consistency(path, "header length exceeds file size"));
    }
    let header_bytes = &bytes[16..16 + len];
    let v: VersionOnly = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(path, format!("unreadable header: {e}")))?;
    if v.version != version {
        return Err(Error::Version {
            path: path.into(),
            expected: version.into(),
            found: v.version,
        });
    }
    let header: H = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::format(path, format!("malformed header: {e}")))?;
    let payload = &bytes[16 + len..];
    if payload.len() % 4 != 0 {
        return Err(Error::consistency(path, "payload is not whole f32 words"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header, data))
}

/// Parses a JSON document with a `version` field, checking it first.
pub fn read_versioned_json<T: DeserializeOwned>(path: &Path, version: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let v: VersionOnly = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path, format!("unreadable document: {e}")))?;
    if v.version != version {
        return Err(Error::Version {
            path: path.into(),
            expected: version.into(),
            found: v.version,
        });
    }
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, format!("malformed: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::format(path, format!("serialization: {e}")))?;
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, format!("malformed: {e}")))
}

/// First line of a self-describing CSV file.
pub fn csv_preamble(version: &str, config_hash: &str) -> String {
    format!("# version={version} config_hash={config_hash}\n")
}

/// Version and config hash from a line written by [`csv_preamble`].
pub fn parse_csv_preamble(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("# version=")?;
    let (v, h) = rest.trim_end().split_once(" config_hash=")?;
    Some((v.to_string(), h.to_string()))
}

/// Short hex digest used to tag artifacts with the config that produced them.
pub fn short_hash(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    hex::encode(&d[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize, serde::Deserialize, PartialEq, Debug)]
    struct H {
        version: String,
        n: usize,
    }

    #[test]
    fn framed_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let h = H {
            version: "v/1".into(),
            n: 3,
        };
        write_framed(&p, &h, &f32_payload(&[1.0, -2.5, f32::MIN_POSITIVE])).unwrap();
        let (h2, d): (H, _) = read_framed(&p, "v/1").unwrap();
        assert_eq!(h2, h);
        assert_eq!(d, vec![1.0, -2.5, f32::MIN_POSITIVE]);
        assert!(matches!(
            read_framed::<H>(&p, "v/2"),
            Err(Error::Version { .. })
        ));
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_framed::<H>(&p, "v/1"), Err(Error::Format { .. })));
    }

    #[test]
    fn blob_length_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        write_f32_le(&p, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            read_f32_le(&p, Some(3)),
            Err(Error::Consistency { .. })
        ));
    }
}
