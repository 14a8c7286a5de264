//! Raw little-endian f64 array files: 8-byte magic `HRARR1\0\0`, u64 count,
//! then the values.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HRARR1\0\0";

pub fn encode_array(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8], name: &str) -> Result<Vec<f64>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::parse(name, 0, "not an HRARR1 array file"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 8 * count {
        return Err(Error::parse(
            name,
            0,
            format!("header announces {count} values, file holds {} bytes", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_array(path: &Path, values: &[f64]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)
        .and_then(|_| w.write_all(&(values.len() as u64).to_le_bytes()))
        .map_err(|e| Error::io(path, e))?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_array(&bytes, &path.display().to_string())
}

/// Read an array and check its length.
pub fn read_array_len(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let v = read_array(path)?;
    if v.len() != expected {
        return Err(Error::dim(path.display().to_string(), expected, v.len()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        write_array(&p, &v).unwrap();
        let back = read_array(&p).unwrap();
        assert_eq!(
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 16 + 40);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut bytes = encode_array(&[1.0, 2.0]);
        bytes.pop();
        assert!(decode_array(&bytes, "t").is_err());
        assert!(decode_array(b"garbage", "t").is_err());
    }
}
