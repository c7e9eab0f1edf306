//! `MMW1` parameter files.
//!
//! Layout: the 4-byte magic `MMW1`, a little-endian `u32` header length, a
//! UTF-8 JSON header, then a flat stream of little-endian `f32` values.
//! The header lists every tensor's name, `[rows, cols]` shape and byte
//! offset into the value stream.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

pub const MMW1_MAGIC: &[u8; 4] = b"MMW1";

pub type NamedTensor = (String, Matrix);

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

pub fn encode_mmw1(tensors: &[(String, &Matrix)]) -> Result<Vec<u8>> {
    let mut offset = 0;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: [m.rows(), m.cols()],
            offset,
        });
        offset += m.len() * 4;
    }
    let header = serde_json::to_vec(&Header {
        format: "MMW1".into(),
        dtype: "f32le".into(),
        tensors: entries,
    })?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::invalid("MMW1 header too large"))?;

    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(MMW1_MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for (_, m) in tensors {
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_mmw1(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let truncated = |reason: &str| Error::Truncated {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 4 {
        return Err(truncated("missing magic"));
    }
    if &bytes[..4] != MMW1_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "MMW1",
        });
    }
    if bytes.len() < 8 {
        return Err(truncated("missing header length"));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let data_start = 8 + header_len;
    if bytes.len() < data_start {
        return Err(truncated("header"));
    }
    let header: Header = serde_json::from_slice(&bytes[8..data_start]).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: format!("header: {e}"),
    })?;
    let data = &bytes[data_start..];

    header
        .tensors
        .into_iter()
        .map(|t| {
            let [rows, cols] = t.shape;
            let end = t.offset + rows * cols * 4;
            let Some(chunk) = data.get(t.offset..end) else {
                return Err(truncated(&format!("tensor {}", t.name)));
            };
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            Ok((t.name, Matrix::from_vec(rows, cols, values)?))
        })
        .collect()
}

pub fn write_mmw1(path: impl AsRef<Path>, tensors: &[(String, &Matrix)]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mmw1(tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mmw1(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mmw1(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let a = Matrix::from_rows(&[vec![1.0, 2.5], vec![-3.0, 0.25]]).unwrap();
        let b = Matrix::row_vector(vec![7.0]);
        let bytes = encode_mmw1(&[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(&bytes[..4], b"MMW1");
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
        assert_eq!(header["tensors"][1]["offset"], 16);
        assert_eq!(header["tensors"][0]["shape"], serde_json::json!([2, 2]));
        assert_eq!(bytes.len(), 8 + header_len + 5 * 4);
        assert_eq!(&bytes[8 + header_len..8 + header_len + 4], &1.0f32.to_le_bytes());

        let back = decode_mmw1(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("b".to_string(), b)]);
    }

    #[test]
    fn corrupt_inputs() {
        let a = Matrix::row_vector(vec![1.0, 2.0]);
        let mut bytes = encode_mmw1(&[("a".into(), &a)]).unwrap();
        let p = Path::new("mem");
        assert!(matches!(
            decode_mmw1(&bytes[..bytes.len() - 1], p),
            Err(Error::Truncated { .. })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_mmw1(&bytes, p), Err(Error::BadMagic { .. })));
    }
}
