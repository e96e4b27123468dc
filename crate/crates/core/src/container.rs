//! Portable tensor container (safetensors-compatible, F32 only).
//!
//! ```text
//! [u64 LE header length][JSON header][raw little-endian payload]
//! ```
//!
//! The header maps each tensor name to `{"dtype":"F32","shape":[..],
//! "data_offsets":[begin,end]}` with offsets relative to the payload start.
//! An optional `__metadata__` entry holds string key/value pairs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const METADATA_KEY: &str = "__metadata__";

#[derive(Debug, Deserialize, Serialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

#[derive(Debug, Default)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Byte position of a serde_json (line, column) inside `text`.
fn json_byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    let mut cur_line = 1;
    for (i, &b) in text.iter().enumerate() {
        if cur_line == line {
            return i + column.saturating_sub(1);
        }
        if b == b'\n' {
            cur_line += 1;
        }
    }
    text.len()
}

pub fn parse_container(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < 8 {
        return Err(format_err(0, "file shorter than the 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let header_end = 8u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| format_err(0, format!("header length {header_len} exceeds file size")))?
        as usize;
    let header = &bytes[8..header_end];
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_slice(header).map_err(|e| {
        format_err(
            8 + json_byte_offset(header, e.line(), e.column()),
            format!("invalid JSON header: {e}"),
        )
    })?;
    let payload = &bytes[header_end..];

    let mut file = TensorFile::default();
    for (name, value) in raw {
        if name == METADATA_KEY {
            file.metadata = serde_json::from_value(value)
                .map_err(|e| format_err(8, format!("invalid __metadata__: {e}")))?;
            continue;
        }
        let entry: Entry = serde_json::from_value(value)
            .map_err(|e| format_err(8, format!("invalid entry for `{name}`: {e}")))?;
        let [begin, end] = entry.data_offsets;
        let at = header_end + begin;
        if entry.dtype != "F32" {
            return Err(format_err(at, format!("`{name}` has dtype {}, only F32 is supported", entry.dtype)));
        }
        if end < begin || end > payload.len() {
            return Err(format_err(
                at,
                format!("`{name}` data range [{begin}, {end}) outside payload of {} bytes", payload.len()),
            ));
        }
        let numel: usize = entry.shape.iter().product();
        if end - begin != numel * 4 {
            return Err(format_err(
                at,
                format!("`{name}` spans {} bytes but shape {:?} needs {}", end - begin, entry.shape, numel * 4),
            ));
        }
        let data: Vec<f32> = payload[begin..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        file.tensors.insert(name, Tensor::new(entry.shape, data)?);
    }
    Ok(file)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_container(&bytes)
}

/// Serializes tensors in name order; the header is space-padded to a multiple
/// of 8 bytes.
pub fn encode_container(
    tensors: &BTreeMap<String, Tensor>,
    metadata: &BTreeMap<String, String>,
) -> Result<Vec<u8>> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert(METADATA_KEY.into(), serde_json::to_value(metadata)?);
    }
    let mut offset = 0;
    for (name, t) in tensors {
        let end = offset + t.len() * 4;
        let entry = Entry {
            dtype: "F32".into(),
            shape: t.shape().to_vec(),
            data_offsets: [offset, end],
        };
        header.insert(name.clone(), serde_json::to_value(entry)?);
        offset = end;
    }
    let mut header = serde_json::to_vec(&header)?;
    while header.len() % 8 != 0 {
        header.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container(
    path: impl AsRef<Path>,
    tensors: &BTreeMap<String, Tensor>,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(tensors, metadata)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> BTreeMap<String, Tensor> {
        let mut m = BTreeMap::new();
        m.insert("a".into(), Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        m.insert("b.bias".into(), Tensor::vector(vec![-0.5, 0.25]));
        m
    }

    #[test]
    fn truncated_and_corrupt_files_are_rejected() {
        let bytes = encode_container(&sample(), &BTreeMap::new()).unwrap();
        assert!(matches!(parse_container(&bytes[..4]), Err(Error::Format { offset: 0, .. })));
        // payload cut short
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(parse_container(cut), Err(Error::Format { .. })));
        // header length pointing past the end
        let mut bad = bytes.clone();
        bad[..8].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(parse_container(&bad), Err(Error::Format { .. })));
        // broken JSON
        let mut bad = bytes.clone();
        bad[8] = b'#';
        match parse_container(&bad) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_f32_dtype_is_rejected() {
        let header = br#"{"x":{"dtype":"F16","shape":[1],"data_offsets":[0,2]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0, 0]);
        let err = parse_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("F16"), "{err}");
    }

    proptest! {
        #[test]
        fn roundtrip(data in prop::collection::vec(-1e6f32..1e6, 0..40), rows in 1usize..4) {
            let cols = data.len() / rows;
            let t = Tensor::new(vec![rows, cols], data[..rows * cols].to_vec()).unwrap();
            let mut m = sample();
            m.insert("zz".into(), t);
            let meta = BTreeMap::from([("source".to_string(), "test".to_string())]);
            let back = parse_container(&encode_container(&m, &meta).unwrap()).unwrap();
            prop_assert_eq!(back.tensors, m);
            prop_assert_eq!(back.metadata, meta);
        }
    }
}
