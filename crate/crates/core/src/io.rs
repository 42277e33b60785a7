// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared on-disk encoding.
//!
//! Every artifact is a single JSON document whose header carries a
//! `schema` string and an integer `version`. Vectors and matrices are
//! base-64 strings of little-endian IEEE-754 doubles; matrices add
//! explicit `rows`/`cols` and are stored row-major.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| Error::MalformedFile(format!("bad base-64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::MalformedFile(format!(
            "float payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Row-major matrix on the wire.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixWire {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl MatrixWire {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        // transpose of a column-major matrix is its row-major layout
        let t = m.transpose();
        MatrixWire {
            rows: m.nrows(),
            cols: m.ncols(),
            data: encode_f64s(t.as_slice()),
        }
    }

    pub fn to_matrix(&self, what: &str) -> Result<DMatrix<f64>> {
        let values = decode_f64s(&self.data)?;
        if values.len() != self.rows * self.cols {
            return Err(Error::DimensionInconsistency(format!(
                "{what}: header says {}x{} but payload holds {} values",
                self.rows,
                self.cols,
                values.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &values))
    }
}

/// Decode a vector payload and check its length.
pub fn vector_of_len(text: &str, len: usize, what: &str) -> Result<Vec<f64>> {
    let v = decode_f64s(text)?;
    if v.len() != len {
        return Err(Error::DimensionInconsistency(format!(
            "{what}: expected length {len}, found {}",
            v.len()
        )));
    }
    Ok(v)
}

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

/// Parse `text` as a document of the given schema.
pub fn parse_document<T: DeserializeOwned>(text: &str, schema: &str) -> Result<T> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::MalformedFile(e.to_string()))?;
    let header: Header = serde_json::from_value(value.clone())
        .map_err(|e| Error::MalformedFile(format!("missing header: {e}")))?;
    if header.schema != schema {
        return Err(Error::VersionMismatch {
            expected: schema.to_owned(),
            found: header.schema,
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION.to_string(),
            found: header.version.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| Error::MalformedFile(e.to_string()))
}

pub fn read_document<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let text = fs::read_to_string(path)?;
    parse_document(&text, schema)
}

pub fn to_pretty_json<T: Serialize>(doc: &T) -> String {
    let mut s = serde_json::to_string_pretty(doc).expect("serializable document");
    s.push('\n');
    s
}

pub fn write_document<T: Serialize>(path: &Path, doc: &T) -> Result<()> {
    fs::write(path, to_pretty_json(doc))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn floats_round_trip_bitwise(values in proptest::collection::vec(any::<f64>(), 0..64)) {
            let back = decode_f64s(&encode_f64s(&values)).unwrap();
            prop_assert_eq!(back.len(), values.len());
            for (a, b) in values.iter().zip(&back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn matrix_is_row_major_on_the_wire() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = MatrixWire::from_matrix(&m);
        assert_eq!(decode_f64s(&w.data).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(w.to_matrix("m").unwrap(), m);
    }

    #[test]
    fn odd_payload_is_malformed() {
        let text = STANDARD.encode([0u8; 7]);
        assert!(matches!(decode_f64s(&text), Err(Error::MalformedFile(_))));
    }
}
