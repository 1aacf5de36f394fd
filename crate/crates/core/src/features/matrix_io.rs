//! Binary feature matrices.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "PFFM"  u16 version  u8 family tag  u8 element width (8)
//! u64 rows  u64 cols  rows*cols f64, row-major
//! ```

use std::io::{Read, Write};

use super::{FeatureError, FeatureFamily};

const MAGIC: &[u8; 4] = b"PFFM";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub family: FeatureFamily,
    pub rows: usize,
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(family: FeatureFamily, rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(FeatureError::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            family,
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.family.tag());
        out.push(8);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Validates every header field and the payload length before allocating.
    pub fn decode(bytes: &[u8]) -> Result<Self, FeatureError> {
        let bad = |m: &str| FeatureError::Malformed(m.to_string());
        if bytes.len() < HEADER_LEN {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(FeatureError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let family = FeatureFamily::from_tag(bytes[6]).ok_or_else(|| bad("unknown family tag"))?;
        if bytes[7] != 8 {
            return Err(bad("element width must be 8"));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (rows, cols) = (u64_at(8), u64_at(16));
        let payload = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| bad("size overflow"))?;
        if bytes.len() - HEADER_LEN != payload {
            return Err(FeatureError::Malformed(format!(
                "payload is {} bytes, header promises {payload}",
                bytes.len() - HEADER_LEN
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            family,
            rows: rows as usize,
            cols: cols as usize,
            data,
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), FeatureError> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, FeatureError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::decode(&buf)
    }
}
