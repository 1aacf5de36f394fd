//! Versioned binary model container shared by the classifiers and the
//! fusion network.
//!
//! ```text
//! "PFMD"  u16 version  u8 kind  u8 reserved (0)
//! u32 class count, then per class: u8 name length, name bytes
//! kind-specific payload
//! ```
//!
//! All integers are little-endian. The reader checks every length against
//! the bytes actually remaining before allocating, so corrupt input fails
//! with an error instead of a huge allocation or a panic.

use thiserror::Error;

use super::ExpressionLabel;

pub const MAGIC: &[u8; 4] = b"PFMD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Linear = 1,
    Forest = 2,
    Fusion = 3,
}

impl ModelKind {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            1 => Some(ModelKind::Linear),
            2 => Some(ModelKind::Forest),
            3 => Some(ModelKind::Fusion),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown model kind {0}")]
    UnknownKind(u8),
    #[error("expected a {expected:?} model, found {found:?}")]
    WrongKind {
        expected: ModelKind,
        found: ModelKind,
    },
    #[error("invalid model data: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
}

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(kind: ModelKind) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.u8(kind as u8);
        w.u8(0);
        w.u32(ExpressionLabel::COUNT as u32);
        for l in ExpressionLabel::ALL {
            w.u8(l.name().len() as u8);
            w.buf.extend_from_slice(l.name().as_bytes());
        }
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.buf.extend_from_slice(b);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Parses and checks the header, returning the reader positioned at the
    /// payload together with the stored model kind.
    pub fn open(data: &'a [u8]) -> Result<(Self, ModelKind), DecodeError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(DecodeError::UnsupportedVersion(version));
        }
        let kind_byte = r.u8()?;
        let kind = ModelKind::from_u8(kind_byte).ok_or(DecodeError::UnknownKind(kind_byte))?;
        if r.u8()? != 0 {
            return Err(DecodeError::Invalid("reserved byte must be 0".into()));
        }
        let n = r.u32()? as usize;
        if n != ExpressionLabel::COUNT {
            return Err(DecodeError::Invalid(format!(
                "expected 7 classes, found {n}"
            )));
        }
        for l in ExpressionLabel::ALL {
            let len = r.u8()? as usize;
            if r.take(len)? != l.name().as_bytes() {
                return Err(DecodeError::Invalid(
                    "class names differ from the label set".into(),
                ));
            }
        }
        Ok((r, kind))
    }

    pub fn open_kind(data: &'a [u8], expected: ModelKind) -> Result<Self, DecodeError> {
        let (r, found) = Self::open(data)?;
        if found != expected {
            return Err(DecodeError::WrongKind { expected, found });
        }
        Ok(r)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated(self.data.len()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A length or count that must be satisfiable by the remaining bytes,
    /// given each element needs at least `min_elem_bytes`.
    pub fn len(&mut self, min_elem_bytes: usize) -> Result<usize, DecodeError> {
        let n = self.u64()?;
        let need = n.checked_mul(min_elem_bytes.max(1) as u64);
        match need {
            Some(need) if need <= self.remaining() as u64 => Ok(n as usize),
            _ => Err(DecodeError::Truncated(self.data.len())),
        }
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if v.is_finite() {
            Ok(v)
        } else {
            Err(DecodeError::Invalid("non-finite parameter".into()))
        }
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, DecodeError> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

/// Kind stored in an encoded model, after validating the header.
pub fn peek_kind(data: &[u8]) -> Result<ModelKind, DecodeError> {
    Reader::open(data).map(|(_, k)| k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip_and_checks() {
        let mut w = Writer::new(ModelKind::Forest);
        w.f64s(&[1.0, 2.0]);
        w.bytes(b"abc");
        let bytes = w.finish();
        assert_eq!(peek_kind(&bytes), Ok(ModelKind::Forest));
        let mut r = Reader::open_kind(&bytes, ModelKind::Forest).unwrap();
        assert_eq!(r.f64s().unwrap(), vec![1.0, 2.0]);
        assert_eq!(r.bytes().unwrap(), b"abc");
        r.finish().unwrap();
        assert!(matches!(
            Reader::open_kind(&bytes, ModelKind::Linear),
            Err(DecodeError::WrongKind { .. })
        ));
        for cut in 0..bytes.len() {
            let res = Reader::open(&bytes[..cut]).and_then(|(mut r, _)| {
                r.f64s()?;
                r.bytes()?;
                Ok(())
            });
            assert!(res.is_err(), "prefix of {cut} bytes decoded");
        }
    }

    #[test]
    fn huge_lengths_fail_without_allocating() {
        let mut w = Writer::new(ModelKind::Linear);
        w.u64(u64::MAX);
        let bytes = w.finish();
        let (mut r, _) = Reader::open(&bytes).unwrap();
        assert!(r.f64s().is_err());
    }
}
