//! Canonical byte encoding shared by block hashing and the message schemas.
//!
//! Every integer is fixed-width big-endian, every variable-length field is
//! prefixed by a `u32` byte length, and digests are written as their raw 32
//! bytes. `docs/wire-format.md` lists the exact layout of each type.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("invalid value at offset {offset}: {what}")]
    Invalid { offset: usize, what: &'static str },
    #[error("{0} trailing bytes after decoded value")]
    Trailing(usize),
}

pub trait Encode {
    fn encode_to(&self, out: &mut Writer);

    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        self.encode_to(&mut w);
        w.into_inner()
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete value, rejecting trailing bytes.
    fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        match r.remaining() {
            0 => Ok(v),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// `u32` length prefix followed by the bytes.
    pub fn bytes(&mut self, bytes: &[u8]) {
        self.u32(u32::try_from(bytes.len()).expect("field longer than u32::MAX"));
        self.raw(bytes);
    }

    /// Length-prefixed nested encoding.
    pub fn nested<T: Encode + ?Sized>(&mut self, value: &T) {
        let inner = value.encode();
        self.bytes(&inner);
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                needed: n - self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Invalid {
                offset: at,
                what: "boolean must be 0 or 1",
            }),
        }
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn nested<T: Decode>(&mut self) -> Result<T, DecodeError> {
        let start = self.pos;
        let inner = self.bytes()?;
        let mut r = Reader::new(inner);
        let v = T::decode_from(&mut r).map_err(|e| shift(e, start + 4))?;
        match r.remaining() {
            0 => Ok(v),
            _ => Err(DecodeError::Invalid {
                offset: start,
                what: "nested value shorter than its length prefix",
            }),
        }
    }

    /// Reads a `u32` element count and then that many nested values.
    pub fn seq<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let n = self.u32()? as usize;
        // Every element needs at least its 4-byte prefix.
        if n > self.remaining() / 4 {
            return Err(DecodeError::Invalid {
                offset: self.pos,
                what: "element count exceeds input",
            });
        }
        (0..n).map(|_| self.nested()).collect()
    }
}

fn shift(e: DecodeError, by: usize) -> DecodeError {
    match e {
        DecodeError::Truncated { offset, needed } => DecodeError::Truncated {
            offset: offset + by,
            needed,
        },
        DecodeError::Invalid { offset, what } => DecodeError::Invalid {
            offset: offset + by,
            what,
        },
        other => other,
    }
}

/// Writes a `u32` count followed by each element length-prefixed.
pub fn write_seq<T: Encode>(w: &mut Writer, items: &[T]) {
    w.u32(u32::try_from(items.len()).expect("sequence longer than u32::MAX"));
    for it in items {
        w.nested(it);
    }
}
