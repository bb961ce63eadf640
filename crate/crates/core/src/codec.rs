//! Little-endian binary container used for model files.
//!
//! Every file starts with an 8-byte magic (`KRFWS` + a 3-byte kind tag,
//! e.g. `FOR`, `APR`, `A3D`, `LBF`) and a `u32` format version. Payload
//! primitives: `u8`, `u32`, `u64`, `f64` (IEEE-754 bits), length-prefixed
//! (`u64`) sequences and UTF-8 strings. `f64` values are stored by bit
//! pattern, so a decode/encode round trip is bit-exact. The full layout is
//! documented in `docs/model-format.md`.

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a container of the given kind.
    pub fn with_header(kind: &[u8; 3]) -> Self {
        let mut w = Self::new();
        w.buf.extend_from_slice(b"KRFWS");
        w.buf.extend_from_slice(kind);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.u8(u8::from(v));
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).expect("write to Vec");
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("write to Vec");
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("write to Vec");
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
    }

    pub fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

pub struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

fn truncated(_: std::io::Error) -> Error {
    Error::Format("unexpected end of data".into())
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader {
            cur: Cursor::new(bytes),
        }
    }

    /// Opens a container, checking magic, kind and version.
    pub fn with_header(bytes: &'a [u8], kind: &[u8; 3]) -> Result<Self> {
        let mut r = Self::new(bytes);
        let mut magic = [0u8; 8];
        r.cur.read_exact(&mut magic).map_err(truncated)?;
        if &magic[..5] != b"KRFWS" {
            return Err(Error::Format("not a krfws model file".into()));
        }
        if &magic[5..] != kind {
            return Err(Error::Format(format!(
                "expected a {} container, found {}",
                String::from_utf8_lossy(kind),
                String::from_utf8_lossy(&magic[5..])
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        Ok(r)
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(truncated)
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("invalid bool byte {v}"))),
        }
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(truncated)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(truncated)
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }

    /// A length prefix, checked against the bytes remaining so corrupt
    /// input cannot trigger huge allocations.
    pub fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem_size) > self.remaining() {
            return Err(Error::Format(format!("sequence length {n} exceeds data")));
        }
        Ok(n)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(truncated)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let mut buf = vec![0u8; n];
        self.cur.read_exact(&mut buf).map_err(truncated)?;
        String::from_utf8(buf).map_err(|_| Error::Format("invalid UTF-8 string".into()))
    }

    pub fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    pub fn finish(self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Error::Format(format!("{n} trailing bytes"))),
        }
    }
}
