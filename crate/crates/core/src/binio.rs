//! Little-endian framing shared by the on-disk artifacts.
//!
//! Every checksummed file is written to memory first and checked as a whole
//! on read, so a failed load never yields a partially decoded value.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).unwrap();
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).unwrap();
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).unwrap();
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Appends a CRC32 of everything written so far.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Checks magic and version. With `crc` set, the trailing checksum is
    /// verified and stripped before any field is decoded.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 4],
        version: u32,
        crc: bool,
        what: &'static str,
    ) -> Result<Self> {
        if bytes.len() < 8 && bytes.len() >= 4 && &bytes[..4] == magic {
            return Err(Error::Corrupt(format!("{what}: file truncated")));
        }
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "{what}: bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if found != version {
            return Err(Error::Format(format!(
                "{what}: unsupported version {found}, expected {version}"
            )));
        }
        let body = if crc {
            if bytes.len() < 12 {
                return Err(Error::Corrupt(format!("{what}: file truncated")));
            }
            let (body, tail) = bytes.split_at(bytes.len() - 4);
            let stored = u32::from_le_bytes(tail.try_into().unwrap());
            if crc32fast::hash(body) != stored {
                return Err(Error::Corrupt(format!("{what}: checksum mismatch")));
            }
            body
        } else {
            bytes
        };
        let mut r = Reader {
            cur: Cursor::new(body),
            what,
        };
        r.cur.set_position(8);
        Ok(r)
    }

    fn truncated(&self) -> Error {
        Error::Corrupt(format!("{}: file truncated", self.what))
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(|_| self.truncated())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.remaining() < n.saturating_mul(8) {
            return Err(self.truncated());
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if self.remaining() < len {
            return Err(self.truncated());
        }
        let mut bytes = vec![0u8; len];
        self.cur.read_exact(&mut bytes).map_err(|_| self.truncated())?;
        String::from_utf8(bytes)
            .map_err(|_| Error::Corrupt(format!("{}: invalid UTF-8 string", self.what)))
    }

    pub fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    /// Fails unless every byte has been consumed.
    pub fn done(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Corrupt(format!(
                "{}: {} trailing bytes",
                self.what,
                self.remaining()
            )));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temp file and renames it into place.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
