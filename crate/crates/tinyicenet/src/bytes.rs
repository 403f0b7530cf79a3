//! Little-endian cursor shared by the binary formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                what,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    pub fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    pub fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(Error::Header(format!("{what}: length overflow")))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Appends the CRC-32 of everything written so far.
pub(crate) fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn expect_magic(r: &mut Reader<'_>, magic: [u8; 4], version: u16) -> Result<()> {
    let found = r.array::<4>("magic")?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic, found });
    }
    let v = r.u16("version")?;
    if v != version {
        return Err(Error::UnsupportedVersion { found: v, supported: version });
    }
    Ok(())
}

/// Checks that `buf` is exactly `body_len` bytes plus a CRC-32 trailer and
/// that the CRC matches. Length is checked first so a short file reports
/// truncation rather than a checksum error.
pub(crate) fn check_sealed(buf: &[u8], body_len: usize) -> Result<()> {
    let want = body_len + 4;
    if buf.len() < want {
        return Err(Error::Truncated {
            what: "payload and checksum",
            needed: want,
            available: buf.len(),
        });
    }
    if buf.len() > want {
        return Err(Error::TrailingBytes { trailing: buf.len() - want });
    }
    let (body, tail) = buf.split_at(body_len);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

/// Checksum error for a complete-looking file whose trailer does not match.
/// Used to report header corruption as corruption rather than as a parse error.
pub(crate) fn crc_error(buf: &[u8]) -> Option<Error> {
    let body_len = buf.len().checked_sub(4)?;
    let (body, tail) = buf.split_at(body_len);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    (stored != computed).then_some(Error::ChecksumMismatch { stored, computed })
}
