//! Little-endian byte encoding shared by the dataset and checkpoint files.

use crate::error::FormatError;

#[derive(Default)]
pub(crate) struct ByteWriter {
    pub buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
    /// Length-prefixed (u32) byte string.
    pub fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }
}

pub(crate) struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }
    pub fn pos(&self) -> usize {
        self.pos
    }
    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated { offset: self.pos, needed: n });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }
    pub fn version(&mut self, expected: u16) -> Result<(), FormatError> {
        let found = self.u16()?;
        if found != expected {
            return Err(FormatError::VersionMismatch { found, expected });
        }
        Ok(())
    }
    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| FormatError::Malformed("length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
    pub fn blob(&mut self) -> Result<&'a [u8], FormatError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

/// Checkpoint layout: magic, version, config echo (JSON blob), weight count,
/// weights, then a CRC32 of every preceding byte.
pub(crate) fn encode_checkpoint(magic: [u8; 4], version: u16, config_json: &[u8], weights: &[f64]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(&magic);
    w.u16(version);
    w.blob(config_json);
    w.u64(weights.len() as u64);
    w.f64s(weights);
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub(crate) fn decode_checkpoint(magic: [u8; 4], version: u16, data: &[u8]) -> Result<(Vec<u8>, Vec<f64>), FormatError> {
    let mut r = ByteReader::new(data);
    r.magic(magic)?;
    r.version(version)?;
    let cfg = r.blob()?.to_vec();
    let n = r.u64()? as usize;
    let weights = r.f64s(n)?;
    let body_end = r.pos();
    let stored = r.u32()?;
    let computed = crc32fast::hash(&data[..body_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    if r.remaining() != 0 {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok((cfg, weights))
}
