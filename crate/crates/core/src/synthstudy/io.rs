//! `PACQ` dataset files.
//!
//! Layout (little-endian): magic, u16 version, u32 N, u32 D, u32 K,
//! u64 n_studies, length-prefixed JSON config echo, u32 CRC32, then
//! `n_studies` fixed-size records of
//! `u64 id | f64 y_as_value | u32 y_as_class | f64 y_ef | N f64 qualities | N*D f64 embeddings`.
//! The CRC covers every byte of the file except the CRC field itself.

use std::path::Path;

use super::{GeneratorConfig, StudyRecord};
use crate::binfmt::{ByteReader, ByteWriter};
use crate::error::{Error, FormatError, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"PACQ";
pub const DATASET_VERSION: u16 = 1;

/// Dataset contents plus the metadata echoed in its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_views: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub config: GeneratorConfig,
    pub studies: Vec<StudyRecord>,
}

impl Dataset {
    pub fn new(config: GeneratorConfig, studies: Vec<StudyRecord>) -> Self {
        Self { n_views: config.n_views, embed_dim: config.embed_dim, n_classes: config.n_as_classes(), config, studies }
    }
}

pub fn write_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let (n, d) = (data.n_views, data.embed_dim);
    if let Some(s) = data.studies.iter().find(|s| s.n_views != n || s.embed_dim != d) {
        return Err(Error::Config(format!(
            "study {} is {}x{}, header says {n}x{d}",
            s.study_id, s.n_views, s.embed_dim
        )));
    }
    let mut w = ByteWriter::new();
    w.bytes(&DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(n as u32);
    w.u32(d as u32);
    w.u32(data.n_classes as u32);
    w.u64(data.studies.len() as u64);
    w.blob(&serde_json::to_vec(&data.config).expect("config serialises"));
    let crc_pos = w.buf.len();
    w.u32(0);
    for s in &data.studies {
        w.u64(s.study_id);
        w.f64(s.y_as_value);
        w.u32(s.y_as_class as u32);
        w.f64(s.y_ef);
        w.f64s(&s.qualities);
        w.f64s(&s.embeddings);
    }
    let crc = checksum(&w.buf, crc_pos);
    w.buf[crc_pos..crc_pos + 4].copy_from_slice(&crc.to_le_bytes());
    Ok(w.buf)
}

fn checksum(buf: &[u8], crc_pos: usize) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&buf[..crc_pos]);
    h.update(&buf[crc_pos + 4..]);
    h.finalize()
}

/// Decodes a dataset; on any error nothing is returned.
pub fn read_dataset(bytes: &[u8]) -> std::result::Result<Dataset, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let count = r.u64()? as usize;
    let config: GeneratorConfig =
        serde_json::from_slice(r.blob()?).map_err(|e| FormatError::Malformed(format!("config echo: {e}")))?;
    let crc_pos = r.pos();
    let stored = r.u32()?;
    let record = 8 + 8 + 4 + 8 + 8 * n * (d + 1);
    let needed = count.checked_mul(record).ok_or_else(|| FormatError::Malformed("record count overflow".into()))?;
    if r.remaining() < needed {
        return Err(FormatError::Truncated { offset: r.pos(), needed });
    }
    if r.remaining() > needed {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.remaining() - needed)));
    }
    let computed = checksum(bytes, crc_pos);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    let mut studies = Vec::with_capacity(count);
    for _ in 0..count {
        let study_id = r.u64()?;
        let y_as_value = r.f64()?;
        let y_as_class = r.u32()? as usize;
        let y_ef = r.f64()?;
        let qualities = r.f64s(n)?;
        let embeddings = r.f64s(n * d)?;
        if y_as_class >= k {
            return Err(FormatError::Malformed(format!("study {study_id}: class {y_as_class} >= K={k}")));
        }
        studies.push(StudyRecord {
            study_id,
            n_views: n,
            embed_dim: d,
            embeddings,
            y_as_value,
            y_as_class,
            y_ef,
            qualities,
        });
    }
    Ok(Dataset { n_views: n, embed_dim: d, n_classes: k, config, studies })
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_dataset(data)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    Ok(read_dataset(&bytes)?)
}
