//! UMCF binary feature containers.
//!
//! Layout (little-endian): magic `UMCF`, version `u32 = 1`, modality code
//! `u8`, sample count `u32`, sequence length `u32`, dim `u32`, then for each
//! sample a `u32` true length followed by `seq_len × dim` `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Result, UmcError};

pub const MAGIC: &[u8; 4] = b"UMCF";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Text = 0,
    Audio = 1,
    Video = 2,
    Fused = 3,
}

impl Modality {
    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Modality::Text,
            1 => Modality::Audio,
            2 => Modality::Video,
            3 => Modality::Fused,
            other => {
                return Err(UmcError::BadContainer(format!(
                    "unknown modality code {other}"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Video => "video",
            Modality::Fused => "fused",
        }
    }
}

/// In-memory form of one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub modality: Modality,
    pub seq_len: usize,
    pub dim: usize,
    /// Per-sample count of valid leading frames.
    pub lens: Vec<u32>,
    /// `count × seq_len × dim` values, sample-major.
    pub values: Vec<f32>,
}

impl Container {
    pub fn count(&self) -> usize {
        self.lens.len()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let stride = self.seq_len * self.dim;
        &self.values[i * stride..(i + 1) * stride]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.lens.len() * 4 + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.modality as u8);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.seq_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for i in 0..self.count() {
            out.extend_from_slice(&self.lens[i].to_le_bytes());
            for v in self.sample(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(UmcError::BadContainer("truncated header".into()));
        }
        if &bytes[..4] != MAGIC {
            return Err(UmcError::BadContainer("bad magic".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(UmcError::BadContainer(format!(
                "unsupported version {version}"
            )));
        }
        let modality = Modality::from_code(bytes[8])?;
        let count = u32_at(9) as usize;
        let seq_len = u32_at(13) as usize;
        let dim = u32_at(17) as usize;
        let stride = seq_len * dim;
        let expected = HEADER_LEN + count * (4 + stride * 4);
        if bytes.len() != expected {
            return Err(UmcError::BadContainer(format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut lens = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count * stride);
        let mut off = HEADER_LEN;
        for i in 0..count {
            let len = u32_at(off);
            if len as usize > seq_len {
                return Err(UmcError::CorruptData(format!(
                    "{} sample {i}: true length {len} exceeds sequence length {seq_len}",
                    modality.name()
                )));
            }
            lens.push(len);
            off += 4;
            for _ in 0..stride {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(UmcError::CorruptData(format!(
                        "{} sample {i}: non-finite value",
                        modality.name()
                    )));
                }
                values.push(v);
                off += 4;
            }
        }
        Ok(Self {
            modality,
            seq_len,
            dim,
            lens,
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
