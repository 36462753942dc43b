//! Binary layouts shared by corpus, feature and unit files.
//!
//! Frame files (utterance signals and feature archives):
//!
//! ```text
//! "SEAU1" | version u32 | T u32 | D u32 | T*D f32 | T u16 alignment | len u32 | UTF-8 transcript
//! ```
//!
//! `version` records what the frames hold (see [`FeatureKind`](crate::frontend::FeatureKind)).
//! All integers and floats are little-endian.

use std::path::{Path, PathBuf};

use seau_autodiff::Tensor;

use crate::error::{Error, Result};

pub const FRAME_MAGIC: &[u8; 5] = b"SEAU1";
pub const UNIT_MAGIC: &[u8; 8] = b"SEAUUNIT";
pub const CODEBOOK_MAGIC: &[u8; 8] = b"SEAUCODE";

#[derive(Clone, Debug, PartialEq)]
pub struct FrameFile {
    pub version: u32,
    pub frames: Tensor<f32>,
    pub alignment: Vec<u16>,
    pub transcript: String,
}

pub fn encode_frame_file(
    version: u32,
    frames: &Tensor<f32>,
    alignment: &[u16],
    transcript: &str,
) -> Vec<u8> {
    let (t, d) = (frames.rows(), frames.cols());
    let mut out = Vec::with_capacity(17 + 4 * t * d + 2 * t + 4 + transcript.len());
    out.extend_from_slice(FRAME_MAGIC);
    for v in [version, t as u32, d as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in alignment {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out.extend_from_slice(&(transcript.len() as u32).to_le_bytes());
    out.extend_from_slice(transcript.as_bytes());
    out
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    id: &'a str,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], id: &'a str, path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            id,
            path,
        }
    }

    pub(crate) fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Integrity {
            utterance: self.id.to_string(),
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(self.fail(format!("truncated while reading {what}"))),
        }
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(
            n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn u16s(&mut self, n: usize, what: &str) -> Result<Vec<u16>> {
        let raw = self.take(
            n.checked_mul(2).ok_or_else(|| self.fail("size overflow"))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode_frame_file(bytes: &[u8], id: &str, path: &Path) -> Result<FrameFile> {
    let mut c = Cursor::new(bytes, id, path);
    if c.take(5, "magic")? != FRAME_MAGIC {
        return Err(c.fail("bad magic"));
    }
    let version = c.u32("version")?;
    let t = c.u32("frame count")? as usize;
    let d = c.u32("frame dim")? as usize;
    let data = c.f32s(t * d, "frames")?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(c.fail("non-finite frame value"));
    }
    let alignment = c.u16s(t, "alignment")?;
    let len = c.u32("transcript length")? as usize;
    let transcript = std::str::from_utf8(c.take(len, "transcript")?)
        .map_err(|_| c.fail("transcript is not UTF-8"))?
        .to_string();
    c.finish()?;
    let frames = Tensor::new(&[t, d], data).map_err(|e| c.fail(e.to_string()))?;
    Ok(FrameFile {
        version,
        frames,
        alignment,
        transcript,
    })
}

pub fn read_frame_file(path: &Path, id: &str) -> Result<FrameFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::Integrity {
        utterance: id.to_string(),
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    decode_frame_file(&bytes, id, path)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    tmp.as_mut_os_string().push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
