//! `.sdic` dictionary files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SDIC"
//! 4       4     version (u32)
//! 8       4     d_hid (u32)
//! 12      4     d_in (u32)
//! 16      1     flags
//! 17      15    reserved, zero
//! 32      ...   M  (d_hid * d_in f32, row-major)
//!               b  (d_hid f32)
//!               M_d (d_hid * d_in f32)   if flags bit 0 (tied) is clear
//!               mean (d_in f32)          if flags bit 5 is set
//! ```
//!
//! Flags: bit 0 tied, bit 1 direction set, bits 2..=4 direction kind code,
//! bit 5 mean vector appended.

use std::path::Path;

use crate::{Error, Result};

pub const SDIC_MAGIC: [u8; 4] = *b"SDIC";
pub const SDIC_VERSION: u32 = 1;
pub const SDIC_HEADER_LEN: usize = 32;

pub const FLAG_TIED: u8 = 1;
pub const FLAG_DIRECTIONS: u8 = 1 << 1;
const KIND_SHIFT: u8 = 2;
const KIND_MASK: u8 = 0b111 << KIND_SHIFT;
pub const FLAG_MEAN: u8 = 1 << 5;

/// Raw contents of a `.sdic` file, before interpretation as a
/// [`crate::Dictionary`] or [`crate::baselines::DirectionSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct SdicRecord {
    pub d_hid: usize,
    pub d_in: usize,
    pub flags: u8,
    pub m: Vec<f32>,
    pub b: Vec<f32>,
    pub m_d: Option<Vec<f32>>,
    pub mean: Option<Vec<f32>>,
}

impl SdicRecord {
    pub fn tied(&self) -> bool {
        self.flags & FLAG_TIED != 0
    }

    pub fn is_direction_set(&self) -> bool {
        self.flags & FLAG_DIRECTIONS != 0
    }

    pub fn kind_code(&self) -> u8 {
        (self.flags & KIND_MASK) >> KIND_SHIFT
    }

    pub fn direction_flags(kind_code: u8) -> u8 {
        FLAG_DIRECTIONS | ((kind_code << KIND_SHIFT) & KIND_MASK)
    }

    fn validate(&self) -> Result<()> {
        let n = self.d_hid * self.d_in;
        if self.d_hid == 0 || self.d_in == 0 {
            return Err(Error::dim("d_hid and d_in must be >= 1"));
        }
        if self.m.len() != n || self.b.len() != self.d_hid {
            return Err(Error::dim("matrix or bias length disagrees with d_hid/d_in"));
        }
        if self.tied() != self.m_d.is_none() {
            return Err(Error::dim("decoder matrix must be present iff untied"));
        }
        if self.m_d.as_ref().is_some_and(|m| m.len() != n) {
            return Err(Error::dim("decoder matrix length disagrees with d_hid/d_in"));
        }
        if (self.flags & FLAG_MEAN != 0) != self.mean.is_some() {
            return Err(Error::dim("mean vector must be present iff flag bit 5 is set"));
        }
        if self.mean.as_ref().is_some_and(|m| m.len() != self.d_in) {
            return Err(Error::dim("mean vector length disagrees with d_in"));
        }
        Ok(())
    }

    fn payload_values(&self) -> usize {
        let n = self.d_hid * self.d_in;
        n + self.d_hid
            + if self.tied() { 0 } else { n }
            + if self.flags & FLAG_MEAN != 0 { self.d_in } else { 0 }
    }
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::Validation(format!("non-finite dictionary entry {v}")));
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn write_sdic(path: &Path, rec: &SdicRecord) -> Result<()> {
    rec.validate()?;
    let mut buf = Vec::with_capacity(SDIC_HEADER_LEN + rec.payload_values() * 4);
    buf.extend_from_slice(&SDIC_MAGIC);
    buf.extend_from_slice(&SDIC_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rec.d_hid as u32).to_le_bytes());
    buf.extend_from_slice(&(rec.d_in as u32).to_le_bytes());
    buf.push(rec.flags);
    buf.extend_from_slice(&[0u8; 15]);
    push_f32s(&mut buf, &rec.m)?;
    push_f32s(&mut buf, &rec.b)?;
    if let Some(m_d) = &rec.m_d {
        push_f32s(&mut buf, m_d)?;
    }
    if let Some(mean) = &rec.mean {
        push_f32s(&mut buf, mean)?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_sdic(path: &Path) -> Result<SdicRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::Corruption {
        path: path.to_path_buf(),
        reason,
    };
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < SDIC_HEADER_LEN {
        return Err(corrupt(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if bytes[0..4] != SDIC_MAGIC {
        return Err(format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != SDIC_VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let d_hid = u32_at(8) as usize;
    let d_in = u32_at(12) as usize;
    let flags = bytes[16];
    if d_hid == 0 || d_in == 0 {
        return Err(format(format!("degenerate shape {d_hid}x{d_in}")));
    }
    let mut rec = SdicRecord {
        d_hid,
        d_in,
        flags,
        m: Vec::new(),
        b: Vec::new(),
        m_d: None,
        mean: None,
    };
    let expected = SDIC_HEADER_LEN + rec.payload_values() * 4;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "expected {expected} bytes for a {d_hid}x{d_in} dictionary with flags {flags:#04x}, found {}",
            bytes.len()
        )));
    }
    let mut values = bytes[SDIC_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    let mut take = |k: usize| -> Vec<f32> { values.by_ref().take(k).collect() };
    rec.m = take(d_hid * d_in);
    rec.b = take(d_hid);
    if flags & FLAG_TIED == 0 {
        rec.m_d = Some(take(d_hid * d_in));
    }
    if flags & FLAG_MEAN != 0 {
        rec.mean = Some(take(d_in));
    }
    Ok(rec)
}
