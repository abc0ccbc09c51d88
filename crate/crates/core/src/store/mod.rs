//! On-disk formats and in-memory activation datasets.
//!
//! `.sact` layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SACT"
//! 4       4     version (u32, currently 1)
//! 8       4     d_in (u32, >= 1)
//! 12      8     count (u64)
//! 20      1     dtype (u8, 0 = f32 LE)
//! 21      15    reserved, zero
//! 36      ...   count * d_in f32 values, row-major
//! ```
//!
//! A JSON sidecar `<file>.meta.json` carries [`DatasetMeta`].

mod sact;
mod sdic;
mod split;
mod stats;
mod tokens;

use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use sact::{read_dataset, read_header, write_dataset, BatchReader, DatasetWriter};
pub use sdic::{
    read_sdic, write_sdic, SdicRecord, FLAG_DIRECTIONS, FLAG_MEAN, FLAG_TIED, SDIC_HEADER_LEN, SDIC_MAGIC,
    SDIC_VERSION,
};
pub use split::shuffle_split;
pub use stats::DimStats;
pub use tokens::{read_token_stream, read_vocab, write_token_stream, write_vocab, TokenRecord};

pub const SACT_MAGIC: [u8; 4] = *b"SACT";
pub const SACT_VERSION: u32 = 1;
pub const SACT_HEADER_LEN: usize = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32LE = 0,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub d_in: u32,
    pub count: u64,
    pub dtype: Dtype,
}

impl DatasetHeader {
    pub fn new(d_in: usize, count: u64) -> Self {
        DatasetHeader {
            version: SACT_VERSION,
            d_in: d_in as u32,
            count,
            dtype: Dtype::F32LE,
        }
    }

    pub fn to_bytes(&self) -> [u8; SACT_HEADER_LEN] {
        let mut buf = [0u8; SACT_HEADER_LEN];
        buf[0..4].copy_from_slice(&SACT_MAGIC);
        buf[4..8].copy_from_slice(&self.version.to_le_bytes());
        buf[8..12].copy_from_slice(&self.d_in.to_le_bytes());
        buf[12..20].copy_from_slice(&self.count.to_le_bytes());
        buf[20] = self.dtype as u8;
        buf
    }

    /// Parses and validates a header. Length checks against the file happen
    /// in the reader.
    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        if buf.len() < SACT_HEADER_LEN {
            return Err(Error::Corruption {
                path: path.to_path_buf(),
                reason: format!("header is {} bytes, expected {SACT_HEADER_LEN}", buf.len()),
            });
        }
        if buf[0..4] != SACT_MAGIC {
            return Err(format(format!("bad magic {:?}", &buf[0..4])));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != SACT_VERSION {
            return Err(format(format!("unsupported version {version}")));
        }
        let d_in = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if d_in == 0 {
            return Err(format("d_in is zero".into()));
        }
        let count = u64::from_le_bytes(buf[12..20].try_into().unwrap());
        let dtype = match buf[20] {
            0 => Dtype::F32LE,
            other => return Err(format(format!("unsupported dtype code {other}"))),
        };
        Ok(DatasetHeader {
            version,
            d_in,
            count,
            dtype,
        })
    }

    pub fn payload_len(&self) -> u64 {
        self.count * self.d_in as u64 * 4
    }

    pub fn file_len(&self) -> u64 {
        SACT_HEADER_LEN as u64 + self.payload_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HookPoint {
    Residual,
    Mlp,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub model_name: String,
    pub layer_index: u32,
    pub hook_point: HookPoint,
    pub source_corpus: String,
    pub created_by: String,
}

impl DatasetMeta {
    pub fn new(created_by: impl Into<String>, hook_point: HookPoint) -> Self {
        DatasetMeta {
            model_name: String::new(),
            layer_index: 0,
            hook_point,
            source_corpus: String::new(),
            created_by: created_by.into(),
        }
    }
}

/// Path of the JSON sidecar for a `.sact` file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let side = meta_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: side, source })
}

pub fn write_meta(path: &Path, meta: &DatasetMeta) -> Result<()> {
    let side = meta_path(path);
    let text = serde_json::to_string_pretty(meta).map_err(|source| Error::Json {
        path: side.clone(),
        source,
    })?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

/// An in-memory activation dataset: `count` rows of `d_in` f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDataset {
    rows: Array2<f32>,
}

impl ActivationDataset {
    pub fn new(rows: Array2<f32>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(Error::dim("dataset rows must have d_in >= 1"));
        }
        if let Some(bad) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at row {}, column {}",
                bad / rows.ncols(),
                bad % rows.ncols()
            )));
        }
        Ok(ActivationDataset {
            rows: rows.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows<R: AsRef<[f32]>>(d_in: usize, rows: &[R]) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * d_in);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d_in {
                return Err(Error::dim(format!(
                    "row {i} has length {}, expected {d_in}",
                    r.len()
                )));
            }
            flat.extend_from_slice(r);
        }
        Self::new(Array2::from_shape_vec((rows.len(), d_in), flat).expect("shape checked"))
    }

    pub fn d_in(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.rows.row(i)
    }

    pub fn as_slice(&self) -> &[f32] {
        self.rows.as_slice().expect("standard layout")
    }

    pub fn into_inner(self) -> Array2<f32> {
        self.rows
    }

    /// Consecutive row blocks of at most `batch_size` rows.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = ArrayView2<'_, f32>> {
        self.rows.axis_chunks_iter(Axis(0), batch_size.max(1))
    }

    pub fn select_rows(&self, idx: &[usize]) -> ActivationDataset {
        ActivationDataset {
            rows: self.rows.select(Axis(0), idx),
        }
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader::new(self.d_in(), self.len() as u64)
    }
}
