use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{write_meta, ActivationDataset, DatasetHeader, DatasetMeta, SACT_HEADER_LEN};
use crate::{Error, Result};

/// Streaming `.sact` writer. The row count in the header is patched in
/// [`DatasetWriter::finish`].
pub struct DatasetWriter {
    path: PathBuf,
    out: BufWriter<File>,
    d_in: usize,
    count: u64,
    meta: DatasetMeta,
}

impl DatasetWriter {
    pub fn create(path: &Path, d_in: usize, meta: DatasetMeta) -> Result<Self> {
        if d_in == 0 {
            return Err(Error::dim("d_in must be >= 1"));
        }
        if d_in > u32::MAX as usize {
            return Err(Error::dim(format!("d_in {d_in} does not fit in u32")));
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&DatasetHeader::new(d_in, 0).to_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(DatasetWriter {
            path: path.to_path_buf(),
            out,
            d_in,
            count: 0,
            meta,
        })
    }

    pub fn push(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.d_in {
            return Err(Error::dim(format!(
                "row {} has length {}, expected {}",
                self.count,
                row.len(),
                self.d_in
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, column {j}",
                row[j], self.count
            )));
        }
        let mut buf = Vec::with_capacity(row.len() * 4);
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.out
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<DatasetHeader> {
        let header = DatasetHeader::new(self.d_in, self.count);
        let io = |e| Error::io(&self.path, e);
        self.out.flush().map_err(io)?;
        let mut file = self.out.into_inner().map_err(|e| io(e.into_error()))?;
        file.seek(SeekFrom::Start(12)).map_err(io)?;
        file.write_all(&self.count.to_le_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        write_meta(&self.path, &self.meta)?;
        Ok(header)
    }
}

/// Writes `rows` (each of length `d_in`) plus the metadata sidecar.
///
/// Nothing is left at `path` in a valid state if a row is ragged or holds a
/// non-finite value; the error names the offending row.
pub fn write_dataset<R: AsRef<[f32]>>(
    path: &Path,
    d_in: usize,
    rows: &[R],
    meta: &DatasetMeta,
) -> Result<DatasetHeader> {
    let mut w = DatasetWriter::create(path, d_in, meta.clone())?;
    for r in rows {
        if let Err(e) = w.push(r.as_ref()) {
            drop(w);
            let _ = std::fs::remove_file(path);
            return Err(e);
        }
    }
    w.finish()
}

impl ActivationDataset {
    pub fn write(&self, path: &Path, meta: &DatasetMeta) -> Result<DatasetHeader> {
        let mut w = DatasetWriter::create(path, self.d_in(), meta.clone())?;
        for row in self.view().rows() {
            w.push(row.as_slice().expect("standard layout"))?;
        }
        w.finish()
    }
}

fn open_validated(path: &Path) -> Result<(BufReader<File>, DatasetHeader)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::new(file);
    let mut buf = [0u8; SACT_HEADER_LEN];
    if len < SACT_HEADER_LEN as u64 {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!("file is {len} bytes, shorter than the header"),
        });
    }
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let header = DatasetHeader::from_bytes(&buf, path)?;
    if header.file_len() != len {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            reason: format!(
                "header declares {} rows of {} values ({} bytes) but file is {len} bytes",
                header.count,
                header.d_in,
                header.file_len()
            ),
        });
    }
    Ok((reader, header))
}

pub fn read_header(path: &Path) -> Result<DatasetHeader> {
    open_validated(path).map(|(_, h)| h)
}

/// Streams a `.sact` file in batches of at most `batch_size` rows. Memory use
/// is one batch.
pub struct BatchReader {
    path: PathBuf,
    reader: BufReader<File>,
    header: DatasetHeader,
    batch_size: usize,
    remaining: u64,
    buf: Vec<u8>,
}

impl BatchReader {
    pub fn open(path: &Path, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        let (reader, header) = open_validated(path)?;
        Ok(BatchReader {
            path: path.to_path_buf(),
            reader,
            header,
            batch_size,
            remaining: header.count,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }
}

impl Iterator for BatchReader {
    type Item = Result<Array2<f32>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let rows = (self.batch_size as u64).min(self.remaining) as usize;
        let d = self.header.d_in as usize;
        self.buf.resize(rows * d * 4, 0);
        if let Err(e) = self.reader.read_exact(&mut self.buf) {
            self.remaining = 0;
            return Some(Err(Error::io(&self.path, e)));
        }
        self.remaining -= rows as u64;
        let values: Vec<f32> = self
            .buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Some(Ok(Array2::from_shape_vec((rows, d), values).expect("sized")))
    }
}

/// Reads a whole `.sact` file into memory.
pub fn read_dataset(path: &Path) -> Result<ActivationDataset> {
    let reader = BatchReader::open(path, 65_536)?;
    let d = reader.header().d_in as usize;
    let n = reader.header().count as usize;
    let mut flat = Vec::with_capacity(n * d);
    for batch in reader {
        flat.extend(batch?.iter());
    }
    // Rows were validated when written; re-check so foreign producers get
    // the same guarantee.
    ActivationDataset::new(Array2::from_shape_vec((n, d), flat).expect("sized"))
}
