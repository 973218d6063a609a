//! Binary cache dumps and JSON-lines neighbor exports.
//!
//! Dump layout, little endian:
//!
//! ```text
//! magic  "ADASIMC1"            8 bytes
//! N d K w epoch                5 × u64
//! normalize_on_insert          u8
//! initialized mask             N × u8
//! rows                         N × d × f64, row-major
//! per image, N times:
//!   row count                  u32
//!   per row: epoch u64, len u32, len × (index u32, value f64)
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::{FeatureCache, SparseSimRow};
use super::window::{SimWindow, WindowedDistribution};
use crate::error::{Error, Result};

const DUMP_MAGIC: &[u8; 8] = b"ADASIMC1";

/// Cache rows plus the per-image similarity windows.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheDump {
    pub cache: FeatureCache,
    pub windows: Vec<SimWindow>,
    pub topk: usize,
    pub window: usize,
    pub epoch: usize,
}

impl CacheDump {
    pub fn write_to(&self, path: &Path) -> Result<()> {
        if self.windows.len() != self.cache.len() {
            return Err(Error::shape("cache dump windows", self.cache.len(), self.windows.len()));
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        out.write_all(DUMP_MAGIC)?;
        for v in [self.cache.len(), self.cache.dim(), self.topk, self.window, self.epoch] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        out.write_all(&[u8::from(self.cache.normalizes_on_insert())])?;
        let mask: Vec<u8> = self.cache.initialized_mask().iter().map(|&b| u8::from(b)).collect();
        out.write_all(&mask)?;
        for v in self.cache.rows_raw() {
            out.write_all(&v.to_le_bytes())?;
        }
        for w in &self.windows {
            out.write_all(&(w.len() as u32).to_le_bytes())?;
            for row in w.rows() {
                out.write_all(&(row.epoch as u64).to_le_bytes())?;
                out.write_all(&(row.len() as u32).to_le_bytes())?;
                for (j, v) in row.iter() {
                    out.write_all(&(j as u32).to_le_bytes())?;
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0, path };
        if r.take(8)? != DUMP_MAGIC {
            return Err(r.fail("missing ADASIMC1 magic"));
        }
        let n = r.u64()? as usize;
        let dim = r.u64()? as usize;
        let topk = r.u64()? as usize;
        let window = r.u64()? as usize;
        let epoch = r.u64()? as usize;
        let normalize = r.take(1)?[0] != 0;
        let initialized: Vec<bool> = r.take(n)?.iter().map(|&b| b != 0).collect();
        let mut rows = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            rows.push(r.f64()?);
        }
        let mut windows = Vec::with_capacity(n);
        for _ in 0..n {
            let mut w = SimWindow::new(window.max(1))?;
            let count = r.u32()? as usize;
            for _ in 0..count {
                let e = r.u64()? as usize;
                let len = r.u32()? as usize;
                let mut row = SparseSimRow::empty(e);
                for _ in 0..len {
                    row.indices.push(r.u32()? as usize);
                    row.values.push(r.f64()?);
                }
                w.push(row).map_err(|e| r.fail(&e.to_string()))?;
            }
            windows.push(w);
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after payload"));
        }
        Ok(Self {
            cache: FeatureCache::from_parts(dim, normalize, rows, initialized),
            windows,
            topk,
            window,
            epoch,
        })
    }

    /// Sampling distribution of image `i`, when its window is filled.
    pub fn distribution(&self, i: usize, temperature: f64) -> Result<WindowedDistribution> {
        let w = self.windows.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            len: self.windows.len(),
        })?;
        WindowedDistribution::from_window(w, temperature)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.fail("truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, message: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            message: format!("{message} (offset {})", self.pos),
        }
    }
}

/// One line of `neighbors.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborRecord {
    pub query_index: usize,
    /// `(index, probability)` by descending probability.
    pub support: Vec<(usize, f64)>,
}

/// Query selection predicates for neighbor dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NeighborFilter {
    /// Keep queries whose most probable neighbor is another image.
    pub first_not_self: bool,
    /// Keep queries whose most probable neighbor has a different label.
    pub first_not_class: bool,
}

/// Ranked supports for `queries`. Queries whose window is not yet filled are
/// skipped; `top_n` truncates each support.
pub fn neighbor_records(
    dump: &CacheDump,
    queries: &[usize],
    temperature: f64,
    top_n: Option<usize>,
    filter: NeighborFilter,
    labels: Option<&[usize]>,
) -> Result<Vec<NeighborRecord>> {
    if filter.first_not_class && labels.is_none() {
        return Err(Error::config("first_not_class", "needs a labeled dataset"));
    }
    let mut out = Vec::new();
    for &q in queries {
        if q >= dump.cache.len() {
            return Err(Error::IndexOutOfRange {
                index: q,
                len: dump.cache.len(),
            });
        }
        let dist = match dump.distribution(q, temperature) {
            Ok(d) => d,
            Err(Error::WindowWarmup { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut ranked = dist.ranked();
        let first = ranked[0].0;
        if filter.first_not_self && first == q {
            continue;
        }
        if let (true, Some(l)) = (filter.first_not_class, labels) {
            if l[first] == l[q] {
                continue;
            }
        }
        if let Some(n) = top_n {
            ranked.truncate(n);
        }
        out.push(NeighborRecord {
            query_index: q,
            support: ranked,
        });
    }
    Ok(out)
}

pub fn write_neighbor_jsonl(records: &[NeighborRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
