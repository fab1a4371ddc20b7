//! On-disk activation datasets.
//!
//! A dataset is a pair of files sharing a prefix:
//!
//! * `<name>.actv`: a 20-byte header followed by a row-major matrix of
//!   little-endian `f32`:
//!
//!   | offset | size | field                  |
//!   |--------|------|------------------------|
//!   | 0      | 4    | magic `ACTV`           |
//!   | 4      | 4    | `u32` version (= 1)    |
//!   | 8      | 4    | `u32` dim              |
//!   | 12     | 8    | `u64` n_rows           |
//!   | 20     | ...  | `n_rows * dim` floats  |
//!
//! * `<name>.meta.jsonl`: one JSON object per row, line `i` describing row `i`.
//!
//! Rows are read through a memory map.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use memmap2::Mmap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const MAGIC: [u8; 4] = *b"ACTV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Plausible,
    Error,
    Unlabeled,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Plausible => "plausible",
            Label::Error => "error",
            Label::Unlabeled => "unlabeled",
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plausible" => Ok(Label::Plausible),
            "error" => Ok(Label::Error),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(Error::Config(format!("unknown label {other:?}"))),
        }
    }
}

/// Per-row metadata. `image` optionally points at the image file the row was
/// extracted from; when absent the id is used as the image name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub id: String,
    pub label: Label,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

impl RowMeta {
    pub fn new(id: impl Into<String>, label: Label) -> Self {
        RowMeta {
            id: id.into(),
            label,
            caption: String::new(),
            source: String::new(),
            image: None,
        }
    }

    pub fn with_caption(mut self, caption: impl Into<String>) -> Self {
        self.caption = caption.into();
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// Read access to a matrix of `f32` rows.
pub trait RowSource: Sync {
    fn dim(&self) -> usize;
    fn n_rows(&self) -> usize;
    /// Copies row `i` into `out`, which must have length `dim()`.
    fn row_into(&self, i: usize, out: &mut [f32]);

    fn row(&self, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; self.dim()];
        self.row_into(i, &mut v);
        v
    }
}

/// An in-memory row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseRows {
    dim: usize,
    data: Vec<f32>,
}

impl DenseRows {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(DenseRows { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        DenseRows::new(dim, data)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

impl RowSource for DenseRows {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    fn row_into(&self, i: usize, out: &mut [f32]) {
        out.copy_from_slice(self.row_slice(i));
    }
}

/// Paths of the `.actv` / `.meta.jsonl` pair for a prefix such as `out/hidden`.
pub fn dataset_paths(prefix: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let prefix = prefix.as_ref();
    let name = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let data = prefix.with_file_name(format!("{name}.actv"));
    let meta = prefix.with_file_name(format!("{name}.meta.jsonl"));
    (data, meta)
}

/// A memory-mapped dataset opened by [`read_dataset`].
pub struct EmbeddingDataset {
    dim: usize,
    n_rows: usize,
    data_path: PathBuf,
    meta_path: PathBuf,
    map: Mmap,
    meta: Vec<RowMeta>,
}

impl fmt::Debug for EmbeddingDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EmbeddingDataset")
            .field("dim", &self.dim)
            .field("n_rows", &self.n_rows)
            .field("data_path", &self.data_path)
            .field("meta_path", &self.meta_path)
            .finish()
    }
}

impl EmbeddingDataset {
    pub fn open(prefix: impl AsRef<Path>) -> Result<Self> {
        let (d, m) = dataset_paths(prefix);
        read_dataset(d, m)
    }

    pub fn data_path(&self) -> &Path {
        &self.data_path
    }

    pub fn meta_path(&self) -> &Path {
        &self.meta_path
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn labels(&self) -> Vec<Label> {
        self.meta.iter().map(|m| m.label).collect()
    }

    pub fn to_dense(&self) -> DenseRows {
        let mut data = vec![0.0f32; self.n_rows * self.dim];
        decode_f32(&self.map[HEADER_LEN..], &mut data);
        DenseRows {
            dim: self.dim,
            data,
        }
    }

    pub fn batches(&self, batch_size: usize, seed: u64, shuffle: bool) -> Batches {
        batch_iter(self.n_rows, batch_size, seed, shuffle)
    }
}

impl RowSource for EmbeddingDataset {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn row_into(&self, i: usize, out: &mut [f32]) {
        assert!(i < self.n_rows, "row {i} out of range ({})", self.n_rows);
        let start = HEADER_LEN + i * self.dim * 4;
        decode_f32(&self.map[start..start + self.dim * 4], out);
    }
}

fn decode_f32(bytes: &[u8], out: &mut [f32]) {
    for (o, c) in out.iter_mut().zip(bytes.chunks_exact(4)) {
        *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
}

/// Writes a dataset pair and reopens it.
///
/// Rows are validated as they stream in; on error both files are removed.
pub fn write_dataset<I, V>(
    data_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
    dim: usize,
    rows: I,
) -> Result<EmbeddingDataset>
where
    I: IntoIterator<Item = (V, RowMeta)>,
    V: AsRef<[f32]>,
{
    let data_path = data_path.as_ref();
    let meta_path = meta_path.as_ref();
    if dim == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    let dim_u32 =
        u32::try_from(dim).map_err(|_| Error::Config(format!("dim {dim} exceeds u32")))?;
    match write_pair(data_path, meta_path, dim, dim_u32, rows) {
        Ok(()) => read_dataset(data_path, meta_path),
        Err(e) => {
            let _ = std::fs::remove_file(data_path);
            let _ = std::fs::remove_file(meta_path);
            Err(e)
        }
    }
}

/// [`write_dataset`] keyed by prefix.
pub fn write_dataset_prefix<I, V>(
    prefix: impl AsRef<Path>,
    dim: usize,
    rows: I,
) -> Result<EmbeddingDataset>
where
    I: IntoIterator<Item = (V, RowMeta)>,
    V: AsRef<[f32]>,
{
    let (d, m) = dataset_paths(prefix);
    write_dataset(d, m, dim, rows)
}

fn write_pair<I, V>(data_path: &Path, meta_path: &Path, dim: usize, dim_u32: u32, rows: I) -> Result<()>
where
    I: IntoIterator<Item = (V, RowMeta)>,
    V: AsRef<[f32]>,
{
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| Error::io(p.clone(), e)
    };
    let data_file = File::create(data_path).map_err(io(data_path))?;
    let meta_file = File::create(meta_path).map_err(io(meta_path))?;
    let mut data = BufWriter::new(data_file);
    let mut meta = BufWriter::new(meta_file);

    data.write_all(&MAGIC).map_err(io(data_path))?;
    data.write_all(&VERSION.to_le_bytes()).map_err(io(data_path))?;
    data.write_all(&dim_u32.to_le_bytes()).map_err(io(data_path))?;
    data.write_all(&0u64.to_le_bytes()).map_err(io(data_path))?;

    let mut seen = HashSet::new();
    let mut n_rows: u64 = 0;
    for (row, (vector, m)) in rows.into_iter().enumerate() {
        let vector = vector.as_ref();
        if vector.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: vector.len(),
            });
        }
        if let Some(col) = vector.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        if m.id.is_empty() {
            return Err(Error::Metadata {
                line: row + 1,
                msg: "empty id".into(),
            });
        }
        if !seen.insert(m.id.clone()) {
            return Err(Error::Metadata {
                line: row + 1,
                msg: format!("duplicate id {:?}", m.id),
            });
        }
        for v in vector {
            data.write_all(&v.to_le_bytes()).map_err(io(data_path))?;
        }
        serde_json::to_writer(&mut meta, &m)?;
        meta.write_all(b"\n").map_err(io(meta_path))?;
        n_rows += 1;
    }

    let mut data_file = data.into_inner().map_err(|e| Error::io(data_path, e.into_error()))?;
    data_file.seek(SeekFrom::Start(12)).map_err(io(data_path))?;
    data_file.write_all(&n_rows.to_le_bytes()).map_err(io(data_path))?;
    data_file.sync_all().map_err(io(data_path))?;
    meta.flush().map_err(io(meta_path))?;
    Ok(())
}

/// Opens and validates a dataset pair.
pub fn read_dataset(data_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let data_path = data_path.as_ref().to_path_buf();
    let meta_path = meta_path.as_ref().to_path_buf();

    let mut file = File::open(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut header = [0u8; HEADER_LEN];
    let file_len = file.metadata().map_err(|e| Error::io(&data_path, e))?.len();
    if file_len < HEADER_LEN as u64 {
        return Err(Error::RowCount(format!(
            "file is {file_len} bytes, shorter than the {HEADER_LEN}-byte header"
        )));
    }
    file.read_exact(&mut header).map_err(|e| Error::io(&data_path, e))?;
    let found: [u8; 4] = header[0..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n_rows = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::Config("stored dim is zero".into()));
    }
    let expected_len = (n_rows as u128) * (dim as u128) * 4 + HEADER_LEN as u128;
    if expected_len != file_len as u128 {
        return Err(Error::RowCount(format!(
            "header declares {n_rows} rows of dim {dim} ({expected_len} bytes) but file has {file_len} bytes"
        )));
    }
    let n_rows = n_rows as usize;

    // SAFETY: the file is opened read-only and datasets are immutable once
    // written; concurrent writers are not supported.
    let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(&data_path, e))?;

    let meta_file = File::open(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut meta = Vec::with_capacity(n_rows);
    let mut seen = HashSet::with_capacity(n_rows);
    for (i, line) in BufReader::new(meta_file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&meta_path, e))?;
        let m: RowMeta = serde_json::from_str(&line).map_err(|e| Error::Metadata {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if m.id.is_empty() || !seen.insert(m.id.clone()) {
            return Err(Error::Metadata {
                line: i + 1,
                msg: format!("empty or duplicate id {:?}", m.id),
            });
        }
        meta.push(m);
    }
    if meta.len() != n_rows {
        return Err(Error::RowCount(format!(
            "matrix has {n_rows} rows but metadata has {} lines",
            meta.len()
        )));
    }

    let ds = EmbeddingDataset {
        dim,
        n_rows,
        data_path,
        meta_path,
        map,
        meta,
    };
    if let Some((row, col)) = first_non_finite(&ds) {
        return Err(Error::NonFinite { row, col });
    }
    Ok(ds)
}

fn first_non_finite(ds: &EmbeddingDataset) -> Option<(usize, usize)> {
    ds.map[HEADER_LEN..]
        .chunks_exact(4)
        .position(|c| !f32::from_le_bytes([c[0], c[1], c[2], c[3]]).is_finite())
        .map(|p| (p / ds.dim, p % ds.dim))
}

/// Row-index batches over one epoch.
#[derive(Clone, Debug)]
pub struct Batches {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let b = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(b)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.order.len() - self.pos).div_ceil(self.batch_size);
        (left, Some(left))
    }
}

impl ExactSizeIterator for Batches {}

/// Splits `0..n_rows` into batches; with `shuffle` the order is a permutation
/// determined by `seed` alone. The last batch may be short.
///
/// # Panics
///
/// Panics if `batch_size` is zero.
pub fn batch_iter(n_rows: usize, batch_size: usize, seed: u64, shuffle: bool) -> Batches {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..n_rows).collect();
    if shuffle {
        let mut r = rng::rng(seed, 0, 0);
        order.shuffle(&mut r);
    }
    Batches {
        order,
        batch_size,
        pos: 0,
    }
}
