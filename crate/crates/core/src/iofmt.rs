//! Binary tensor container, line-delimited JSON corpus ingestion and report emission.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       4         magic  b"PRNT"
//! 4       1         version (1)
//! 5       1         dtype   (1 = f32)
//! 6       1         ndim
//! 7       1         reserved (0)
//! 8       8*ndim    extents, u64 each
//! ...     4*numel   row-major f32 payload
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PRNT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
const HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:02x?}, expected \"PRNT\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("reserved header byte is {0}, expected 0")]
    ReservedByte(u8),
    #[error("truncated header: need {needed} bytes, have {available}")]
    TruncatedHeader { needed: usize, available: usize },
    #[error("truncated payload: dims require {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("extent product overflows")]
    ExtentOverflow,
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("data length {len} does not match dims {dims:?}")]
    ShapeMismatch { dims: Vec<usize>, len: usize },
    #[error("too many dimensions ({0}, max 255)")]
    TooManyDims(usize),
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate document id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("{path}: {error}")]
    Io { path: PathBuf, error: io::Error },
}

impl FormatError {
    pub(crate) fn io(path: &Path, error: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            error,
        }
    }
}

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, FormatError> {
        let numel = checked_numel(&dims)?;
        if numel != data.len() {
            return Err(FormatError::ShapeMismatch {
                dims,
                len: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    /// Builds a rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, FormatError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(FormatError::ShapeMismatch {
                    dims: vec![rows.len(), cols],
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// `(rows, cols)` for rank-2 tensors.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FormatError> {
        if self.dims.len() > u8::MAX as usize {
            return Err(FormatError::TooManyDims(self.dims.len()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F32);
        out.push(self.dims.len() as u8);
        out.push(0);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(FormatError::BadMagic {
                    found: bytes[..4].try_into().unwrap(),
                });
            }
            return Err(FormatError::TruncatedHeader {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic });
        }
        if bytes[4] != VERSION {
            return Err(FormatError::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(FormatError::UnsupportedDtype(bytes[5]));
        }
        let ndim = bytes[6] as usize;
        if bytes[7] != 0 {
            return Err(FormatError::ReservedByte(bytes[7]));
        }
        let dims_end = HEADER_LEN + 8 * ndim;
        if bytes.len() < dims_end {
            return Err(FormatError::TruncatedHeader {
                needed: dims_end,
                available: bytes.len(),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for chunk in bytes[HEADER_LEN..dims_end].chunks_exact(8) {
            let d = u64::from_le_bytes(chunk.try_into().unwrap());
            dims.push(usize::try_from(d).map_err(|_| FormatError::ExtentOverflow)?);
        }
        let numel = checked_numel(&dims)?;
        let expected = numel.checked_mul(4).ok_or(FormatError::ExtentOverflow)?;
        let payload = &bytes[dims_end..];
        if payload.len() < expected {
            return Err(FormatError::TruncatedPayload {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(FormatError::TrailingBytes {
                extra: payload.len() - expected,
            });
        }
        let mut data = Vec::with_capacity(numel);
        for (index, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite { index });
            }
            data.push(v);
        }
        Ok(Self { dims, data })
    }
}

fn checked_numel(dims: &[usize]) -> Result<usize, FormatError> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(FormatError::ExtentOverflow)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorF32, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    TensorF32::from_bytes(&bytes)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &TensorF32) -> Result<(), FormatError> {
    let path = path.as_ref();
    let bytes = t.to_bytes()?;
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

/// One labeled source text (a tweet or a review).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
            group: None,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Parses a single corpus line. `line` is 1-based and only used for error messages.
pub fn parse_document(raw: &str, line: usize) -> Result<Document, FormatError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| FormatError::MalformedLine {
            line,
            message: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| FormatError::MalformedLine {
        line,
        message: "expected a JSON object".into(),
    })?;
    let field = |name: &'static str| -> Result<String, FormatError> {
        match obj.get(name) {
            None | Some(serde_json::Value::Null) => {
                Err(FormatError::MissingField { line, field: name })
            }
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(FormatError::MalformedLine {
                line,
                message: format!("field `{name}` must be a string"),
            }),
        }
    };
    let id = field("id")?;
    if id.is_empty() {
        return Err(FormatError::MalformedLine {
            line,
            message: "empty id".into(),
        });
    }
    let text = field("text")?;
    let label = field("label")?;
    let group = match obj.get("group") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(FormatError::MalformedLine {
                line,
                message: "field `group` must be a string".into(),
            })
        }
    };
    Ok(Document {
        id,
        text,
        label,
        group,
    })
}

/// Reads documents from any line-delimited JSON source. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Document>, FormatError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = line.map_err(|e| FormatError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.trim().is_empty() {
            continue;
        }
        let doc = parse_document(&raw, line_no)?;
        if !seen.insert(doc.id.clone()) {
            return Err(FormatError::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, FormatError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), FormatError> {
    write_jsonl(path, docs)
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| FormatError::MalformedLine {
            line: 0,
            message: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    fs::write(path, buf).map_err(|e| FormatError::io(path, e))
}

/// Parses every nonblank line of `path` as `T`.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, FormatError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let raw = line.map_err(|e| FormatError::io(path, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&raw).map_err(|e| FormatError::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// One row of experiment output.
///
/// Serializes as a flat object: `method`, `sparsity`, then metric names in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub method: String,
    pub sparsity: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl Report {
    pub fn new(method: impl Into<String>, sparsity: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&sparsity),
            "sparsity {sparsity} outside [0,1]"
        );
        Self {
            method: method.into(),
            sparsity,
            metrics: BTreeMap::new(),
        }
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        assert!(
            name != "method" && name != "sparsity",
            "metric name `{name}` collides with a report key"
        );
        self.metrics.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

impl Serialize for Report {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(2 + self.metrics.len()))?;
        map.serialize_entry("method", &self.method)?;
        map.serialize_entry("sparsity", &self.sparsity)?;
        for (k, v) in &self.metrics {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

/// Pretty JSON for a list of reports, with a trailing newline.
pub fn reports_to_json(reports: &[Report]) -> String {
    let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), FormatError> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| FormatError::io(path, e))
}
