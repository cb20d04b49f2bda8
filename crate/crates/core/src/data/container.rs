//! Named-tensor container used for weights, adapters and checkpoints.
//!
//! Layout (little endian throughout):
//!
//! ```text
//! u64            header length N
//! N bytes        UTF-8 JSON header
//! payload        concatenated raw tensor buffers
//! ```
//!
//! The header maps each tensor name to `{"dtype", "shape", "data_offsets"}`
//! with offsets relative to the start of the payload, plus an optional
//! `"__metadata__"` object of string pairs. This is the same layout as
//! `.safetensors` files, so exported foundation-model weights load directly
//! once their names are mapped (see `encoder::weights`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::real::Real;

const METADATA_KEY: &str = "__metadata__";
/// Upper bound on the JSON header; anything bigger is treated as corruption.
const MAX_HEADER_LEN: u64 = 100 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorValues {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorValues {
    pub fn dtype(&self) -> Dtype {
        match self {
            TensorValues::F32(_) => Dtype::F32,
            TensorValues::F64(_) => Dtype::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorValues::F32(v) => v.len(),
            TensorValues::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_real<F: Real>(&self) -> Vec<F> {
        match self {
            TensorValues::F32(v) => v.iter().map(|&x| F::from_f64_lossy(x as f64)).collect(),
            TensorValues::F64(v) => v.iter().map(|&x| F::from_f64_lossy(x)).collect(),
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorValues::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorValues::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read_le(dtype: Dtype, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F32 => TensorValues::F32(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorValues::F64(
                bytes
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: TensorValues,
}

impl Tensor {
    fn from_real<F: Real>(shape: Vec<usize>, data: &[F]) -> Self {
        let values = match F::DTYPE {
            Dtype::F32 => TensorValues::F32(data.iter().map(|x| x.to_f64_lossy() as f32).collect()),
            Dtype::F64 => TensorValues::F64(data.iter().map(|x| x.to_f64_lossy()).collect()),
        };
        Tensor { shape, values }
    }

    pub fn byte_len(&self) -> usize {
        self.values.len() * self.values.dtype().size()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderEntry {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// An ordered set of named tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorContainer {
    tensors: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Insert a raw tensor. Names must be unique.
    pub fn insert_tensor(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name == METADATA_KEY {
            return Err(Error::Config(format!("`{METADATA_KEY}` is a reserved name")));
        }
        let expected: usize = tensor.shape.iter().product();
        if expected != tensor.values.len() {
            return Err(Error::Dimension(format!(
                "tensor `{name}` has shape {:?} but {} values",
                tensor.shape,
                tensor.values.len()
            )));
        }
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate tensor name `{name}`")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn insert<F: Real>(&mut self, name: impl Into<String>, shape: &[usize], data: &[F]) -> Result<()> {
        self.insert_tensor(name, Tensor::from_real(shape.to_vec(), data))
    }

    pub fn insert_array1<F: Real>(&mut self, name: impl Into<String>, a: &Array1<F>) -> Result<()> {
        let data: Vec<F> = a.iter().copied().collect();
        self.insert(name, &[a.len()], &data)
    }

    pub fn insert_array2<F: Real>(&mut self, name: impl Into<String>, a: &Array2<F>) -> Result<()> {
        let data: Vec<F> = a.iter().copied().collect();
        self.insert(name, &[a.nrows(), a.ncols()], &data)
    }

    /// Fetch a tensor converted to `F`.
    pub fn get<F: Real>(&self, name: &str) -> Result<ArrayD<F>> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| Error::TensorNotFound(name.to_string()))?;
        ArrayD::from_shape_vec(IxDyn(&t.shape), t.values.to_real())
            .map_err(|e| Error::format(name, e.to_string()))
    }

    pub fn get_array1<F: Real>(&self, name: &str) -> Result<Array1<F>> {
        let a = self.get::<F>(name)?;
        let shape = a.shape().to_vec();
        a.into_dimensionality()
            .map_err(|_| Error::Dimension(format!("`{name}` has shape {shape:?}, expected a vector")))
    }

    pub fn get_array2<F: Real>(&self, name: &str) -> Result<Array2<F>> {
        let a = self.get::<F>(name)?;
        let shape = a.shape().to_vec();
        a.into_dimensionality()
            .map_err(|_| Error::Dimension(format!("`{name}` has shape {shape:?}, expected a matrix")))
    }

    pub fn get_scalar<F: Real>(&self, name: &str) -> Result<F> {
        let a = self.get::<F>(name)?;
        if a.len() != 1 {
            return Err(Error::Dimension(format!("`{name}` has {} values, expected 1", a.len())));
        }
        Ok(a.iter().next().copied().unwrap())
    }

    /// Move every tensor of `other` in, failing on name clashes.
    pub fn extend(&mut self, other: TensorContainer) -> Result<()> {
        for (name, t) in other.tensors {
            self.insert_tensor(name, t)?;
        }
        self.metadata.extend(other.metadata);
        Ok(())
    }

    /// Like [`subset`](Self::subset), but the whole container when nothing carries the prefix.
    pub fn subset_or_all(&self, prefix: &str) -> TensorContainer {
        if self.tensors.keys().any(|k| k.starts_with(prefix)) {
            self.subset(prefix)
        } else {
            self.clone()
        }
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> TensorContainer {
        let tensors = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        TensorContainer {
            tensors,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        if !self.metadata.is_empty() {
            let meta = self
                .metadata
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            header.insert(METADATA_KEY.to_string(), Value::Object(meta));
        }
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            let end = offset + t.byte_len() as u64;
            let entry = HeaderEntry {
                dtype: t.values.dtype(),
                shape: t.shape.clone(),
                data_offsets: [offset, end],
            };
            header.insert(name.clone(), serde_json::to_value(entry).unwrap());
            offset = end;
        }
        let header = serde_json::to_vec(&Value::Object(header)).unwrap();
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            t.values.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (entries, metadata, payload_start) = parse_header(bytes, bytes.len() as u64)?;
        let payload = &bytes[payload_start..];
        build(entries, metadata, |entry| {
            let [a, b] = entry.data_offsets;
            Ok(payload[a as usize..b as usize].to_vec())
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Load a container, validating the header against the file size before
    /// any tensor payload is read.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = f.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut len_buf = [0u8; 8];
        f.read_exact(&mut len_buf)
            .map_err(|_| Error::format("<header>", "file shorter than the 8-byte length prefix"))?;
        let header_len = u64::from_le_bytes(len_buf);
        if header_len > MAX_HEADER_LEN || 8 + header_len > file_len {
            return Err(Error::format("<header>", format!("header length {header_len} exceeds file")));
        }
        let mut head = vec![0u8; 8 + header_len as usize];
        head[..8].copy_from_slice(&len_buf);
        f.read_exact(&mut head[8..]).map_err(|e| Error::io(path, e))?;
        let (entries, metadata, payload_start) = parse_header(&head, file_len)?;
        build(entries, metadata, |entry| {
            let [a, b] = entry.data_offsets;
            f.seek(SeekFrom::Start(payload_start as u64 + a))
                .map_err(|e| Error::io(path, e))?;
            let mut buf = vec![0u8; (b - a) as usize];
            f.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            Ok(buf)
        })
    }
}

type ParsedHeader = (Vec<(String, HeaderEntry)>, BTreeMap<String, String>, usize);

fn parse_header(bytes: &[u8], total_len: u64) -> Result<ParsedHeader> {
    if bytes.len() < 8 {
        return Err(Error::format("<header>", "file shorter than the 8-byte length prefix"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    if header_len > MAX_HEADER_LEN || 8 + header_len > bytes.len() as u64 {
        return Err(Error::format("<header>", format!("header length {header_len} exceeds file")));
    }
    let payload_start = 8 + header_len as usize;
    let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[8..payload_start])
        .map_err(|e| Error::format("<header>", e.to_string()))?;

    let mut metadata = BTreeMap::new();
    let mut entries = Vec::new();
    for (name, value) in header {
        if name == METADATA_KEY {
            let obj = value
                .as_object()
                .ok_or_else(|| Error::format(METADATA_KEY, "metadata must be an object"))?;
            for (k, v) in obj {
                let v = v
                    .as_str()
                    .ok_or_else(|| Error::format(METADATA_KEY, format!("value of `{k}` is not a string")))?;
                metadata.insert(k.clone(), v.to_string());
            }
            continue;
        }
        let entry: HeaderEntry =
            serde_json::from_value(value).map_err(|e| Error::format(&name, e.to_string()))?;
        entries.push((name, entry));
    }

    let payload_len = total_len - payload_start as u64;
    for (name, e) in &entries {
        let [a, b] = e.data_offsets;
        let count = e
            .shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::format(name, "shape overflows"))?;
        if b < a || b - a != count * e.dtype.size() as u64 {
            return Err(Error::format(
                name,
                format!("offsets [{a}, {b}) do not match shape {:?} of {:?}", e.shape, e.dtype),
            ));
        }
        if b > payload_len {
            return Err(Error::format(name, format!("data ends at {b} but payload has {payload_len} bytes")));
        }
    }
    let mut spans: Vec<(u64, u64, &str)> = entries
        .iter()
        .map(|(n, e)| (e.data_offsets[0], e.data_offsets[1], n.as_str()))
        .filter(|(a, b, _)| b > a)
        .collect();
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::format(w[1].2, format!("data overlaps tensor `{}`", w[0].2)));
        }
    }
    Ok((entries, metadata, payload_start))
}

fn build(
    entries: Vec<(String, HeaderEntry)>,
    metadata: BTreeMap<String, String>,
    mut read: impl FnMut(&HeaderEntry) -> Result<Vec<u8>>,
) -> Result<TensorContainer> {
    let mut out = TensorContainer {
        tensors: BTreeMap::new(),
        metadata,
    };
    for (name, entry) in entries {
        let bytes = read(&entry)?;
        let values = TensorValues::read_le(entry.dtype, &bytes);
        out.insert_tensor(name, Tensor { shape: entry.shape, values })?;
    }
    Ok(out)
}
