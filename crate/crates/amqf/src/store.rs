//! Single-file archive of named f64 tensors plus a JSON meta segment.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "AMQT"
//! version u32
//! meta    u64 byte length, then UTF-8 JSON
//! count   u64 number of tensors
//! tensor  repeated, sorted by name:
//!   name  u64 byte length, then UTF-8
//!   ndim  u32
//!   dims  ndim x u64
//!   dtype u8 (0 = f64 little-endian)
//!   data  8 * product(dims) bytes, row-major
//! ```
//!
//! Tensors are stored in name order, so saving a loaded archive reproduces
//! the original bytes.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};

use crate::error::{AmqfError, Result};

const MAGIC: &[u8; 4] = b"AMQT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone)]
pub struct TensorStore {
    pub meta: serde_json::Value,
    tensors: BTreeMap<String, ArrayD<f64>>,
}

impl TensorStore {
    pub fn new(meta: serde_json::Value) -> Self {
        TensorStore {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArrayD<f64>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| AmqfError::validation(format!("archive is missing tensor '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| AmqfError::io(parent, e))?;
            }
        }
        let file = std::fs::File::create(path).map_err(|e| AmqfError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e: std::io::Error| AmqfError::io(path, e);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION).map_err(io_err)?;
        let meta = serde_json::to_vec(&self.meta).expect("meta serializes");
        w.write_u64::<LittleEndian>(meta.len() as u64).map_err(io_err)?;
        w.write_all(&meta).map_err(io_err)?;
        w.write_u64::<LittleEndian>(self.tensors.len() as u64)
            .map_err(io_err)?;
        for (name, tensor) in &self.tensors {
            w.write_u64::<LittleEndian>(name.len() as u64).map_err(io_err)?;
            w.write_all(name.as_bytes()).map_err(io_err)?;
            w.write_u32::<LittleEndian>(tensor.ndim() as u32).map_err(io_err)?;
            for d in tensor.shape() {
                w.write_u64::<LittleEndian>(*d as u64).map_err(io_err)?;
            }
            w.write_u8(DTYPE_F64).map_err(io_err)?;
            debug_assert!(tensor.is_standard_layout());
            for v in tensor.iter() {
                w.write_f64::<LittleEndian>(*v).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| AmqfError::io(path, e))?;
        let mut r = BufReader::new(file);
        let io_err = |e: std::io::Error| AmqfError::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(AmqfError::validation(format!(
                "{} is not a tensor archive (bad magic)",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io_err)?;
        if version != FORMAT_VERSION {
            return Err(AmqfError::validation(format!(
                "unsupported archive version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
        let mut meta_buf = vec![0u8; meta_len];
        r.read_exact(&mut meta_buf).map_err(io_err)?;
        let meta = serde_json::from_slice(&meta_buf)
            .map_err(|e| AmqfError::validation(format!("bad meta JSON: {e}")))?;
        let count = r.read_u64::<LittleEndian>().map_err(io_err)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.read_u64::<LittleEndian>().map_err(io_err)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf).map_err(io_err)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| AmqfError::validation(format!("bad tensor name: {e}")))?;
            let ndim = r.read_u32::<LittleEndian>().map_err(io_err)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.read_u64::<LittleEndian>().map_err(io_err)? as usize);
            }
            let dtype = r.read_u8().map_err(io_err)?;
            if dtype != DTYPE_F64 {
                return Err(AmqfError::validation(format!(
                    "tensor '{name}' has unsupported dtype tag {dtype}"
                )));
            }
            let numel: usize = dims.iter().product();
            let mut data = vec![0f64; numel];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(io_err)?;
            let tensor = ArrayD::from_shape_vec(IxDyn(&dims), data)
                .map_err(|e| AmqfError::validation(format!("tensor '{name}': {e}")))?;
            tensors.insert(name, tensor);
        }
        Ok(TensorStore { meta, tensors })
    }
}
