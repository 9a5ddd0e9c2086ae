//! Self-describing binary container of named float64 arrays.
//!
//! Used for datasets, normalizers, and model checkpoints. Layout:
//! an 8-byte magic + format version, a JSON header describing every
//! array (name, shape, byte offset), an optional JSON metadata blob,
//! then the raw little-endian f64 payload. Arrays are stored sorted
//! by name so identical contents serialize byte-identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SCAP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayDesc {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    arrays: Vec<ArrayDesc>,
    meta: serde_json::Value,
}

/// A named array: row-major data plus its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "array shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }
}

/// Collection of named f64 arrays with a JSON metadata blob.
#[derive(Debug, Clone, Default)]
pub struct Container {
    arrays: BTreeMap<String, NamedArray>,
    pub meta: serde_json::Value,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, array: NamedArray) {
        self.arrays.insert(name.to_string(), array);
    }

    pub fn insert_vec(&mut self, name: &str, data: Vec<f64>) {
        let n = data.len();
        self.arrays.insert(
            name.to_string(),
            NamedArray {
                shape: vec![n],
                data,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing array `{name}` in container")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut descs = Vec::with_capacity(self.arrays.len());
        let mut offset = 0u64;
        for (name, arr) in &self.arrays {
            let len = arr.data.len() as u64;
            descs.push(ArrayDesc {
                name: name.clone(),
                shape: arr.shape.clone(),
                offset,
                len,
            });
            offset += len * 8;
        }
        let header = Header {
            version: VERSION,
            arrays: descs,
            meta: self.meta.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(header_bytes.len() as u64)?;
        w.write_all(&header_bytes)?;
        for arr in self.arrays.values() {
            for &v in &arr.data {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad magic in {}: not a shipcap container",
                path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}"
            )));
        }
        let header_len = r.read_u64::<LittleEndian>()? as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes)?;
        let header: Header = serde_json::from_slice(&header_bytes)?;

        let mut arrays = BTreeMap::new();
        for desc in &header.arrays {
            let mut data = vec![0.0f64; desc.len as usize];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            let expected: usize = desc.shape.iter().product();
            if expected != data.len() {
                return Err(Error::Format(format!(
                    "array `{}` shape/length mismatch",
                    desc.name
                )));
            }
            arrays.insert(
                desc.name.clone(),
                NamedArray {
                    shape: desc.shape.clone(),
                    data,
                },
            );
        }
        Ok(Self {
            arrays,
            meta: header.meta,
        })
    }
}
