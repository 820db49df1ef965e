//! Versioned named-tensor container.
//!
//! ```text
//! magic  b"TTACKPT\0"
//! u32    format version
//! u32    entry count
//! entry  u32 name length, UTF-8 name,
//!        u8 dtype tag (0 = f32, 1 = u64, 2 = u8),
//!        u32 rank, rank × u64 dims,
//!        raw little-endian values
//! ```
//!
//! All integers are little-endian.  Entries keep insertion order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TTACKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    F32(Tensor),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Value {
    fn tag(&self) -> u8 {
        match self {
            Value::F32(_) => 0,
            Value::U64(_) => 1,
            Value::Bytes(_) => 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Value)>,
}

fn missing(name: &str, what: &str) -> Error {
    Error::Parameter(format!("checkpoint entry {name} missing or not {what}"))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`.
    pub fn insert(&mut self, name: impl Into<String>, value: Value) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Value::F32(t)) => Ok(t),
            _ => Err(missing(name, "an f32 tensor")),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Value::U64(v)) => Ok(v),
            _ => Err(missing(name, "a u64 array")),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match self.u64s(name)? {
            [v] => Ok(*v),
            _ => Err(missing(name, "a single u64")),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(Value::Bytes(b)) => Ok(b),
            _ => Err(missing(name, "a byte array")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, value) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(value.tag());
            let shape: Vec<usize> = match value {
                Value::F32(t) => t.shape().to_vec(),
                Value::U64(v) => vec![v.len()],
                Value::Bytes(b) => vec![b.len()],
            };
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match value {
                Value::F32(t) => t.data().iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Value::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Value::Bytes(b) => out.extend_from_slice(b),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Format {
            path: origin.to_path_buf(),
            msg,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let count = r.u32().map_err(&bad)?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let len = r.u32().map_err(&bad)? as usize;
            let name = String::from_utf8(r.take(len).map_err(&bad)?.to_vec()).map_err(|_| bad("entry name is not UTF-8".into()))?;
            let tag = r.take(1).map_err(&bad)?[0];
            let rank = r.u32().map_err(&bad)? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>().map_err(&bad)?;
            let n: usize = shape.iter().product();
            let value = match tag {
                0 => {
                    let raw = r.take(n * 4).map_err(&bad)?;
                    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                    Value::F32(Tensor::new(&shape, data).map_err(|e| bad(format!("entry {name}: {e}")))?)
                }
                1 => {
                    let raw = r.take(n * 8).map_err(&bad)?;
                    Value::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
                }
                2 => Value::Bytes(r.take(n).map_err(&bad)?.to_vec()),
                t => return Err(bad(format!("entry {name}: unknown dtype tag {t}"))),
            };
            ck.insert(name, value);
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
