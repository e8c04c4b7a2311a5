//! `CORW` named-tensor container.
//!
//! ```text
//! magic b"CORW" | version u16 | entry count u32
//! per entry: name length u16 | UTF-8 name | rank u16 | dims u32 x rank | f32 payload
//! ```
//!
//! All integers and floats little-endian. Entries are written in name order.

use std::collections::BTreeMap;

use super::tensor::{push_shaped_payload, ByteReader, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CORW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    entries: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `tensor` under `name`; duplicate names are an error.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::config(format!("invalid entry name length {}", name.len())));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::config(format!("duplicate entry '{name}'")));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::parse("weights", format!("missing entry '{name}'")))
    }

    pub fn contains_prefix(&self, prefix: &str) -> bool {
        self.entries.keys().any(|k| k.starts_with(prefix))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Moves every entry of `other` into `self`.
    pub fn merge(&mut self, other: WeightSet) -> Result<()> {
        for (name, tensor) in other.entries {
            self.insert(name, tensor)?;
        }
        Ok(())
    }
}

pub fn encode_weights(set: &WeightSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    let count = u32::try_from(set.entries.len()).map_err(|_| Error::config("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in &set.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        push_shaped_payload(&mut out, tensor, name)?;
    }
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet> {
    let mut r = ByteReader::new(bytes, "weights");
    if r.take(4)? != WEIGHTS_MAGIC {
        return Err(r.error(0, "bad magic, expected CORW"));
    }
    let version = r.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut set = WeightSet::new();
    for _ in 0..count {
        let at = r.pos();
        let len = r.u16()? as usize;
        if len == 0 {
            return Err(r.error(at, "empty entry name"));
        }
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.error(at + 2, "entry name is not UTF-8"))?
            .to_owned();
        let tensor = r.shaped_payload()?;
        if set.entries.contains_key(&name) {
            return Err(r.error(at, format!("duplicate entry '{name}'")));
        }
        set.entries.insert(name, tensor);
    }
    r.expect_end()?;
    Ok(set)
}
