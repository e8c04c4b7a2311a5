//! `CORT` single-tensor container.
//!
//! ```text
//! offset 0   magic   b"CORT"
//! offset 4   version u16 LE (= 1)
//! offset 6   rank    u16 LE (>= 1)
//! offset 8   dims    rank x u32 LE (each >= 1)
//! then       payload prod(dims) x f32 LE, row-major, last dim fastest
//! ```

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"CORT";
pub const TENSOR_VERSION: u16 = 1;

/// Dense `f32` tensor of rank >= 1 with positive dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::shape("tensor rank must be at least 1"));
        }
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::shape(format!("tensor dims must be positive, got {dims:?}")));
        }
        let n = element_count(&dims).ok_or_else(|| Error::shape(format!("tensor dims {dims:?} overflow")))?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d))
}

/// Sequential little-endian reader that reports byte offsets in errors.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::parse(format!("{} byte {offset}", self.what), message)
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| {
                self.error(
                    self.pos,
                    format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    /// Reads a rank field, its dims and the `f32` payload that follows.
    pub(crate) fn shaped_payload(&mut self) -> Result<Tensor> {
        let rank_at = self.pos;
        let rank = self.u16()? as usize;
        if rank == 0 {
            return Err(self.error(rank_at, "rank must be at least 1"));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(self.error(at, "dimension must be positive"));
            }
            dims.push(d);
        }
        let count = element_count(&dims)
            .and_then(|n| n.checked_mul(4).map(|_| n))
            .ok_or_else(|| self.error(rank_at, format!("dimension overflow for {dims:?}")))?;
        let payload_at = self.pos;
        if count * 4 > self.remaining() {
            return Err(self.error(
                payload_at,
                format!(
                    "truncated payload: dims {dims:?} need {} bytes, {} remain",
                    count * 4,
                    self.remaining()
                ),
            ));
        }
        let raw = self.take(count * 4)?;
        let mut data = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(self.error(payload_at + 4 * i, "non-finite value"));
            }
            data.push(v);
        }
        Tensor::new(dims, data).map_err(|e| self.error(rank_at, e.to_string()))
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn push_shaped_payload(out: &mut Vec<u8>, tensor: &Tensor, name: &str) -> Result<()> {
    if let Some(i) = tensor.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::shape(format!("{name}: refusing to write non-finite value at index {i}")));
    }
    let rank = u16::try_from(tensor.rank()).map_err(|_| Error::shape(format!("{name}: rank too large")))?;
    out.extend_from_slice(&rank.to_le_bytes());
    for d in &tensor.dims {
        let d = u32::try_from(*d).map_err(|_| Error::shape(format!("{name}: dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.reserve(tensor.data.len() * 4);
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.rank() + 4 * tensor.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    push_shaped_payload(&mut out, tensor, "tensor")?;
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes, "tensor");
    if r.take(4)? != TENSOR_MAGIC {
        return Err(r.error(0, "bad magic, expected CORT"));
    }
    let version = r.u16()?;
    if version != TENSOR_VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let tensor = r.shaped_payload()?;
    r.expect_end()?;
    Ok(tensor)
}
