//! Portable float map (PFM) images.
//!
//! Header `Pf` (grayscale) or `PF` (RGB), then `W H`, then a scale whose sign
//! gives the byte order (negative means little-endian). Rows are stored
//! bottom-to-top. [`PfmImage`] keeps rows top-to-bottom in memory.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PfmImage {
    /// `data` holds rows top-to-bottom, channels interleaved.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("PFM supports 1 or 3 channels, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::shape("PFM dimensions must be positive"));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "PFM {width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

pub fn encode_pfm(image: &PfmImage) -> Result<Vec<u8>> {
    if image.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::shape("refusing to write non-finite PFM sample"));
    }
    let magic = if image.channels == 1 { "Pf" } else { "PF" };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", image.width, image.height).into_bytes();
    let row_len = image.width * image.channels;
    out.reserve(image.data.len() * 4);
    for row in image.data.chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, name: &str) -> Result<(&'a str, usize)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(format!("pfm byte {start}"), format!("missing {name}")));
    }
    let token = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::parse(format!("pfm byte {start}"), format!("{name} is not ASCII")))?;
    Ok((token, start))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut pos = 0;
    let (magic, at) = header_token(bytes, &mut pos, "magic")?;
    let channels = match magic {
        "Pf" => 1,
        "PF" => 3,
        other => {
            return Err(Error::parse(
                format!("pfm byte {at}"),
                format!("bad magic '{other}', expected Pf or PF"),
            ))
        }
    };
    let mut dim = |name: &str| -> Result<usize> {
        let (tok, at) = header_token(bytes, &mut pos, name)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::parse(format!("pfm byte {at}"), format!("invalid {name} '{tok}'"))),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (tok, at) = header_token(bytes, &mut pos, "scale")?;
    let scale: f64 = tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::parse(format!("pfm byte {at}"), format!("invalid scale '{tok}'")))?;
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(format!("pfm byte {pos}"), "missing newline after scale"));
    }
    pos += 1;
    let little_endian = scale < 0.0;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::parse("pfm header", "dimension overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() != count * 4 {
        return Err(Error::parse(
            format!("pfm byte {pos}"),
            format!("payload has {} bytes, expected {}", payload.len(), count * 4),
        ));
    }
    let row_len = width * channels;
    let mut data = vec![0.0f32; count];
    for (file_row, chunk) in payload.chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let raw: [u8; 4] = b.try_into().expect("4 bytes");
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            data[row * row_len + i] = v;
        }
    }
    PfmImage::new(width, height, channels, data)
}
