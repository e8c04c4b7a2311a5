//! Dense per-pixel grids shared by the pipeline stages.

use crate::error::{Error, Result};

/// `H x W x C` grid of `f32` channel vectors, row-major with channels fastest.
///
/// Used for image features, context features and network activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("feature map contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
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

    /// Channel vector at row `y`, column `x`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn same_grid(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Concatenates maps of the same grid along the channel axis.
    pub fn concat_channels(maps: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::config("nothing to concatenate"))?;
        if maps.iter().any(|m| !m.same_grid(first)) {
            return Err(Error::shape("concatenated maps differ in height or width"));
        }
        let channels: usize = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(first.height * first.width * channels);
        for i in 0..first.height * first.width {
            for m in maps {
                data.extend_from_slice(&m.data[i * m.channels..(i + 1) * m.channels]);
            }
        }
        Ok(FeatureMap {
            height: first.height,
            width: first.width,
            channels,
            data,
        })
    }

    /// Copy with every channel vector scaled to unit L2 norm (zero vectors untouched).
    pub fn l2_normalized(&self) -> FeatureMap {
        let mut out = self.clone();
        for v in out.data.chunks_mut(self.channels) {
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        out
    }
}

/// Per-pixel depths in scene units; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("depth map dimensions must be positive"));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "depth map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDepth(*v));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, depth: f64) -> Self {
        Self {
            height,
            width,
            data: vec![depth; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, depth: f64) {
        self.data[y * self.width + x] = depth;
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.get(y, x) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub fn same_shape(&self, other: &DepthMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Median of the valid depths; the mean of the two middle values for even counts.
    pub fn valid_median(&self) -> Option<f64> {
        let mut valid: Vec<f64> = self.data.iter().copied().filter(|d| *d > 0.0).collect();
        if valid.is_empty() {
            return None;
        }
        valid.sort_by(f64::total_cmp);
        let n = valid.len();
        Some(if n % 2 == 1 {
            valid[n / 2]
        } else {
            0.5 * (valid[n / 2 - 1] + valid[n / 2])
        })
    }

    /// Replaces invalid pixels with the median of the valid ones.
    pub fn seeded_with_median(&self) -> Result<DepthMap> {
        let median = self
            .valid_median()
            .ok_or_else(|| Error::EmptyResult("depth map has no valid pixel to seed from".into()))?;
        let mut out = self.clone();
        out.data
            .iter_mut()
            .filter(|d| **d <= 0.0)
            .for_each(|d| *d = median);
        Ok(out)
    }

    /// Rounds every depth to `f32` precision, the precision of the on-disk formats.
    pub fn quantized_f32(&self) -> DepthMap {
        DepthMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|d| *d as f32 as f64).collect(),
        }
    }

    /// Single-channel `f32` view of the depths.
    pub fn to_feature_map(&self) -> FeatureMap {
        FeatureMap {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().map(|d| *d as f32).collect(),
        }
    }
}

/// Per-pixel displacement from the reference grid into one source view.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    flow: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, flow: Vec<[f64; 2]>, valid: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("flow field dimensions must be positive"));
        }
        if flow.len() != height * width || valid.len() != height * width {
            return Err(Error::shape(format!(
                "flow field {height}x{width} needs {} vectors and flags",
                height * width
            )));
        }
        if flow
            .iter()
            .zip(&valid)
            .any(|(f, v)| *v && !(f[0].is_finite() && f[1].is_finite()))
        {
            return Err(Error::shape("valid flow vectors must be finite"));
        }
        Ok(Self {
            height,
            width,
            flow,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(dx, dy)` at row `y`, column `x`, or `None` when flagged invalid.
    pub fn get(&self, y: usize, x: usize) -> Option<[f64; 2]> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.flow[i])
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.flow
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn set(&mut self, y: usize, x: usize, flow: Option<[f64; 2]>) {
        let i = y * self.width + x;
        match flow {
            Some(f) => {
                self.flow[i] = f;
                self.valid[i] = true;
            }
            None => {
                self.flow[i] = [0.0, 0.0];
                self.valid[i] = false;
            }
        }
    }
}
