//! Forward-only layers: zero-padded stride-1 convolution, pointwise
//! activations and half-pixel bilinear 2x upsampling.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{Tensor, WeightSet};
use crate::maps::{DepthMap, FeatureMap};

/// Square-kernel 2D convolution, zero padding, stride 1, same-size output.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    /// `[out][in][ky][kx]`
    weight: Vec<f32>,
    bias: Vec<f32>,
    /// `[ky][kx][in][out]`, the layout the forward loop walks.
    packed: Vec<f32>,
    zero_weight: bool,
}

impl Conv2d {
    /// `weight` is laid out `[out][in][ky][kx]`.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::shape("convolution channel counts must be positive"));
        }
        if kernel % 2 == 0 {
            return Err(Error::shape(format!("kernel size must be odd, got {kernel}")));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel {
            return Err(Error::shape(format!(
                "conv weight for {in_channels}->{out_channels} k{kernel} needs {} values, got {}",
                out_channels * in_channels * kernel * kernel,
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "conv bias needs {out_channels} values, got {}",
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::shape("conv parameters must be finite"));
        }
        let kk = kernel * kernel;
        let mut packed = vec![0.0; weight.len()];
        for o in 0..out_channels {
            for i in 0..in_channels {
                for t in 0..kk {
                    packed[(t * in_channels + i) * out_channels + o] = weight[(o * in_channels + i) * kk + t];
                }
            }
        }
        let zero_weight = weight.iter().all(|v| *v == 0.0);
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
            packed,
            zero_weight,
        })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self::new(
            in_channels,
            out_channels,
            kernel,
            vec![0.0; out_channels * in_channels * kernel * kernel],
            vec![0.0; out_channels],
        )
        .expect("zero conv is well formed")
    }

    /// Uniform weights and biases in `[-scale, scale]`.
    pub fn random<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, scale: f32, rng: &mut R) -> Self {
        let n = out_channels * in_channels * kernel * kernel;
        let weight = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let bias = (0..out_channels).map(|_| rng.random_range(-scale..=scale)).collect();
        Self::new(in_channels, out_channels, kernel, weight, bias).expect("random conv is well formed")
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    /// True when every kernel tap is zero, so the output is the bias alone.
    pub fn has_zero_weight(&self) -> bool {
        self.zero_weight
    }

    /// Stores the layer as `{name}.weight` `[out, in, k, k]` and `{name}.bias` `[out]`.
    pub fn insert_into(&self, set: &mut WeightSet, name: &str) -> Result<()> {
        let k = self.kernel;
        set.insert(
            format!("{name}.weight"),
            Tensor::new(vec![self.out_channels, self.in_channels, k, k], self.weight.clone())?,
        )?;
        set.insert(
            format!("{name}.bias"),
            Tensor::new(vec![self.out_channels], self.bias.clone())?,
        )
    }

    pub fn from_set(set: &WeightSet, name: &str) -> Result<Self> {
        let weight = set.require(&format!("{name}.weight"))?;
        let bias = set.require(&format!("{name}.bias"))?;
        let [out_c, in_c, k, k2] = *weight.dims() else {
            return Err(Error::shape(format!(
                "{name}.weight must be rank 4, got {:?}",
                weight.dims()
            )));
        };
        if k != k2 {
            return Err(Error::shape(format!("{name}.weight kernel must be square")));
        }
        Self::new(in_c, out_c, k, weight.data().to_vec(), bias.data().to_vec())
            .map_err(|e| Error::shape(format!("{name}: {e}")))
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        if input.channels() != self.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                input.channels()
            )));
        }
        let (h, w) = (input.height(), input.width());
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = (k / 2) as isize;
        if self.zero_weight {
            let out = self.bias.iter().copied().cycle().take(h * w * cout).collect();
            return FeatureMap::new(h, w, cout, out);
        }
        let mut out = vec![0.0f32; h * w * cout];
        out.par_chunks_mut(w * cout).enumerate().for_each(|(y, row)| {
            for (x, acc) in row.chunks_exact_mut(cout).enumerate() {
                acc.copy_from_slice(&self.bias);
                for ky in 0..k {
                    let iy = y as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = x as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let tap = ky * k + kx;
                        let src = input.pixel(iy as usize, ix as usize);
                        for (ci, v) in src.iter().enumerate() {
                            if *v == 0.0 {
                                continue;
                            }
                            let wrow = &self.packed[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                            for (a, wv) in acc.iter_mut().zip(wrow) {
                                *a += v * wv;
                            }
                        }
                    }
                }
            }
        });
        FeatureMap::new(h, w, cout, out)
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu_in_place(map: &mut FeatureMap) {
    map.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

pub fn sigmoid_in_place(map: &mut FeatureMap) {
    map.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
}

pub fn tanh_in_place(map: &mut FeatureMap) {
    map.data_mut().iter_mut().for_each(|v| *v = v.tanh());
}

/// Source taps and weight of the second tap for output index `i` of a
/// half-pixel-aligned 2x upsampling of an axis of length `n`.
pub(crate) fn upsample_taps(i: usize, n: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear 2x upsampling with pixel centers aligned at half-pixel offsets.
pub fn upsample2x_features(input: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (input.height(), input.width(), input.channels());
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(oh, ow, c);
    for oy in 0..oh {
        let (y0, y1, fy) = upsample_taps(oy, h);
        let fy = fy as f32;
        for ox in 0..ow {
            let (x0, x1, fx) = upsample_taps(ox, w);
            let fx = fx as f32;
            let (a, b, cc, d) = (input.pixel(y0, x0), input.pixel(y0, x1), input.pixel(y1, x0), input.pixel(y1, x1));
            for (ch, o) in out.pixel_mut(oy, ox).iter_mut().enumerate() {
                let top = (1.0 - fx) * a[ch] + fx * b[ch];
                let bottom = (1.0 - fx) * cc[ch] + fx * d[ch];
                *o = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    out
}

/// Bilinear 2x upsampling of depth; an output pixel is invalid (0) when any
/// tap with non-zero weight is invalid.
pub fn upsample2x_depth(input: &DepthMap) -> DepthMap {
    let (h, w) = (input.height(), input.width());
    DepthMap::from_fn(2 * h, 2 * w, |oy, ox| {
        let (y0, y1, fy) = upsample_taps(oy, h);
        let (x0, x1, fx) = upsample_taps(ox, w);
        let (a, b, c, d) = (input.get(y0, x0), input.get(y0, x1), input.get(y1, x0), input.get(y1, x1));
        let weights = [(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx];
        if [a, b, c, d].iter().zip(weights).any(|(v, wt)| wt > 0.0 && *v <= 0.0) {
            return 0.0;
        }
        let top = (1.0 - fx) * a + fx * b;
        let bottom = (1.0 - fx) * c + fx * d;
        (1.0 - fy) * top + fy * bottom
    })
}
