//! All-pairs correlation volumes, their pooled pyramid, windowed lookup and
//! multi-view fusion of the looked-up correlation vectors.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Pixel;
use crate::maps::FeatureMap;

/// Largest supported pyramid depth.
pub const MAX_LEVELS: usize = 4;

/// Dot products between every reference pixel and every source pixel at one
/// pyramid level.
///
/// Layout is `[ref_y][ref_x][src_y][src_x]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationVolume {
    level: usize,
    height: usize,
    width: usize,
    src_height: usize,
    src_width: usize,
    data: Vec<f32>,
}

impl CorrelationVolume {
    pub fn new(
        level: usize,
        dims: [usize; 4],
        data: Vec<f32>,
    ) -> Result<Self> {
        let [height, width, src_height, src_width] = dims;
        if dims.iter().any(|d| *d == 0) {
            return Err(Error::shape("correlation volume dimensions must be positive"));
        }
        if data.len() != height * width * src_height * src_width {
            return Err(Error::shape(format!(
                "correlation volume {dims:?} needs {} values, got {}",
                height * width * src_height * src_width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::shape("correlation volume contains non-finite values"));
        }
        Ok(Self {
            level,
            height,
            width,
            src_height,
            src_width,
            data,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// `[H, W, H_l, W_l]`.
    pub fn dims(&self) -> [usize; 4] {
        [self.height, self.width, self.src_height, self.src_width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// The `H_l x W_l` correlation slice of reference pixel `(y, x)`.
    pub fn slice(&self, y: usize, x: usize) -> &[f32] {
        let n = self.src_height * self.src_width;
        let start = (y * self.width + x) * n;
        &self.data[start..start + n]
    }

    pub fn get(&self, y: usize, x: usize, v: usize, u: usize) -> f32 {
        self.slice(y, x)[v * self.src_width + u]
    }
}

/// Options for [`build_correlation_volume_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VolumeOptions {
    /// L2-normalize each feature vector before taking dot products.
    pub normalize_features: bool,
}

/// Level-0 volume: `C[p][q] = ref(p) . src(q)`.
///
/// Each entry is accumulated over channels in increasing order starting
/// from zero, so the result is independent of scheduling.
pub fn build_correlation_volume(reference: &FeatureMap, source: &FeatureMap) -> Result<CorrelationVolume> {
    build_correlation_volume_with(reference, source, VolumeOptions::default())
}

pub fn build_correlation_volume_with(
    reference: &FeatureMap,
    source: &FeatureMap,
    options: VolumeOptions,
) -> Result<CorrelationVolume> {
    if reference.channels() != source.channels() {
        return Err(Error::shape(format!(
            "feature dims differ: reference {} vs source {}",
            reference.channels(),
            source.channels()
        )));
    }
    if !reference.same_grid(source) {
        return Err(Error::shape(format!(
            "feature grids differ: reference {}x{} vs source {}x{}",
            reference.height(),
            reference.width(),
            source.height(),
            source.width()
        )));
    }
    let (reference, source) = if options.normalize_features {
        (reference.l2_normalized(), source.l2_normalized())
    } else {
        (reference.clone(), source.clone())
    };

    let (h, w, dim) = (reference.height(), reference.width(), reference.channels());
    let n = h * w;
    // Channel-major copy of the source so the inner loop runs over source pixels.
    let mut source_t = vec![0.0f32; dim * n];
    for (q, v) in source.data().chunks_exact(dim).enumerate() {
        for (c, value) in v.iter().enumerate() {
            source_t[c * n + q] = *value;
        }
    }

    let mut data = vec![0.0f32; n * n];
    data.par_chunks_mut(n)
        .zip(reference.data().par_chunks(dim))
        .for_each(|(row, feature)| {
            for (c, a) in feature.iter().enumerate() {
                let column = &source_t[c * n..(c + 1) * n];
                for (out, b) in row.iter_mut().zip(column) {
                    *out += a * b;
                }
            }
        });

    Ok(CorrelationVolume {
        level: 0,
        height: h,
        width: w,
        src_height: h,
        src_width: w,
        data,
    })
}

/// Correlation volumes at successively halved source resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPyramid {
    levels: Vec<CorrelationVolume>,
}

impl CorrelationPyramid {
    /// Assembles a pyramid from volumes already pooled, e.g. read from disk.
    pub fn from_levels(levels: Vec<CorrelationVolume>) -> Result<Self> {
        if levels.is_empty() || levels.len() > MAX_LEVELS {
            return Err(Error::config(format!(
                "pyramid must have 1..={MAX_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for (l, vol) in levels.iter().enumerate() {
            if vol.level != l {
                return Err(Error::shape(format!(
                    "pyramid slot {l} holds a level-{} volume",
                    vol.level
                )));
            }
            if l > 0 {
                let prev = &levels[l - 1];
                let expected = [
                    prev.height,
                    prev.width,
                    prev.src_height.div_ceil(2),
                    prev.src_width.div_ceil(2),
                ];
                if vol.dims() != expected {
                    return Err(Error::shape(format!(
                        "level {l} has dims {:?}, expected {expected:?}",
                        vol.dims()
                    )));
                }
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[CorrelationVolume] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &CorrelationVolume {
        &self.levels[l]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Reference grid `(H, W)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.levels[0].height, self.levels[0].width)
    }
}

/// 2x2 average pooling of the source dimensions.
///
/// Odd source sizes are padded by replicating the last row or column, so the
/// pooled size is `ceil(n / 2)`.
pub fn pool_level(prev: &CorrelationVolume) -> CorrelationVolume {
    let (sh, sw) = (prev.src_height, prev.src_width);
    let (ph, pw) = (sh.div_ceil(2), sw.div_ceil(2));
    let mut data = vec![0.0f32; prev.height * prev.width * ph * pw];
    data.par_chunks_mut(ph * pw)
        .zip(prev.data.par_chunks(sh * sw))
        .for_each(|(out, src)| {
            for v in 0..ph {
                let r0 = 2 * v;
                let r1 = (2 * v + 1).min(sh - 1);
                for u in 0..pw {
                    let c0 = 2 * u;
                    let c1 = (2 * u + 1).min(sw - 1);
                    let sum = src[r0 * sw + c0] + src[r0 * sw + c1] + src[r1 * sw + c0] + src[r1 * sw + c1];
                    out[v * pw + u] = sum * 0.25;
                }
            }
        });
    CorrelationVolume {
        level: prev.level + 1,
        height: prev.height,
        width: prev.width,
        src_height: ph,
        src_width: pw,
        data,
    }
}

/// Builds `levels` pyramid levels from a level-0 volume.
pub fn build_pyramid(c0: CorrelationVolume, levels: usize) -> Result<CorrelationPyramid> {
    if !(1..=MAX_LEVELS).contains(&levels) {
        return Err(Error::config(format!(
            "pyramid levels must be in [1, {MAX_LEVELS}], got {levels}"
        )));
    }
    if c0.level != 0 {
        return Err(Error::config(format!(
            "pyramid must start from a level-0 volume, got level {}",
            c0.level
        )));
    }
    let min_size = 1usize << (levels - 1);
    if c0.src_height < min_size || c0.src_width < min_size {
        return Err(Error::config(format!(
            "source grid {}x{} too small for {levels} levels",
            c0.src_height, c0.src_width
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(c0);
    for _ in 1..levels {
        let next = pool_level(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(CorrelationPyramid { levels: out })
}

/// Neighborhood radius and pyramid depth used for lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupConfig {
    pub radius: usize,
    pub levels: usize,
}

impl Default for LookupConfig {
    fn default() -> Self {
        Self {
            radius: 3,
            levels: 4,
        }
    }
}

impl LookupConfig {
    pub fn window_side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn window_len(&self) -> usize {
        self.window_side() * self.window_side()
    }

    /// Length of a looked-up correlation vector: `levels * (2r + 1)^2`.
    pub fn feature_len(&self) -> usize {
        self.levels * self.window_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > MAX_LEVELS {
            return Err(Error::config(format!(
                "lookup levels must be in [1, {MAX_LEVELS}], got {}",
                self.levels
            )));
        }
        Ok(())
    }
}

/// Bilinear sample of a row-major `rows x cols` grid, zero outside.
fn bilinear_zero_padded(grid: &[f32], rows: usize, cols: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let tap = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= rows as f64 || xx >= cols as f64 {
            0.0
        } else {
            grid[yy as usize * cols + xx as usize] as f64
        }
    };
    let top = (1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1.0);
    let bottom = (1.0 - fx) * tap(y0 + 1.0, x0) + fx * tap(y0 + 1.0, x0 + 1.0);
    ((1.0 - fy) * top + fy * bottom) as f32
}

/// Fills `out` with the windowed correlations of reference pixel `(py, px)`
/// around the continuous source location `target`.
///
/// For each level `l` the window is centered on `target / 2^l`; samples are
/// ordered level-major, then row-major over `(dy, dx)`.
pub fn lookup_into(
    pyramid: &CorrelationPyramid,
    py: usize,
    px: usize,
    target: Pixel,
    cfg: &LookupConfig,
    out: &mut [f32],
) -> Result<()> {
    let (h, w) = pyramid.grid();
    if py >= h || px >= w {
        return Err(Error::Index {
            x: px,
            y: py,
            width: w,
            height: h,
        });
    }
    cfg.validate()?;
    if cfg.levels > pyramid.len() {
        return Err(Error::config(format!(
            "lookup wants {} levels but pyramid has {}",
            cfg.levels,
            pyramid.len()
        )));
    }
    if out.len() != cfg.feature_len() {
        return Err(Error::shape(format!(
            "lookup buffer has {} slots, expected {}",
            out.len(),
            cfg.feature_len()
        )));
    }
    let r = cfg.radius as i64;
    let mut i = 0;
    for (l, vol) in pyramid.levels[..cfg.levels].iter().enumerate() {
        let slice = vol.slice(py, px);
        let scale = (1u64 << l) as f64;
        let cx = target.x / scale;
        let cy = target.y / scale;
        for dy in -r..=r {
            for dx in -r..=r {
                out[i] = bilinear_zero_padded(
                    slice,
                    vol.src_height,
                    vol.src_width,
                    cx + dx as f64,
                    cy + dy as f64,
                );
                i += 1;
            }
        }
    }
    Ok(())
}

/// Allocating form of [`lookup_into`].
pub fn lookup(
    pyramid: &CorrelationPyramid,
    py: usize,
    px: usize,
    target: Pixel,
    cfg: &LookupConfig,
) -> Result<Vec<f32>> {
    let mut out = vec![0.0; cfg.feature_len()];
    lookup_into(pyramid, py, px, target, cfg, &mut out)?;
    Ok(out)
}

/// Per-pixel looked-up correlation vectors with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationFeatureMap {
    height: usize,
    width: usize,
    len: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl CorrelationFeatureMap {
    pub fn new(height: usize, width: usize, len: usize, data: Vec<f32>, valid: Vec<bool>) -> Result<Self> {
        if data.len() != height * width * len || valid.len() != height * width {
            return Err(Error::shape(format!(
                "correlation map {height}x{width}x{len} has {} values and {} flags",
                data.len(),
                valid.len()
            )));
        }
        Ok(Self {
            height,
            width,
            len,
            data,
            valid,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Vector length per pixel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn vector(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.len;
        &self.data[start..start + self.len]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.len == other.len
    }

    /// The vectors as a feature map; invalid pixels read as zeros.
    pub fn to_feature_map(&self) -> FeatureMap {
        let mut map = FeatureMap::zeros(self.height, self.width, self.len);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(y, x) {
                    map.pixel_mut(y, x).copy_from_slice(self.vector(y, x));
                }
            }
        }
        map
    }
}

/// How per-view correlation maps are reduced to one map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FusionStrategy {
    #[default]
    Averaging,
    Max,
    Variance,
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "averaging" | "average" | "mean" => Ok(Self::Averaging),
            "max" | "max-pooling" | "maxpool" => Ok(Self::Max),
            "variance" | "var" => Ok(Self::Variance),
            other => Err(Error::config(format!("unknown fusion strategy '{other}'"))),
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Averaging => "averaging",
            Self::Max => "max",
            Self::Variance => "variance",
        })
    }
}

fn reduce(values: &mut [f32], strategy: FusionStrategy) -> f32 {
    // Sorted values make the reduction independent of view order.
    values.sort_by(f32::total_cmp);
    let n = values.len() as f64;
    match strategy {
        FusionStrategy::Max => values[values.len() - 1],
        FusionStrategy::Averaging => (values.iter().map(|v| *v as f64).sum::<f64>() / n) as f32,
        FusionStrategy::Variance => {
            let mean = values.iter().map(|v| *v as f64).sum::<f64>() / n;
            (values
                .iter()
                .map(|v| {
                    let d = *v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / n) as f32
        }
    }
}

/// Element-wise reduction across views.
///
/// A pixel invalid in some view is reduced over its remaining views; a pixel
/// invalid everywhere stays invalid with zero entries.
pub fn fuse_views(maps: &[CorrelationFeatureMap], strategy: FusionStrategy) -> Result<CorrelationFeatureMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::config("cannot fuse an empty list of correlation maps"))?;
    if strategy == FusionStrategy::Variance && maps.len() < 2 {
        return Err(Error::config("variance fusion needs at least two views"));
    }
    if maps.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::shape("correlation maps to fuse differ in shape"));
    }
    let (h, w, len) = (first.height, first.width, first.len);
    let mut data = vec![0.0f32; h * w * len];
    let mut valid = vec![false; h * w];
    data.par_chunks_mut(len.max(1))
        .zip(valid.par_iter_mut())
        .enumerate()
        .for_each(|(i, (out, flag))| {
            let views: Vec<&CorrelationFeatureMap> = maps.iter().filter(|m| m.valid[i]).collect();
            if views.is_empty() {
                return;
            }
            *flag = true;
            let mut buf = Vec::with_capacity(views.len());
            for (j, slot) in out.iter_mut().enumerate() {
                buf.clear();
                buf.extend(views.iter().map(|m| m.data[i * len + j]));
                *slot = reduce(&mut buf, strategy);
            }
        });
    Ok(CorrelationFeatureMap {
        height: h,
        width: w,
        len,
        data,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, h * w, |y, x, c| if c == y * w + x { 1.0 } else { 0.0 })
    }

    #[test]
    fn one_hot_volume_is_identity() {
        let f = one_hot(3, 4);
        let vol = build_correlation_volume(&f, &f).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                for v in 0..3 {
                    for u in 0..4 {
                        let expected = if (y, x) == (v, u) { 1.0 } else { 0.0 };
                        assert_eq!(vol.get(y, x, v, u), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn self_correlation_diagonal_is_squared_norm() {
        let f = FeatureMap::from_fn(2, 3, 5, |y, x, c| (y as f32 - 0.5) * 0.3 + x as f32 * 0.7 - c as f32 * 0.11);
        let vol = build_correlation_volume(&f, &f).unwrap();
        for y in 0..2 {
            for x in 0..3 {
                let sq: f32 = f.pixel(y, x).iter().fold(0.0, |acc, v| acc + v * v);
                assert_eq!(vol.get(y, x, y, x), sq);
            }
        }
    }

    #[test]
    fn mismatched_features_rejected() {
        let a = FeatureMap::zeros(2, 2, 3);
        let b = FeatureMap::zeros(2, 2, 4);
        let c = FeatureMap::zeros(2, 3, 3);
        assert!(matches!(build_correlation_volume(&a, &b), Err(Error::Shape(_))));
        assert!(matches!(build_correlation_volume(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn normalization_option() {
        let a = FeatureMap::from_fn(1, 2, 2, |_, x, c| (1 + x + c) as f32);
        let vol = build_correlation_volume_with(&a, &a, VolumeOptions { normalize_features: true }).unwrap();
        assert!((vol.get(0, 0, 0, 0) - 1.0).abs() < 1e-6);
        assert!((vol.get(0, 1, 0, 1) - 1.0).abs() < 1e-6);
    }

    fn volume_from(dims: [usize; 4], f: impl Fn(usize) -> f32) -> CorrelationVolume {
        let n: usize = dims.iter().product();
        CorrelationVolume::new(0, dims, (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn constant_volume_pools_to_constant() {
        let pyr = build_pyramid(volume_from([2, 2, 16, 16], |_| 5.0), 4).unwrap();
        for vol in pyr.levels() {
            assert!(vol.data().iter().all(|v| *v == 5.0));
        }
    }

    #[test]
    fn pooling_hand_value() {
        let vals = [1.0, 2.0, 3.0, 5.0];
        let pyr = build_pyramid(volume_from([1, 1, 2, 2], |i| vals[i]), 2).unwrap();
        assert_eq!(pyr.level(1).data(), &[2.75]);
    }

    #[test]
    fn pyramid_shapes() {
        let vol = volume_from([2, 3, 48, 64], |_| 0.0);
        let pyr = build_pyramid(vol, 4).unwrap();
        assert_eq!(pyr.level(3).dims(), [2, 3, 6, 8]);
    }

    #[test]
    fn odd_pooling_replicates_edges() {
        // 1x3 source row [1, 2, 4] pads to [1, 2, 4, 4] over a 1-row grid padded to 2 rows.
        let vals = [1.0, 2.0, 4.0];
        let pyr = build_pyramid(volume_from([1, 1, 1, 3], |i| vals[i]), 1).unwrap();
        let pooled = pool_level(pyr.level(0));
        assert_eq!(pooled.dims(), [1, 1, 1, 2]);
        assert_eq!(pooled.data(), &[1.5, 4.0]);
    }

    #[test]
    fn pyramid_config_errors() {
        assert!(matches!(
            build_pyramid(volume_from([1, 1, 8, 8], |_| 0.0), 5),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_pyramid(volume_from([1, 1, 8, 8], |_| 0.0), 0),
            Err(Error::Config(_))
        ));
        assert!(build_pyramid(volume_from([1, 1, 4, 8], |_| 0.0), 4).is_err());
    }

    #[test]
    fn degenerate_radius_reads_raw_entry() {
        let vol = volume_from([2, 2, 5, 6], |i| i as f32 * 0.37 - 3.0);
        let pyr = build_pyramid(vol.clone(), 1).unwrap();
        let cfg = LookupConfig { radius: 0, levels: 1 };
        let v = lookup(&pyr, 1, 0, Pixel::new(4.0, 3.0), &cfg).unwrap();
        assert_eq!(v, vec![vol.get(1, 0, 3, 4)]);
    }

    #[test]
    fn halfway_sample_on_linear_field_is_mean() {
        let vol = volume_from([1, 1, 4, 6], |i| 2.0 + 1.5 * (i % 6) as f32);
        let pyr = build_pyramid(vol.clone(), 1).unwrap();
        let cfg = LookupConfig { radius: 1, levels: 1 };
        let v = lookup(&pyr, 0, 0, Pixel::new(2.5, 1.0), &cfg).unwrap();
        let center = v[4];
        assert_eq!(center, (vol.get(0, 0, 1, 2) + vol.get(0, 0, 1, 3)) / 2.0);
    }

    #[test]
    fn lookup_out_of_range_is_zero_and_bad_pixel_errors() {
        let pyr = build_pyramid(volume_from([1, 1, 4, 4], |_| 1.0), 1).unwrap();
        let cfg = LookupConfig { radius: 0, levels: 1 };
        assert_eq!(lookup(&pyr, 0, 0, Pixel::new(-5.0, 0.0), &cfg).unwrap(), vec![0.0]);
        // Half the bilinear footprint falls outside.
        assert_eq!(lookup(&pyr, 0, 0, Pixel::new(3.5, 0.0), &cfg).unwrap(), vec![0.5]);
        assert!(matches!(
            lookup(&pyr, 1, 0, Pixel::new(0.0, 0.0), &cfg),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn default_lookup_length() {
        assert_eq!(LookupConfig::default().feature_len(), 196);
    }

    fn constant_map(value: f32, valid: bool) -> CorrelationFeatureMap {
        CorrelationFeatureMap::new(2, 2, 3, vec![value; 12], vec![valid; 4]).unwrap()
    }

    #[test]
    fn fusion_hand_values() {
        let maps = [constant_map(1.0, true), constant_map(3.0, true)];
        let avg = fuse_views(&maps, FusionStrategy::Averaging).unwrap();
        let max = fuse_views(&maps, FusionStrategy::Max).unwrap();
        let var = fuse_views(&maps, FusionStrategy::Variance).unwrap();
        assert!(avg.data().iter().all(|v| *v == 2.0));
        assert!(max.data().iter().all(|v| *v == 3.0));
        assert!(var.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn fusion_single_view_and_errors() {
        let single = [constant_map(0.7, true)];
        assert_eq!(fuse_views(&single, FusionStrategy::Averaging).unwrap(), single[0]);
        assert!(matches!(
            fuse_views(&single, FusionStrategy::Variance),
            Err(Error::Config(_))
        ));
        assert!(matches!(fuse_views(&[], FusionStrategy::Averaging), Err(Error::Config(_))));
    }

    #[test]
    fn fusion_skips_invalid_views() {
        let maps = [constant_map(1.0, false), constant_map(3.0, true)];
        let avg = fuse_views(&maps, FusionStrategy::Averaging).unwrap();
        assert!(avg.data().iter().all(|v| *v == 3.0));
        let none = fuse_views(&[constant_map(1.0, false), constant_map(2.0, false)], FusionStrategy::Max).unwrap();
        assert!(none.validity().iter().all(|v| !v));
        assert!(none.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fusion_strategy_parsing() {
        assert_eq!("averaging".parse::<FusionStrategy>().unwrap(), FusionStrategy::Averaging);
        assert_eq!("max".parse::<FusionStrategy>().unwrap(), FusionStrategy::Max);
        assert_eq!("variance".parse::<FusionStrategy>().unwrap(), FusionStrategy::Variance);
        assert!("conv".parse::<FusionStrategy>().is_err());
    }
}
