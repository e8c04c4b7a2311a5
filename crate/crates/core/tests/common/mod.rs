//! Scalar reference implementations shared by the integration and acceptance tests.
//!
//! Each one is written from the defining equations with plain loops and no
//! use of the library's own kernels.

#![allow(dead_code)]

use corrdepth::geometry::{Intrinsics, Pixel, RelativePose};
use corrdepth::nn::Conv2d;
use corrdepth::FeatureMap;
use rand::Rng;

pub fn random_features<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> FeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureMap::new(h, w, c, data).unwrap()
}

/// `C[p][q] = sum_c ref(p)_c * src(q)_c`, accumulated in f32 from zero in channel order.
pub fn correlation(reference: &FeatureMap, source: &FeatureMap) -> Vec<f32> {
    let (h, w, dim) = (reference.height(), reference.width(), reference.channels());
    let mut out = Vec::with_capacity(h * w * h * w);
    for py in 0..h {
        for px in 0..w {
            for qy in 0..h {
                for qx in 0..w {
                    let a = reference.pixel(py, px);
                    let b = source.pixel(qy, qx);
                    let mut acc = 0.0f32;
                    for c in 0..dim {
                        acc += a[c] * b[c];
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// 2x2 mean of a `rows x cols` grid with the last row/column replicated when odd.
pub fn average_pool(grid: &[f32], rows: usize, cols: usize) -> (Vec<f32>, usize, usize) {
    let (pr, pc) = ((rows + 1) / 2, (cols + 1) / 2);
    let at = |r: usize, c: usize| grid[r.min(rows - 1) * cols + c.min(cols - 1)] as f64;
    let mut out = Vec::with_capacity(pr * pc);
    for r in 0..pr {
        for c in 0..pc {
            let s = at(2 * r, 2 * c) + at(2 * r, 2 * c + 1) + at(2 * r + 1, 2 * c) + at(2 * r + 1, 2 * c + 1);
            out.push((s / 4.0) as f32);
        }
    }
    (out, pr, pc)
}

/// Bilinear sample at continuous `(x, y)` with zero outside the grid.
pub fn bilinear(grid: &[f32], rows: usize, cols: usize, x: f64, y: f64) -> f64 {
    let value = |r: i64, c: i64| {
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            0.0
        } else {
            grid[r as usize * cols + c as usize] as f64
        }
    };
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    value(y0, x0) * (1.0 - fx) * (1.0 - fy)
        + value(y0, x0 + 1) * fx * (1.0 - fy)
        + value(y0 + 1, x0) * (1.0 - fx) * fy
        + value(y0 + 1, x0 + 1) * fx * fy
}

/// Windowed pyramid lookup for one reference pixel, given its level-0 slice.
pub fn lookup(slice0: &[f32], rows: usize, cols: usize, levels: usize, radius: i64, target: Pixel) -> Vec<f64> {
    let mut grid = slice0.to_vec();
    let (mut r, mut c) = (rows, cols);
    let mut out = Vec::new();
    for l in 0..levels {
        if l > 0 {
            let (g, nr, nc) = average_pool(&grid, r, c);
            (grid, r, c) = (g, nr, nc);
        }
        let scale = (1u64 << l) as f64;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                out.push(bilinear(&grid, r, c, target.x / scale + dx as f64, target.y / scale + dy as f64));
            }
        }
    }
    out
}

/// Zero-padded same-size convolution, f32 accumulation starting from the bias.
pub fn conv(input: &FeatureMap, layer: &Conv2d) -> FeatureMap {
    let (h, w, cin) = (input.height(), input.width(), input.channels());
    let (cout, k) = (layer.out_channels(), layer.kernel());
    let pad = (k / 2) as i64;
    let weight = layer.weight();
    let mut out = FeatureMap::zeros(h, w, cout);
    for y in 0..h {
        for x in 0..w {
            for o in 0..cout {
                let mut acc = layer.bias()[o];
                for ky in 0..k {
                    for kx in 0..k {
                        let (iy, ix) = (y as i64 + ky as i64 - pad, x as i64 + kx as i64 - pad);
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        let v = input.pixel(iy as usize, ix as usize);
                        for i in 0..cin {
                            acc += v[i] * weight[((o * cin + i) * k + ky) * k + kx];
                        }
                    }
                }
                out.pixel_mut(y, x)[o] = acc;
            }
        }
    }
    out
}

fn concat(a: &FeatureMap, b: &FeatureMap) -> FeatureMap {
    let (ca, cb) = (a.channels(), b.channels());
    FeatureMap::from_fn(a.height(), a.width(), ca + cb, |y, x, c| {
        if c < ca {
            a.pixel(y, x)[c]
        } else {
            b.pixel(y, x)[c - ca]
        }
    })
}

fn map(f: &FeatureMap, g: impl Fn(f32) -> f32) -> FeatureMap {
    FeatureMap::new(f.height(), f.width(), f.channels(), f.data().iter().map(|v| g(*v)).collect()).unwrap()
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// One ConvGRU step from its gate equations.
pub fn gru_cell(h: &FeatureMap, x: &FeatureMap, z_conv: &Conv2d, r_conv: &Conv2d, q_conv: &Conv2d) -> FeatureMap {
    let hx = concat(h, x);
    let z = map(&conv(&hx, z_conv), sigmoid);
    let r = map(&conv(&hx, r_conv), sigmoid);
    let rh = FeatureMap::new(
        h.height(),
        h.width(),
        h.channels(),
        r.data().iter().zip(h.data()).map(|(a, b)| a * b).collect(),
    )
    .unwrap();
    let q = map(&conv(&concat(&rh, x), q_conv), f32::tanh);
    let data = z
        .data()
        .iter()
        .zip(h.data().iter().zip(q.data()))
        .map(|(z, (h, q))| (1.0 - z) * h + z * q)
        .collect();
    FeatureMap::new(h.height(), h.width(), h.channels(), data).unwrap()
}

/// Half-pixel source coordinate of output index `i` along an axis of length `n`.
fn half_pixel(i: usize, n: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * 0.5 - 0.5).max(0.0).min((n - 1) as f64);
    let i0 = s.floor() as usize;
    (i0, (i0 + 1).min(n - 1), s - i0 as f64)
}

/// Half-pixel bilinear 2x upsampling of an `h x w x c` grid.
pub fn upsample2x(data: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; 4 * h * w * c];
    for oy in 0..2 * h {
        let (y0, y1, fy) = half_pixel(oy, h);
        for ox in 0..2 * w {
            let (x0, x1, fx) = half_pixel(ox, w);
            for ch in 0..c {
                let at = |y: usize, x: usize| data[(y * w + x) * c + ch];
                out[(oy * 2 * w + ox) * c + ch] = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                    + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
            }
        }
    }
    out
}

/// One DFFM stage on all-valid depth: returns the fused feature and the upsampled depth.
pub fn dffm_stage(
    depth: &[f64],
    h: usize,
    w: usize,
    feat: &FeatureMap,
    context: Option<&FeatureMap>,
    layers: [&Conv2d; 4],
    min_depth: f64,
) -> (FeatureMap, Vec<f64>) {
    let depth_up = upsample2x(depth, h, w, 1);
    let feat64: Vec<f64> = feat.data().iter().map(|v| *v as f64).collect();
    let feat_up = upsample2x(&feat64, h, w, feat.channels());
    let (oh, ow) = (2 * h, 2 * w);
    let depth_map = FeatureMap::new(oh, ow, 1, depth_up.iter().map(|v| *v as f32).collect()).unwrap();
    let feat_map = FeatureMap::new(oh, ow, feat.channels(), feat_up.iter().map(|v| *v as f32).collect()).unwrap();
    let mut x = concat(&depth_map, &feat_map);
    if let Some(ctx) = context {
        x = concat(&x, ctx);
    }
    let relu = |v: f32| v.max(0.0);
    let fused = map(&conv(&map(&conv(&x, layers[0]), relu), layers[1]), relu);
    let residual = conv(&map(&conv(&fused, layers[2]), relu), layers[3]);
    let out = depth_up
        .iter()
        .zip(residual.data())
        .map(|(d, r)| (d + *r as f64).max(min_depth))
        .collect();
    (fused, out)
}

/// Projection energy `sum_k |a_k x (b_k d + t_k)|^2` from raw components.
pub fn projection_energy(p: Pixel, k: &Intrinsics, views: &[(Pixel, RelativePose)], d: f64) -> f64 {
    let ray = |q: Pixel| [(q.x - k.cx) / k.fx, (q.y - k.cy) / k.fy, 1.0];
    let r0 = ray(p);
    let mut e = 0.0;
    for (pk, rel) in views {
        let a = ray(*pk);
        let m = &rel.rotation;
        let mut v = [0.0; 3];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = (m[(i, 0)] * r0[0] + m[(i, 1)] * r0[1] + m[(i, 2)] * r0[2]) * d + rel.translation[i];
        }
        let c = [a[1] * v[2] - a[2] * v[1], a[2] * v[0] - a[0] * v[2], a[0] * v[1] - a[1] * v[0]];
        e += c[0] * c[0] + c[1] * c[1] + c[2] * c[2];
    }
    e
}

/// Energy minimizer over the grid `lo, lo + step, ..., hi`.
pub fn grid_search_depth(p: Pixel, k: &Intrinsics, views: &[(Pixel, RelativePose)], lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let d = lo + i as f64 * step;
        let e = projection_energy(p, k, views, d);
        if e < best.0 {
            best = (e, d);
        }
    }
    best.1
}
