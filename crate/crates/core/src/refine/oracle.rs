//! Geometric updater driven only by correlation evidence.

use rayon::prelude::*;

use super::{floor_depth, DepthUpdater, UpdateStep};
use crate::correlation::CorrelationVolume;
use crate::error::Result;
use crate::geometry::Pixel;
use crate::maps::DepthMap;
use crate::triangulation::{triangulate_pixel, Correspondence};

/// Hill-climbing steps allowed when snapping a window peak to the source grid.
const MAX_CLIMB: usize = 4;

/// Default floor on the peak correlation of a usable view, for unit-norm features.
pub const DEFAULT_MIN_PEAK: f32 = 0.5;

/// Turns each view's level-0 window peak into a corrected correspondence and
/// re-triangulates.
///
/// Per pixel and view: the window argmax gives an integer offset from the
/// reprojected position; the nearest source pixel is hill-climbed to a local
/// maximum of the level-0 volume and refined to sub-pixel precision with a
/// Gaussian fit over its neighbors. A view is skipped when its window peak
/// lies on the window border or its grid peak correlates below `min_peak`
/// (occluded or out of frame).
///
/// A pixel takes the new depth only if the mean peak correlation of its
/// correspondences beats that of the set behind its current depth, so
/// alternating between two peak sets is impossible. A pixel with no usable
/// view, or whose triangulation fails, keeps its previous depth.
#[derive(Debug, Clone)]
pub struct OracleUpdater {
    pub min_peak: f32,
    /// Mean peak correlation behind each pixel's current depth; NaN before the first update.
    scores: Vec<f32>,
}

impl Default for OracleUpdater {
    fn default() -> Self {
        Self {
            min_peak: DEFAULT_MIN_PEAK,
            scores: Vec::new(),
        }
    }
}

impl OracleUpdater {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Integer offset of the window maximum, or `None` if it is on the border.
fn window_argmax(window: &[f32], side: usize) -> Option<(i64, i64)> {
    let mut best = 0;
    for (i, v) in window.iter().enumerate() {
        if *v > window[best] {
            best = i;
        }
    }
    let (iy, ix) = (best / side, best % side);
    if iy == 0 || ix == 0 || iy + 1 == side || ix + 1 == side {
        return None;
    }
    let r = (side / 2) as i64;
    Some((ix as i64 - r, iy as i64 - r))
}

/// Vertex of the parabola through `(-1, l)`, `(0, c)`, `(1, r)` in `[-0.5, 0.5]`;
/// fitted to log values when all three are positive.
fn subpixel_offset(l: f32, c: f32, r: f32) -> f64 {
    let (mut l, mut c, mut r) = (l as f64, c as f64, r as f64);
    if l > 0.0 && c > 0.0 && r > 0.0 {
        (l, c, r) = (l.ln(), c.ln(), r.ln());
    }
    let curvature = l - 2.0 * c + r;
    if !(curvature < 0.0) {
        return 0.0;
    }
    (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
}

/// Sub-pixel local maximum of `C(py, px, ., .)` reached from `start` and its
/// grid value, or `None` when it sits on the source border or falls below `min_peak`.
fn grid_peak(vol: &CorrelationVolume, py: usize, px: usize, start: (i64, i64), min_peak: f32) -> Option<(Pixel, f32)> {
    let [_, _, sh, sw] = vol.dims();
    let slice = vol.slice(py, px);
    let at = |u: i64, v: i64| slice[v as usize * sw + u as usize];
    let (mut u, mut v) = (start.0.clamp(0, sw as i64 - 1), start.1.clamp(0, sh as i64 - 1));
    for _ in 0..MAX_CLIMB {
        let mut best = (u, v);
        for dv in -1..=1 {
            for du in -1..=1 {
                let (nu, nv) = (u + du, v + dv);
                if nu >= 0 && nv >= 0 && nu < sw as i64 && nv < sh as i64 && at(nu, nv) > at(best.0, best.1) {
                    best = (nu, nv);
                }
            }
        }
        if best == (u, v) {
            break;
        }
        (u, v) = best;
    }
    if u == 0 || v == 0 || u + 1 >= sw as i64 || v + 1 >= sh as i64 || at(u, v) < min_peak {
        return None;
    }
    let ox = subpixel_offset(at(u - 1, v), at(u, v), at(u + 1, v));
    let oy = subpixel_offset(at(u, v - 1), at(u, v), at(u, v + 1));
    Some((Pixel::new(u as f64 + ox, v as f64 + oy), at(u, v)))
}

impl DepthUpdater for OracleUpdater {
    fn update(&mut self, step: &UpdateStep<'_>) -> Result<DepthMap> {
        let w = step.depth.width();
        let side = step.lookup.window_side();
        let win = step.lookup.window_len();
        let k = *step.rig.intrinsics();
        let min_peak = self.min_peak;
        if self.scores.len() != step.depth.data().len() {
            self.scores = vec![f32::NAN; step.depth.data().len()];
        }
        let mut out = step.depth.clone();
        out.data_mut()
            .par_chunks_mut(w)
            .zip(self.scores.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (row, row_scores))| {
                let mut corr = Vec::with_capacity(step.views.len());
                for (x, (d, score)) in row.iter_mut().zip(row_scores.iter_mut()).enumerate() {
                    if *d <= 0.0 {
                        continue;
                    }
                    corr.clear();
                    let mut peak_sum = 0.0f32;
                    let views = step.views.iter().zip(step.pyramids).zip(step.rig.relative_poses());
                    for ((view, pyr), pose) in views {
                        let Some(pk) = view.targets[y * w + x] else {
                            continue;
                        };
                        let Some((dx, dy)) = window_argmax(&view.map.vector(y, x)[..win], side) else {
                            continue;
                        };
                        let start = ((pk.x + dx as f64).round() as i64, (pk.y + dy as f64).round() as i64);
                        let Some((peak, value)) = grid_peak(pyr.level(0), y, x, start, min_peak) else {
                            continue;
                        };
                        peak_sum += value;
                        corr.push(Correspondence {
                            pixel: peak,
                            pose: *pose,
                            intrinsics: k,
                        });
                    }
                    if corr.is_empty() {
                        continue;
                    }
                    let mean = peak_sum / corr.len() as f32;
                    if !score.is_nan() && mean <= *score {
                        continue;
                    }
                    if let Ok(t) = triangulate_pixel(Pixel::new(x as f64, y as f64), &corr) {
                        *d = floor_depth(t.depth, step.min_depth);
                        *score = mean;
                    }
                }
            });
        Ok(out)
    }
}
