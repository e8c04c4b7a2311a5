//! Flow-based depth initialization by closed-form multi-view triangulation.
//!
//! For a reference pixel `p` and correspondences `p_k`, the projection energy
//!
//! ```text
//! E(d) = sum_k |a_k x (b_k d + c_k)|^2,   a_k = K^-1 p_k,  b_k = R_k K^-1 p,  c_k = t_k
//! ```
//!
//! is quadratic in `d`, so its minimizer is
//! `d* = -sum_k (a_k x b_k).(a_k x c_k) / sum_k |a_k x b_k|^2`.

use rayon::prelude::*;

use crate::correlation::CorrelationVolume;
use crate::error::{Error, Result};
use crate::geometry::{CameraRig, Intrinsics, Pixel, RelativePose};
use crate::maps::{DepthMap, FlowField};

/// Below this `sum_k |a_k x b_k|^2` the depth is unobservable.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

/// One source-view observation of a reference pixel.
#[derive(Debug, Clone, Copy)]
pub struct Correspondence {
    pub pixel: Pixel,
    pub pose: RelativePose,
    pub intrinsics: Intrinsics,
}

/// Minimizing depth and the energy left at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub depth: f64,
    pub residual: f64,
}

/// Evaluates the projection energy at depth `d`.
pub fn projection_energy(p: Pixel, correspondences: &[Correspondence], d: f64) -> f64 {
    correspondences
        .iter()
        .map(|c| {
            let a = c.intrinsics.backproject(c.pixel);
            let b = c.pose.rotation * c.intrinsics.backproject(p);
            a.cross(&(b * d + c.pose.translation)).norm_squared()
        })
        .sum()
}

/// Least-squares depth of `p` from its correspondences.
pub fn triangulate_pixel(p: Pixel, correspondences: &[Correspondence]) -> Result<Triangulation> {
    if correspondences.is_empty() {
        return Err(Error::config("triangulation needs at least one correspondence"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for c in correspondences {
        let a = c.intrinsics.backproject(c.pixel);
        let b = c.pose.rotation * c.intrinsics.backproject(p);
        let ab = a.cross(&b);
        let ac = a.cross(&c.pose.translation);
        num += ab.dot(&ac);
        den += ab.norm_squared();
    }
    if !(den >= DEGENERACY_THRESHOLD) {
        return Err(Error::DegenerateGeometry(format!(
            "sum |a x b|^2 = {den:e} below {DEGENERACY_THRESHOLD:e} (pure rotation or zero parallax)"
        )));
    }
    let depth = -num / den;
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::NegativeDepth(depth));
    }
    Ok(Triangulation {
        depth,
        residual: projection_energy(p, correspondences, depth),
    })
}

/// Triangulates every reference pixel from the valid flows of each view.
///
/// Pixels without a valid flow in any view, or whose triangulation is
/// degenerate or non-positive, are left invalid (0).
pub fn init_depth_from_flows(flows: &[FlowField], rig: &CameraRig) -> Result<DepthMap> {
    let first = flows
        .first()
        .ok_or_else(|| Error::config("no flow fields given"))?;
    if flows.len() != rig.view_count() {
        return Err(Error::shape(format!(
            "{} flow fields for {} source views",
            flows.len(),
            rig.view_count()
        )));
    }
    let (h, w) = (first.height(), first.width());
    if flows.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(Error::shape("flow fields differ in size"));
    }
    if rig
        .relative_poses()
        .iter()
        .all(|r| r.translation.norm() < 1e-12)
    {
        return Err(Error::DegenerateGeometry(
            "zero baseline: every source view is a pure rotation of the reference".into(),
        ));
    }

    let k = *rig.intrinsics();
    let mut data = vec![0.0f64; h * w];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut corr = Vec::with_capacity(flows.len());
        for (x, out) in row.iter_mut().enumerate() {
            corr.clear();
            for (flow, pose) in flows.iter().zip(rig.relative_poses()) {
                if let Some([dx, dy]) = flow.get(y, x) {
                    corr.push(Correspondence {
                        pixel: Pixel::new(x as f64 + dx, y as f64 + dy),
                        pose: *pose,
                        intrinsics: k,
                    });
                }
            }
            if corr.is_empty() {
                continue;
            }
            if let Ok(t) = triangulate_pixel(Pixel::new(x as f64, y as f64), &corr) {
                *out = t.depth;
            }
        }
    });
    let depth = DepthMap::new(h, w, data)?;
    if depth.valid_count() == 0 {
        return Err(Error::EmptyResult(
            "triangulation produced no valid pixel".into(),
        ));
    }
    Ok(depth)
}

/// Integer flow from the level-0 argmax: `O(p) = argmax_q C(p, q) - p`.
///
/// Ties go to the smallest row-major `q`.
pub fn flow_from_correlation(volume: &CorrelationVolume) -> Result<FlowField> {
    if volume.level() != 0 {
        return Err(Error::config(format!(
            "flow needs a level-0 volume, got level {}",
            volume.level()
        )));
    }
    let [h, w, _, sw] = volume.dims();
    let mut flow = vec![[0.0f64; 2]; h * w];
    flow.par_iter_mut().enumerate().for_each(|(i, out)| {
        let (y, x) = (i / w, i % w);
        let slice = volume.slice(y, x);
        let mut best = 0;
        for (q, v) in slice.iter().enumerate() {
            if *v > slice[best] {
                best = q;
            }
        }
        let (v, u) = (best / sw, best % sw);
        *out = [u as f64 - x as f64, v as f64 - y as f64];
    });
    FlowField::new(h, w, flow, vec![true; h * w])
}
