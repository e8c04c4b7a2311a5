//! Iterative depth refinement: reproject every reference pixel into each
//! source view with the current depth, look up its correlation window, fuse
//! across views and hand the result to a [`DepthUpdater`].

mod gru;
mod oracle;

use rayon::prelude::*;

pub use gru::{
    depth_residual, depth_update_step, gru_cell, update_input, GruChannels, GruState, GruUpdater, GruWeights,
};
pub use oracle::{OracleUpdater, DEFAULT_MIN_PEAK};

use crate::correlation::{fuse_views, lookup_into, CorrelationFeatureMap, CorrelationPyramid, FusionStrategy, LookupConfig};
use crate::error::{Error, Result};
use crate::geometry::{reproject, CameraRig, Pixel};
use crate::maps::{DepthMap, FeatureMap};

/// Smallest depth an update may produce.
pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub iterations: usize,
    pub lookup: LookupConfig,
    pub fusion: FusionStrategy,
    pub min_depth: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: 12,
            lookup: LookupConfig::default(),
            fusion: FusionStrategy::Averaging,
            min_depth: DEFAULT_MIN_DEPTH,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        self.lookup.validate()?;
        if !(self.min_depth > 0.0 && self.min_depth.is_finite()) {
            return Err(Error::config(format!("min depth must be positive, got {}", self.min_depth)));
        }
        Ok(())
    }
}

pub(crate) fn floor_depth(d: f64, min_depth: f64) -> f64 {
    d.max(min_depth)
}

/// Looked-up correlation of one source view with the reprojected positions it was sampled at.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewCorrelation {
    pub map: CorrelationFeatureMap,
    /// Reprojected position per pixel; `None` where the point fell behind the camera.
    pub targets: Vec<Option<Pixel>>,
}

/// Everything an updater sees in one iteration.
pub struct UpdateStep<'a> {
    /// Zero-based iteration index.
    pub iteration: usize,
    pub depth: &'a DepthMap,
    pub fused: &'a CorrelationFeatureMap,
    pub views: &'a [ViewCorrelation],
    pub pyramids: &'a [CorrelationPyramid],
    pub rig: &'a CameraRig,
    pub lookup: &'a LookupConfig,
    pub min_depth: f64,
}

/// Produces `D_t` from `D_{t-1}` and the correlation evidence.
pub trait DepthUpdater {
    fn update(&mut self, step: &UpdateStep<'_>) -> Result<DepthMap>;
}

fn check_inputs(depth: &DepthMap, pyramids: &[CorrelationPyramid], rig: &CameraRig, cfg: &LookupConfig) -> Result<()> {
    if pyramids.is_empty() {
        return Err(Error::config("refinement needs at least one source view"));
    }
    if pyramids.len() != rig.view_count() {
        return Err(Error::shape(format!(
            "{} correlation pyramids for {} source views",
            pyramids.len(),
            rig.view_count()
        )));
    }
    cfg.validate()?;
    for pyr in pyramids {
        if pyr.grid() != (depth.height(), depth.width()) {
            let (h, w) = pyr.grid();
            return Err(Error::shape(format!(
                "pyramid grid {h}x{w} does not match depth {}x{}",
                depth.height(),
                depth.width()
            )));
        }
        if pyr.len() < cfg.levels {
            return Err(Error::config(format!(
                "lookup wants {} levels but a pyramid has {}",
                cfg.levels,
                pyr.len()
            )));
        }
    }
    Ok(())
}

/// Reprojects with `depth` and looks up every pixel in each view's pyramid.
///
/// Pixels with invalid depth or a behind-camera reprojection are marked invalid.
pub fn view_correlation_maps(
    depth: &DepthMap,
    pyramids: &[CorrelationPyramid],
    rig: &CameraRig,
    cfg: &LookupConfig,
) -> Result<Vec<ViewCorrelation>> {
    check_inputs(depth, pyramids, rig, cfg)?;
    let (h, w, len) = (depth.height(), depth.width(), cfg.feature_len());
    let k = rig.intrinsics();
    pyramids
        .iter()
        .zip(rig.relative_poses())
        .map(|(pyr, pose)| {
            let mut data = vec![0.0f32; h * w * len];
            let mut targets = vec![None; h * w];
            data.par_chunks_mut(w * len)
                .zip(targets.par_chunks_mut(w))
                .enumerate()
                .try_for_each(|(y, (row, row_targets))| -> Result<()> {
                    for x in 0..w {
                        let d = depth.get(y, x);
                        if d <= 0.0 {
                            continue;
                        }
                        let Ok((pk, _)) = reproject(Pixel::new(x as f64, y as f64), d, k, pose) else {
                            continue;
                        };
                        lookup_into(pyr, y, x, pk, cfg, &mut row[x * len..(x + 1) * len])?;
                        row_targets[x] = Some(pk);
                    }
                    Ok(())
                })?;
            let valid = targets.iter().map(Option::is_some).collect();
            Ok(ViewCorrelation {
                map: CorrelationFeatureMap::new(h, w, len, data, valid)?,
                targets,
            })
        })
        .collect()
}

/// One round of reprojection, lookup and cross-view fusion.
pub fn fuse_correlation_step(
    depth: &DepthMap,
    pyramids: &[CorrelationPyramid],
    rig: &CameraRig,
    cfg: &LookupConfig,
    strategy: FusionStrategy,
) -> Result<CorrelationFeatureMap> {
    let views = view_correlation_maps(depth, pyramids, rig, cfg)?;
    fuse(&views, strategy)
}

fn fuse(views: &[ViewCorrelation], strategy: FusionStrategy) -> Result<CorrelationFeatureMap> {
    let maps: Vec<CorrelationFeatureMap> = views.iter().map(|v| v.map.clone()).collect();
    fuse_views(&maps, strategy)
}

/// Runs `cfg.iterations` updates from `d0` and returns every iterate `D_1..D_N`.
///
/// Invalid pixels of `d0` are first seeded with the median valid depth.
pub fn refine_loop(
    d0: &DepthMap,
    pyramids: &[CorrelationPyramid],
    rig: &CameraRig,
    updater: &mut dyn DepthUpdater,
    cfg: &RefineConfig,
) -> Result<Vec<DepthMap>> {
    cfg.validate()?;
    check_inputs(d0, pyramids, rig, &cfg.lookup)?;
    let mut depth = if d0.valid_count() == d0.height() * d0.width() {
        d0.clone()
    } else {
        d0.seeded_with_median()?
    };
    let mut out = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let views = view_correlation_maps(&depth, pyramids, rig, &cfg.lookup)?;
        let fused = fuse(&views, cfg.fusion)?;
        let next = updater.update(&UpdateStep {
            iteration,
            depth: &depth,
            fused: &fused,
            views: &views,
            pyramids,
            rig,
            lookup: &cfg.lookup,
            min_depth: cfg.min_depth,
        })?;
        if !next.same_shape(&depth) {
            return Err(Error::shape("updater changed the depth map size"));
        }
        out.push(next.clone());
        depth = next;
    }
    Ok(out)
}

/// [`refine_loop`] with a [`GruUpdater`].
pub fn refine_with_gru(
    d0: &DepthMap,
    pyramids: &[CorrelationPyramid],
    rig: &CameraRig,
    context: Option<&FeatureMap>,
    weights: &GruWeights,
    cfg: &RefineConfig,
) -> Result<Vec<DepthMap>> {
    if weights.channels.correlation != cfg.lookup.feature_len() {
        return Err(Error::shape(format!(
            "weights expect correlation length {}, lookup gives {}",
            weights.channels.correlation,
            cfg.lookup.feature_len()
        )));
    }
    let mut updater = GruUpdater::new(weights, context, cfg.min_depth)?;
    refine_loop(d0, pyramids, rig, &mut updater, cfg)
}
