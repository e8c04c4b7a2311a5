//! Synthetic scenes with analytic ground truth: ray-cast depth, exact flows
//! and positional features whose correlation peaks at true correspondences.
//!
//! Cameras are indexed 0 for the reference and `1..=m` for the sources.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{reproject, rotation_from_axis_angle, CameraRig, Intrinsics, Pixel, Pose};
use crate::maps::{DepthMap, FeatureMap, FlowField};
use crate::upsample::ContextPyramid;

/// Allowed ground-truth depth range.
pub const MIN_SCENE_DEPTH: f64 = 0.5;
pub const MAX_SCENE_DEPTH: f64 = 20.0;

/// Default positional feature width.
pub const DEFAULT_FEATURE_DIM: usize = 96;

/// Frequency scale of positional features, in inverse pixel footprints at the median reference depth.
pub const FEATURE_BANDWIDTH: f64 = 1.2;

/// Relative depth agreement under which a source camera sees the same surface point.
const VISIBILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceKind {
    FrontoParallelPlane,
    TiltedPlane,
    Sphere,
    Step,
}

impl SurfaceKind {
    pub const ALL: [SurfaceKind; 4] = [
        SurfaceKind::FrontoParallelPlane,
        SurfaceKind::TiltedPlane,
        SurfaceKind::Sphere,
        SurfaceKind::Step,
    ];
}

impl FromStr for SurfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::FrontoParallelPlane),
            "tilted" => Ok(Self::TiltedPlane),
            "sphere" => Ok(Self::Sphere),
            "step" => Ok(Self::Step),
            other => Err(Error::config(format!(
                "unknown surface '{other}' (plane, tilted, sphere, step)"
            ))),
        }
    }
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::FrontoParallelPlane => "plane",
            Self::TiltedPlane => "tilted",
            Self::Sphere => "sphere",
            Self::Step => "step",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Feature-resolution grid.
    pub height: usize,
    pub width: usize,
    /// Focal length as a fraction of the width.
    pub focal_ratio: f64,
    /// Plane depth, tilted-plane anchor depth, sphere center depth or near step depth.
    pub depth: f64,
    /// Sphere background plane or far step depth.
    pub far_depth: f64,
    /// Tilted-plane normal, not necessarily unit.
    pub normal: [f64; 3],
    pub sphere_radius: f64,
    /// Largest source camera offset from the reference center.
    pub baseline: f64,
    /// Largest per-axis source rotation, radians.
    pub max_rotation: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 48,
            width: 64,
            focal_ratio: 0.8,
            depth: 4.0,
            far_depth: 6.0,
            normal: [0.0, 0.2, 1.0],
            sphere_radius: 1.0,
            baseline: 0.4,
            max_rotation: 0.02,
        }
    }
}

impl SceneParams {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let f = self.focal_ratio * self.width as f64;
        Intrinsics::new(f, f, (self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene grid must be non-empty"));
        }
        let finite = [
            self.focal_ratio,
            self.depth,
            self.far_depth,
            self.sphere_radius,
            self.baseline,
            self.max_rotation,
        ]
        .iter()
        .chain(&self.normal)
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("scene parameters must be finite"));
        }
        if !(self.depth > 0.0 && self.far_depth > 0.0 && self.sphere_radius > 0.0) {
            return Err(Error::config("surface depths and radius must be positive"));
        }
        if self.baseline < 0.0 || self.max_rotation < 0.0 {
            return Err(Error::config("baseline and rotation bounds must be non-negative"));
        }
        if Vector3::from(self.normal).norm() == 0.0 {
            return Err(Error::config("tilted-plane normal must be non-zero"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    fn through(normal: Vector3<f64>, point: Vector3<f64>) -> Self {
        let normal = normal.normalize();
        Self {
            normal,
            offset: normal.dot(&point),
        }
    }

    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let den = self.normal.dot(dir);
        if den == 0.0 {
            return None;
        }
        let s = (self.offset - self.normal.dot(origin)) / den;
        (s > 0.0).then_some(s)
    }
}

/// World-space geometry of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Plane(Plane),
    Sphere {
        center: Vector3<f64>,
        radius: f64,
        background: Plane,
    },
    /// Fronto planes at `near` (world `x < 0`) and `far` (`x >= 0`) joined by a wall at `x = 0`.
    Step { near: f64, far: f64 },
}

impl Surface {
    fn new(kind: SurfaceKind, p: &SceneParams) -> Self {
        let z = Vector3::z();
        match kind {
            SurfaceKind::FrontoParallelPlane => Surface::Plane(Plane::through(z, z * p.depth)),
            SurfaceKind::TiltedPlane => Surface::Plane(Plane::through(Vector3::from(p.normal), z * p.depth)),
            SurfaceKind::Sphere => Surface::Sphere {
                center: z * p.depth,
                radius: p.sphere_radius,
                background: Plane::through(z, z * p.far_depth),
            },
            SurfaceKind::Step => Surface::Step {
                near: p.depth,
                far: p.far_depth,
            },
        }
    }

    /// Smallest positive ray parameter of a hit along `origin + s * dir`.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Surface::Plane(plane) => plane.hit(origin, dir),
            Surface::Sphere {
                center,
                radius,
                background,
            } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = dir.dot(&oc);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                let sphere = if disc >= 0.0 {
                    let root = disc.sqrt();
                    [(-b - root) / a, (-b + root) / a].into_iter().find(|s| *s > 0.0)
                } else {
                    None
                };
                sphere.or_else(|| background.hit(origin, dir))
            }
            Surface::Step { near, far } => {
                let z = Vector3::z();
                let (lo, hi) = (near.min(*far), near.max(*far));
                let near_hit = Plane::through(z, z * *near)
                    .hit(origin, dir)
                    .filter(|s| (origin + dir * *s).x < 0.0);
                let far_hit = Plane::through(z, z * *far)
                    .hit(origin, dir)
                    .filter(|s| (origin + dir * *s).x >= 0.0);
                let wall_hit = Plane::through(Vector3::x(), Vector3::zeros())
                    .hit(origin, dir)
                    .filter(|s| (lo..=hi).contains(&(origin + dir * *s).z));
                [near_hit, far_hit, wall_hit].into_iter().flatten().min_by(f64::total_cmp)
            }
        }
    }
}

/// A generated scene: rig, surface and per-camera ground-truth depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub kind: SurfaceKind,
    pub params: SceneParams,
    pub seed: u64,
    rig: CameraRig,
    surface: Surface,
    depths: Vec<DepthMap>,
}

fn sample_source_pose(rng: &mut SplitMix64, p: &SceneParams) -> Pose {
    let dir = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-0.2..=0.2),
        );
        if v.norm() > 1e-3 {
            break v.normalize();
        }
    };
    let center = dir * p.baseline * rng.random_range(0.75..=1.0);
    let mut angles = [0.0; 3];
    for a in &mut angles {
        *a = if p.max_rotation > 0.0 {
            rng.random_range(-p.max_rotation..=p.max_rotation)
        } else {
            0.0
        };
    }
    let rotation = rotation_from_axis_angle(Vector3::from(angles));
    Pose {
        rotation,
        translation: -(rotation * center),
    }
}

/// Builds a scene of `views` source cameras around an identity reference.
pub fn make_scene(kind: SurfaceKind, params: SceneParams, views: usize, seed: u64) -> Result<Scene> {
    if views == 0 {
        return Err(Error::config("a scene needs at least one source view"));
    }
    params.validate()?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    let sources = (0..views).map(|_| sample_source_pose(&mut rng, &params)).collect();
    let mut scene = scene_with_poses(kind, params, sources)?;
    scene.seed = seed;
    Ok(scene)
}

/// Scene with an identity reference and the given source poses.
pub fn scene_with_poses(kind: SurfaceKind, params: SceneParams, sources: Vec<Pose>) -> Result<Scene> {
    if sources.is_empty() {
        return Err(Error::config("a scene needs at least one source view"));
    }
    params.validate()?;
    let k = params.intrinsics()?;
    let views = sources.len();
    let rig = CameraRig::new(k, Pose::identity(), sources)?;
    let surface = Surface::new(kind, &params);
    let mut scene = Scene {
        kind,
        params,
        seed: 0,
        rig,
        surface,
        depths: Vec::new(),
    };
    scene.depths = (0..=views)
        .map(|cam| scene.render_depth(cam, &k, params.height, params.width))
        .collect::<Result<_>>()?;
    Ok(scene)
}

impl Scene {
    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn view_count(&self) -> usize {
        self.rig.view_count()
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    /// Pose of camera `cam` (0 = reference).
    pub fn pose(&self, cam: usize) -> &Pose {
        if cam == 0 {
            self.rig.reference()
        } else {
            &self.rig.sources()[cam - 1]
        }
    }

    /// Ground-truth depth of camera `cam` at feature resolution.
    pub fn depth(&self, cam: usize) -> &DepthMap {
        &self.depths[cam]
    }

    pub fn reference_depth(&self) -> &DepthMap {
        &self.depths[0]
    }

    /// Ray-cast depth through the continuous pixel `p` of camera `cam`.
    pub fn surface_depth(&self, cam: usize, p: Pixel, k: &Intrinsics) -> Option<f64> {
        let pose = self.pose(cam);
        let dir = pose.rotation.transpose() * k.backproject(p);
        self.surface.cast(&pose.center(), &dir)
    }

    fn render_depth(&self, cam: usize, k: &Intrinsics, height: usize, width: usize) -> Result<DepthMap> {
        let mut data = vec![0.0; height * width];
        data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
            for (x, d) in row.iter_mut().enumerate() {
                *d = self
                    .surface_depth(cam, Pixel::new(x as f64, y as f64), k)
                    .unwrap_or(f64::NAN);
            }
        });
        if let Some(bad) = data
            .iter()
            .find(|d| !(**d >= MIN_SCENE_DEPTH && **d <= MAX_SCENE_DEPTH))
        {
            return Err(Error::config(format!(
                "camera {cam} sees depth {bad} outside [{MIN_SCENE_DEPTH}, {MAX_SCENE_DEPTH}]"
            )));
        }
        DepthMap::new(height, width, data)
    }

    /// Reference depth on a grid `factor` times finer than the feature grid.
    pub fn reference_depth_at_scale(&self, factor: usize) -> Result<DepthMap> {
        let k = self.rig.intrinsics().rescaled(factor as f64);
        self.render_depth(0, &k, self.height() * factor, self.width() * factor)
    }

    /// World point seen by pixel `(y, x)` of camera `cam`.
    pub fn world_point(&self, cam: usize, y: usize, x: usize) -> Vector3<f64> {
        let k = self.rig.intrinsics();
        let cam_point = k.backproject(Pixel::new(x as f64, y as f64)) * self.depths[cam].get(y, x);
        self.pose(cam).inverse_transform(&cam_point)
    }

    fn in_frame(&self, p: Pixel) -> bool {
        let (w, h) = (self.width() as f64, self.height() as f64);
        p.x >= -0.5 && p.x < w - 0.5 && p.y >= -0.5 && p.y < h - 0.5
    }
}

/// Exact flow into source `source` (1-based): `reproject(p, D_gt(p)) - p`.
///
/// Valid where the reprojection lands in frame (within half a pixel of the
/// border pixel centers) in front of the camera.
pub fn gt_flow(scene: &Scene, source: usize) -> Result<FlowField> {
    if source == 0 || source > scene.view_count() {
        return Err(Error::config(format!(
            "source index {source} outside 1..={}",
            scene.view_count()
        )));
    }
    let (h, w) = (scene.height(), scene.width());
    let k = scene.rig.intrinsics();
    let pose = scene.rig.relative(source - 1);
    let depth = scene.reference_depth();
    let mut flow = vec![[0.0; 2]; h * w];
    let mut valid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let p = Pixel::new(x as f64, y as f64);
            if let Ok((pk, _)) = reproject(p, depth.get(y, x), k, pose) {
                if scene.in_frame(pk) {
                    flow[y * w + x] = [pk.x - p.x, pk.y - p.y];
                    valid[y * w + x] = true;
                }
            }
        }
    }
    FlowField::new(h, w, flow, valid)
}

/// All exact flows, one per source.
pub fn gt_flows(scene: &Scene) -> Result<Vec<FlowField>> {
    (1..=scene.view_count()).map(|s| gt_flow(scene, s)).collect()
}

/// Pixels whose ground-truth flow into `source` is valid and unoccluded.
pub fn mutually_visible(scene: &Scene, source: usize) -> Result<Vec<bool>> {
    let flow = gt_flow(scene, source)?;
    let k = scene.rig.intrinsics();
    let pose = scene.rig.relative(source - 1);
    let depth = scene.reference_depth();
    let (h, w) = (scene.height(), scene.width());
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let Some([dx, dy]) = flow.get(y, x) else {
                continue;
            };
            let p = Pixel::new(x as f64, y as f64);
            let (_, z) = reproject(p, depth.get(y, x), k, pose)?;
            let pk = Pixel::new(x as f64 + dx, y as f64 + dy);
            if let Some(seen) = scene.surface_depth(source, pk, k) {
                out[y * w + x] = (seen - z).abs() <= VISIBILITY_TOLERANCE * z;
            }
        }
    }
    Ok(out)
}

/// Random Fourier encoding `[cos(w_i . X), sin(w_i . X)] / sqrt(P)` of 3D points.
///
/// Frequencies come in mutually orthogonal triples sharing one norm, so the
/// second-order shape of the induced kernel is isotropic.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    dim: usize,
    frequencies: Vec<Vector3<f64>>,
}

impl PositionalEncoding {
    /// `bandwidth` is the per-axis standard deviation of the frequencies.
    pub fn new(dim: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if dim < 16 {
            return Err(Error::config(format!("positional features need dim >= 16, got {dim}")));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        let pairs = dim / 2;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let mut frequencies = Vec::with_capacity(pairs);
        while frequencies.len() < pairs {
            let m = Matrix3::from_fn(|_, _| normal());
            let q = m.qr().q();
            let radius = Vector3::new(normal(), normal(), normal()).norm() * bandwidth;
            for c in 0..3 {
                if frequencies.len() < pairs {
                    frequencies.push(q.column(c).into_owned() * radius);
                }
            }
        }
        Ok(Self { dim, frequencies })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the unit-norm encoding of `point`; an odd trailing channel stays 0.
    pub fn encode_into(&self, point: &Vector3<f64>, out: &mut [f32]) {
        let norm = (self.frequencies.len() as f64).sqrt().recip();
        for (i, w) in self.frequencies.iter().enumerate() {
            let phase = w.dot(point);
            out[2 * i] = (phase.cos() * norm) as f32;
            out[2 * i + 1] = (phase.sin() * norm) as f32;
        }
        out[2 * self.frequencies.len()..].fill(0.0);
    }

    pub fn encode(&self, point: &Vector3<f64>) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(point, &mut out);
        out
    }
}

/// Encoding used for a scene's features: bandwidth tied to the pixel footprint at the median reference depth.
pub fn scene_encoding(scene: &Scene, dim: usize, seed: u64) -> Result<PositionalEncoding> {
    let median = scene.reference_depth().valid_median().unwrap_or(scene.params.depth);
    let footprint = median / scene.rig.intrinsics().fx;
    PositionalEncoding::new(dim, FEATURE_BANDWIDTH / footprint, seed)
}

/// Features of camera `cam`: the encoding of the world point each pixel sees.
pub fn positional_features(scene: &Scene, cam: usize, dim: usize, seed: u64) -> Result<FeatureMap> {
    let enc = scene_encoding(scene, dim, seed)?;
    encode_camera(scene, cam, &enc)
}

fn encode_camera(scene: &Scene, cam: usize, enc: &PositionalEncoding) -> Result<FeatureMap> {
    if cam > scene.view_count() {
        return Err(Error::config(format!("camera index {cam} outside 0..={}", scene.view_count())));
    }
    let (h, w, d) = (scene.height(), scene.width(), enc.dim());
    let mut data = vec![0.0f32; h * w * d];
    data.par_chunks_mut(w * d).enumerate().for_each(|(y, row)| {
        for (x, out) in row.chunks_exact_mut(d).enumerate() {
            enc.encode_into(&scene.world_point(cam, y, x), out);
        }
    });
    FeatureMap::new(h, w, d, data)
}

/// Reference and source features sharing one encoding.
pub fn scene_features(scene: &Scene, dim: usize, seed: u64) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    let enc = scene_encoding(scene, dim, seed)?;
    let reference = encode_camera(scene, 0, &enc)?;
    let sources = (1..=scene.view_count())
        .map(|cam| encode_camera(scene, cam, &enc))
        .collect::<Result<_>>()?;
    Ok((reference, sources))
}

/// Context maps for the reference view: `F3` at feature resolution, `F2` and
/// `F1` at 2x and 4x, each an encoding of the observed world points.
pub fn context_pyramid(scene: &Scene, channels: [usize; 3], seed: u64) -> Result<ContextPyramid> {
    let k = *scene.rig.intrinsics();
    let level = |factor: usize, dim: usize, salt: u64| -> Result<FeatureMap> {
        let enc = scene_encoding(scene, dim, seed ^ salt)?;
        let kk = k.rescaled(factor as f64);
        let depth = scene.render_depth(0, &kk, scene.height() * factor, scene.width() * factor)?;
        let (h, w) = (depth.height(), depth.width());
        let mut data = vec![0.0f32; h * w * dim];
        data.par_chunks_mut(w * dim).enumerate().for_each(|(y, row)| {
            for (x, out) in row.chunks_exact_mut(dim).enumerate() {
                let cam_point = kk.backproject(Pixel::new(x as f64, y as f64)) * depth.get(y, x);
                enc.encode_into(&scene.pose(0).inverse_transform(&cam_point), out);
            }
        });
        FeatureMap::new(h, w, dim, data)
    };
    ContextPyramid::new(level(4, channels[0], 0x11)?, level(2, channels[1], 0x22)?, level(1, channels[2], 0x33)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneParams {
        SceneParams {
            height: 12,
            width: 16,
            ..Default::default()
        }
    }

    #[test]
    fn fronto_plane_depth_is_constant() {
        let s = make_scene(SurfaceKind::FrontoParallelPlane, small(), 2, 1).unwrap();
        assert!(s.reference_depth().data().iter().all(|d| *d == 4.0));
    }

    #[test]
    fn tilted_plane_matches_ray_plane_intersection() {
        let s = make_scene(SurfaceKind::TiltedPlane, small(), 1, 1).unwrap();
        let k = s.rig().intrinsics();
        let n = Vector3::new(0.0, 0.2, 1.0).normalize();
        for y in 0..12 {
            for x in 0..16 {
                let ray = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                let expect = n.dot(&Vector3::new(0.0, 0.0, 4.0)) / n.dot(&ray);
                assert!((s.reference_depth().get(y, x) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_depth_is_config_error() {
        let p = SceneParams { depth: 30.0, ..small() };
        assert!(matches!(make_scene(SurfaceKind::FrontoParallelPlane, p, 1, 0), Err(Error::Config(_))));
        assert!(matches!(make_scene(SurfaceKind::Sphere, small(), 0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_scene(SurfaceKind::Sphere, small(), 3, 42).unwrap();
        let b = make_scene(SurfaceKind::Sphere, small(), 3, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_scene(SurfaceKind::Sphere, small(), 3, 43).unwrap());
    }

    #[test]
    fn step_has_two_depths() {
        let s = make_scene(SurfaceKind::Step, small(), 1, 3).unwrap();
        let d = s.reference_depth();
        assert_eq!(d.get(5, 0), 4.0);
        assert_eq!(d.get(5, 15), 6.0);
    }

    #[test]
    fn encoding_has_unit_norm() {
        let enc = PositionalEncoding::new(48, 10.0, 7).unwrap();
        let v = enc.encode(&Vector3::new(0.3, -1.0, 4.0));
        let n: f64 = v.iter().map(|x| (*x as f64).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(PositionalEncoding::new(8, 1.0, 0).is_err());
    }

    #[test]
    fn context_pyramid_sizes() {
        let s = make_scene(SurfaceKind::TiltedPlane, small(), 1, 3).unwrap();
        let ctx = context_pyramid(&s, [32, 48, 64], 1).unwrap();
        assert_eq!((ctx.level(1).height(), ctx.level(1).width(), ctx.level(1).channels()), (48, 64, 32));
        assert_eq!((ctx.level(3).height(), ctx.level(3).channels()), (12, 64));
    }
}
