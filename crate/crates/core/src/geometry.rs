//! Pinhole cameras, poses and the reference-to-source reprojection.
//!
//! Poses are stored camera-from-world: a world point `X` maps to camera
//! coordinates `R * X + t`. All geometry is computed in `f64`.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Tolerance on `R^T R = I` and `det R = 1` for in-memory poses.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Reprojections with a source-camera depth at or below this are behind the camera.
pub const MIN_POSITIVE_Z: f64 = 1e-9;

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K^-1 (x, y, 1)^T`, the normalized viewing ray with unit z.
    pub fn backproject(&self, p: Pixel) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    /// Intrinsics for the same camera sampled at `factor` times the resolution.
    ///
    /// Uses half-pixel-centered alignment: pixel centers sit at integer
    /// coordinates at every resolution.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
        }
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidPose("rotation has non-finite entries".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > tol {
        return Err(Error::InvalidPose(format!(
            "rotation is not orthonormal (max |R^T R - I| = {err:e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidPose(format!(
            "rotation determinant is {det}, expected 1"
        )));
    }
    Ok(())
}

fn check_translation(t: &Vector3<f64>) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidPose("translation has non-finite entries".into()))
    }
}

/// Camera-from-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.rotation, ROTATION_TOLERANCE)?;
        check_translation(&self.translation)
    }

    /// World point to camera coordinates.
    pub fn transform(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    /// Camera coordinates back to the world frame.
    pub fn inverse_transform(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Maps reference-camera coordinates to source-camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RelativePose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation, ROTATION_TOLERANCE)?;
        check_translation(&translation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

/// Relative transform taking reference-camera points into the source camera.
pub fn relative_pose(reference: &Pose, source: &Pose) -> Result<RelativePose> {
    reference.validate()?;
    source.validate()?;
    let rotation = source.rotation * reference.rotation.transpose();
    let translation = source.translation - rotation * reference.translation;
    Ok(RelativePose {
        rotation,
        translation,
    })
}

/// `d * K^-1 (x, y, 1)^T`; the z component equals `d`.
pub fn unproject(p: Pixel, depth: f64, k: &Intrinsics) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(depth));
    }
    let ray = k.backproject(p);
    Ok(Vector3::new(ray.x * depth, ray.y * depth, depth))
}

/// Perspective projection of a camera-frame point.
pub fn project(point: &Vector3<f64>, k: &Intrinsics) -> Result<Pixel> {
    if !(point.z > MIN_POSITIVE_Z) {
        return Err(Error::BehindCamera { z: point.z });
    }
    Ok(Pixel::new(
        k.fx * point.x / point.z + k.cx,
        k.fy * point.y / point.z + k.cy,
    ))
}

/// Maps reference pixel `p` at depth `depth` into the source view.
///
/// Returns the source pixel and the source-camera depth before division.
pub fn reproject(
    p: Pixel,
    depth: f64,
    k: &Intrinsics,
    rel: &RelativePose,
) -> Result<(Pixel, f64)> {
    let cam = rel.apply(&unproject(p, depth, k)?);
    let pixel = project(&cam, k)?;
    Ok((pixel, cam.z))
}

/// Shared intrinsics, the reference pose and every source pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    intrinsics: Intrinsics,
    reference: Pose,
    sources: Vec<Pose>,
    relative: Vec<RelativePose>,
}

impl CameraRig {
    pub fn new(intrinsics: Intrinsics, reference: Pose, sources: Vec<Pose>) -> Result<Self> {
        intrinsics.validate()?;
        let relative = sources
            .iter()
            .map(|s| relative_pose(&reference, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            intrinsics,
            reference,
            sources,
            relative,
        })
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn reference(&self) -> &Pose {
        &self.reference
    }

    pub fn sources(&self) -> &[Pose] {
        &self.sources
    }

    /// Reference-to-source transforms, one per source view.
    pub fn relative_poses(&self) -> &[RelativePose] {
        &self.relative
    }

    pub fn relative(&self, view: usize) -> &RelativePose {
        &self.relative[view]
    }

    pub fn view_count(&self) -> usize {
        self.sources.len()
    }

    /// The same rig with intrinsics rescaled by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            intrinsics: self.intrinsics.rescaled(factor),
            ..self.clone()
        }
    }
}

/// Rotation about a unit-free axis vector whose norm is the angle in radians.
pub fn rotation_from_axis_angle(axis_angle: Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::new(axis_angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k100() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn identical_poses_give_identity() {
        let pose = Pose::new(
            rotation_from_axis_angle(Vector3::new(0.1, -0.3, 0.2)),
            Vector3::new(1.0, 2.0, -0.5),
        )
        .unwrap();
        let rel = relative_pose(&pose, &pose).unwrap();
        assert!((rel.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(rel.translation.amax() < 1e-12);
    }

    #[test]
    fn pure_translation_relative_pose() {
        let src = Pose::new(Matrix3::identity(), Vector3::new(0.2, 0.0, 0.0)).unwrap();
        let rel = relative_pose(&Pose::identity(), &src).unwrap();
        assert_eq!(rel.rotation, Matrix3::identity());
        assert_eq!(rel.translation, Vector3::new(0.2, 0.0, 0.0));
    }

    #[test]
    fn non_orthonormal_pose_rejected() {
        let mut bad = Pose::identity();
        bad.rotation[(0, 0)] = 1.01;
        assert!(matches!(
            relative_pose(&bad, &Pose::identity()),
            Err(Error::InvalidPose(_))
        ));
        assert!(Pose::new(bad.rotation, bad.translation).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn unproject_principal_point() {
        let k = Intrinsics::new(320.0, 300.0, 31.5, 23.5).unwrap();
        let x = unproject(Pixel::new(31.5, 23.5), 1.0, &k).unwrap();
        assert_eq!(x, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn unproject_hand_value() {
        let x = unproject(Pixel::new(50.0, 0.0), 2.0, &k100()).unwrap();
        assert_eq!(x, Vector3::new(1.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_rejects_non_positive_depth() {
        assert!(matches!(
            unproject(Pixel::new(0.0, 0.0), 0.0, &k100()),
            Err(Error::InvalidDepth(_))
        ));
        assert!(unproject(Pixel::new(0.0, 0.0), -1.0, &k100()).is_err());
    }

    #[test]
    fn reproject_identity_and_translation() {
        let k = k100();
        let (q, z) = reproject(Pixel::new(12.25, -3.5), 3.0, &k, &RelativePose::identity()).unwrap();
        assert!((q.x - 12.25).abs() < 1e-12 && (q.y + 3.5).abs() < 1e-12);
        assert_eq!(z, 3.0);

        let rel = RelativePose::new(Matrix3::identity(), Vector3::new(-0.2, 0.0, 0.0)).unwrap();
        let (q, z) = reproject(Pixel::new(0.0, 0.0), 2.0, &k, &rel).unwrap();
        assert!((q.x + 10.0).abs() < 1e-12 && q.y.abs() < 1e-12);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn reproject_behind_camera() {
        let rel = RelativePose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -5.0)).unwrap();
        assert!(matches!(
            reproject(Pixel::new(0.0, 0.0), 2.0, &k100(), &rel),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn rescaled_intrinsics_keep_pixel_centers() {
        let k = Intrinsics::new(50.0, 50.0, 31.5, 23.5).unwrap();
        let k8 = k.rescaled(8.0);
        assert_eq!(k8.fx, 400.0);
        assert_eq!(k8.cx, 255.5);
        assert_eq!(k8.cy, 191.5);
    }
}
