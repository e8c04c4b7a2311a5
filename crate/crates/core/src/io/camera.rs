//! Text camera files.
//!
//! One block per view, reference first:
//!
//! ```text
//! # comment
//! K fx fy cx cy
//! R r00 r01 r02 r10 r11 r12 r20 r21 r22
//! t tx ty tz
//! ```
//!
//! `R`, `t` are camera-from-world.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, Intrinsics, Pose};

/// Rotations in camera files must be orthonormal to this tolerance.
pub const FILE_ROTATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

fn line_error(line: usize, message: impl Into<String>) -> Error {
    Error::parse(format!("camera line {line}"), message)
}

fn numbers<const N: usize>(line: usize, key: &str, rest: &[&str]) -> Result<[f64; N]> {
    if rest.len() != N {
        return Err(line_error(
            line,
            format!("'{key}' needs {N} numbers, found {}", rest.len()),
        ));
    }
    let mut out = [0.0; N];
    for (slot, tok) in out.iter_mut().zip(rest) {
        *slot = tok
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| line_error(line, format!("invalid number '{tok}'")))?;
    }
    Ok(out)
}

/// Snaps a nearly orthonormal matrix onto SO(3).
fn orthonormalize(r: Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    u * v_t
}

fn parse_rotation(line: usize, values: [f64; 9]) -> Result<Matrix3<f64>> {
    let r = Matrix3::from_row_slice(&values);
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    let det = r.determinant();
    if err > FILE_ROTATION_TOLERANCE || (det - 1.0).abs() > FILE_ROTATION_TOLERANCE {
        return Err(line_error(
            line,
            format!("rotation is not orthonormal (max |R^T R - I| = {err:e}, det = {det})"),
        ));
    }
    if err > crate::geometry::ROTATION_TOLERANCE || (det - 1.0).abs() > crate::geometry::ROTATION_TOLERANCE {
        Ok(orthonormalize(r))
    } else {
        Ok(r)
    }
}

pub fn parse_cameras(text: &str) -> Result<Vec<CameraView>> {
    let mut views = Vec::new();
    let mut k: Option<(Intrinsics, usize)> = None;
    let mut r: Option<Matrix3<f64>> = None;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let Some((key, rest)) = tokens.split_first() else {
            continue;
        };
        match *key {
            "K" => {
                if k.is_some() {
                    return Err(line_error(line, "'K' before the previous block's 't'"));
                }
                let [fx, fy, cx, cy] = numbers::<4>(line, key, rest)?;
                let intr = Intrinsics::new(fx, fy, cx, cy).map_err(|e| line_error(line, e.to_string()))?;
                k = Some((intr, line));
            }
            "R" => {
                if k.is_none() || r.is_some() {
                    return Err(line_error(line, "'R' must follow 'K'"));
                }
                r = Some(parse_rotation(line, numbers::<9>(line, key, rest)?)?);
            }
            "t" => {
                let (Some((intrinsics, _)), Some(rotation)) = (k.take(), r.take()) else {
                    return Err(line_error(line, "'t' must follow 'K' and 'R'"));
                };
                let [tx, ty, tz] = numbers::<3>(line, key, rest)?;
                let pose = Pose::new(rotation, Vector3::new(tx, ty, tz)).map_err(|e| line_error(line, e.to_string()))?;
                views.push(CameraView { intrinsics, pose });
            }
            other => return Err(line_error(line, format!("unknown key '{other}'"))),
        }
    }
    if let Some((_, line)) = k {
        return Err(line_error(last_line.max(line), "incomplete camera block at end of file"));
    }
    if views.is_empty() {
        return Err(Error::parse("camera file", "no camera blocks"));
    }
    Ok(views)
}

pub fn format_cameras(views: &[CameraView]) -> String {
    let mut out = String::new();
    for (i, v) in views.iter().enumerate() {
        if i == 0 {
            out.push_str("# reference view\n");
        } else {
            out.push_str(&format!("# source view {i}\n"));
        }
        let k = &v.intrinsics;
        out.push_str(&format!("K {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy));
        out.push('R');
        for row in 0..3 {
            for col in 0..3 {
                out.push_str(&format!(" {}", v.pose.rotation[(row, col)]));
            }
        }
        out.push('\n');
        let t = &v.pose.translation;
        out.push_str(&format!("t {} {} {}\n", t.x, t.y, t.z));
    }
    out
}

/// Builds a rig from parsed views; all views must share one intrinsics.
pub fn rig_from_views(views: &[CameraView]) -> Result<CameraRig> {
    let (reference, sources) = views
        .split_first()
        .ok_or_else(|| Error::config("camera file has no views"))?;
    if sources.is_empty() {
        return Err(Error::config("camera file needs at least one source view"));
    }
    if let Some(i) = sources.iter().position(|v| v.intrinsics != reference.intrinsics) {
        return Err(Error::config(format!(
            "source view {} has different intrinsics; a rig shares one K",
            i + 1
        )));
    }
    CameraRig::new(
        reference.intrinsics,
        reference.pose,
        sources.iter().map(|v| v.pose).collect(),
    )
}

pub fn views_from_rig(rig: &CameraRig) -> Vec<CameraView> {
    std::iter::once(rig.reference())
        .chain(rig.sources())
        .map(|pose| CameraView {
            intrinsics: *rig.intrinsics(),
            pose: *pose,
        })
        .collect()
}
