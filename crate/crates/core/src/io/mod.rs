//! File formats: `CORT` tensors, `CORW` named tensors, PFM images and text
//! camera files, plus conversions to the pipeline types.

mod camera;
mod pfm;
mod tensor;
mod weights;

use std::path::Path;

pub use camera::{
    format_cameras, parse_cameras, rig_from_views, views_from_rig, CameraView, FILE_ROTATION_TOLERANCE,
};
pub use pfm::{decode_pfm, encode_pfm, PfmImage};
pub use tensor::{decode_tensor, encode_tensor, Tensor, TENSOR_MAGIC, TENSOR_VERSION};
pub use weights::{decode_weights, encode_weights, WeightSet, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use crate::correlation::{CorrelationPyramid, CorrelationVolume};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::maps::{DepthMap, FeatureMap, FlowField};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Prefixes parse errors with the file they came from.
fn in_file<T>(path: &Path, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    in_file(path, decode_tensor(&read_bytes(path)?))
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_bytes(path, &encode_tensor(tensor)?)
}

pub fn read_weights(path: &Path) -> Result<WeightSet> {
    in_file(path, decode_weights(&read_bytes(path)?))
}

pub fn write_weights(path: &Path, set: &WeightSet) -> Result<()> {
    write_bytes(path, &encode_weights(set)?)
}

pub fn read_pfm(path: &Path) -> Result<PfmImage> {
    in_file(path, decode_pfm(&read_bytes(path)?))
}

pub fn write_pfm(path: &Path, image: &PfmImage) -> Result<()> {
    write_bytes(path, &encode_pfm(image)?)
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraView>> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::parse(path.display().to_string(), "not UTF-8 text"))?;
    in_file(path, parse_cameras(&text))
}

pub fn write_cameras(path: &Path, views: &[CameraView]) -> Result<()> {
    write_bytes(path, format_cameras(views).as_bytes())
}

pub fn read_rig(path: &Path) -> Result<CameraRig> {
    rig_from_views(&read_cameras(path)?)
}

pub fn write_rig(path: &Path, rig: &CameraRig) -> Result<()> {
    write_cameras(path, &views_from_rig(rig))
}

// Conversions between pipeline types and on-disk tensors.

pub fn depth_to_pfm(depth: &DepthMap) -> PfmImage {
    PfmImage::new(
        depth.width(),
        depth.height(),
        1,
        depth.data().iter().map(|d| *d as f32).collect(),
    )
    .expect("depth map dims are positive")
}

/// Single-channel PFM to depth; non-positive samples become invalid (0).
pub fn depth_from_pfm(image: &PfmImage) -> Result<DepthMap> {
    if image.channels() != 1 {
        return Err(Error::shape(format!(
            "depth PFM must have 1 channel, got {}",
            image.channels()
        )));
    }
    DepthMap::new(
        image.height(),
        image.width(),
        image.data().iter().map(|v| if *v > 0.0 { *v as f64 } else { 0.0 }).collect(),
    )
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    depth_from_pfm(&read_pfm(path)?)
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_pfm(path, &depth_to_pfm(depth))
}

pub fn feature_to_tensor(map: &FeatureMap) -> Tensor {
    Tensor::new(
        vec![map.height(), map.width(), map.channels()],
        map.data().to_vec(),
    )
    .expect("feature map dims are positive")
}

pub fn feature_from_tensor(tensor: &Tensor) -> Result<FeatureMap> {
    match *tensor.dims() {
        [h, w, c] => FeatureMap::new(h, w, c, tensor.data().to_vec()),
        _ => Err(Error::shape(format!(
            "feature tensor must be rank 3 (H x W x C), got {:?}",
            tensor.dims()
        ))),
    }
}

pub fn volume_to_tensor(volume: &CorrelationVolume) -> Tensor {
    Tensor::new(volume.dims().to_vec(), volume.data().to_vec()).expect("volume dims are positive")
}

pub fn volume_from_tensor(level: usize, tensor: &Tensor) -> Result<CorrelationVolume> {
    match *tensor.dims() {
        [h, w, sh, sw] => CorrelationVolume::new(level, [h, w, sh, sw], tensor.data().to_vec()),
        _ => Err(Error::shape(format!(
            "correlation tensor must be rank 4, got {:?}",
            tensor.dims()
        ))),
    }
}

/// Entry names used by the multi-tensor bundles written by the CLI.
pub mod names {
    pub const REFERENCE_FEATURES: &str = "ref";

    /// Source views are numbered from 1.
    pub fn source_features(view: usize) -> String {
        format!("src{view}")
    }

    pub fn context(scale: usize) -> String {
        format!("context{scale}")
    }

    pub fn pyramid_level(view: usize, level: usize) -> String {
        format!("view{view}.level{level}")
    }

    pub fn flow(view: usize) -> String {
        format!("flow{view}")
    }

    pub fn flow_valid(view: usize) -> String {
        format!("valid{view}")
    }
}

/// Reference map plus source maps `src1..srcM`.
pub fn features_to_set(reference: &FeatureMap, sources: &[FeatureMap]) -> Result<WeightSet> {
    let mut set = WeightSet::new();
    set.insert(names::REFERENCE_FEATURES, feature_to_tensor(reference))?;
    for (i, s) in sources.iter().enumerate() {
        set.insert(names::source_features(i + 1), feature_to_tensor(s))?;
    }
    Ok(set)
}

pub fn features_from_set(set: &WeightSet) -> Result<(FeatureMap, Vec<FeatureMap>)> {
    let reference = feature_from_tensor(set.require(names::REFERENCE_FEATURES)?)?;
    let mut sources = Vec::new();
    while let Some(t) = set.get(&names::source_features(sources.len() + 1)) {
        sources.push(feature_from_tensor(t)?);
    }
    if sources.is_empty() {
        return Err(Error::parse("features", "no source feature maps (src1, src2, ...)"));
    }
    Ok((reference, sources))
}

/// One pyramid per source view, views numbered from 1.
pub fn pyramids_to_set(pyramids: &[CorrelationPyramid]) -> Result<WeightSet> {
    let mut set = WeightSet::new();
    for (k, pyr) in pyramids.iter().enumerate() {
        for (l, vol) in pyr.levels().iter().enumerate() {
            set.insert(names::pyramid_level(k + 1, l), volume_to_tensor(vol))?;
        }
    }
    Ok(set)
}

pub fn pyramids_from_set(set: &WeightSet) -> Result<Vec<CorrelationPyramid>> {
    let mut pyramids = Vec::new();
    loop {
        let view = pyramids.len() + 1;
        let mut levels = Vec::new();
        while let Some(t) = set.get(&names::pyramid_level(view, levels.len())) {
            levels.push(volume_from_tensor(levels.len(), t)?);
        }
        if levels.is_empty() {
            break;
        }
        pyramids.push(CorrelationPyramid::from_levels(levels)?);
    }
    if pyramids.is_empty() {
        return Err(Error::parse("correlation", "no pyramid levels (view1.level0, ...)"));
    }
    Ok(pyramids)
}

/// Flows as `flowK` (H x W x 2) with `validK` (H x W, 1 = valid).
pub fn flows_to_set(flows: &[FlowField]) -> Result<WeightSet> {
    let mut set = WeightSet::new();
    for (k, f) in flows.iter().enumerate() {
        let (h, w) = (f.height(), f.width());
        let vectors = f
            .vectors()
            .iter()
            .zip(f.validity())
            .flat_map(|(v, ok)| if *ok { [v[0] as f32, v[1] as f32] } else { [0.0, 0.0] })
            .collect();
        let valid = f.validity().iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
        set.insert(names::flow(k + 1), Tensor::new(vec![h, w, 2], vectors)?)?;
        set.insert(names::flow_valid(k + 1), Tensor::new(vec![h, w], valid)?)?;
    }
    Ok(set)
}

pub fn flows_from_set(set: &WeightSet) -> Result<Vec<FlowField>> {
    let mut flows = Vec::new();
    while let Some(t) = set.get(&names::flow(flows.len() + 1)) {
        let k = flows.len() + 1;
        let [h, w, 2] = *t.dims() else {
            return Err(Error::shape(format!("flow{k} must be H x W x 2, got {:?}", t.dims())));
        };
        let valid: Vec<bool> = match set.get(&names::flow_valid(k)) {
            Some(v) if v.dims() == [h, w] => v.data().iter().map(|x| *x != 0.0).collect(),
            Some(v) => {
                return Err(Error::shape(format!("valid{k} must be {h} x {w}, got {:?}", v.dims())))
            }
            None => vec![true; h * w],
        };
        let vectors = t
            .data()
            .chunks_exact(2)
            .map(|c| [c[0] as f64, c[1] as f64])
            .collect();
        flows.push(FlowField::new(h, w, vectors, valid)?);
    }
    if flows.is_empty() {
        return Err(Error::parse("flows", "no flow fields (flow1, flow2, ...)"));
    }
    Ok(flows)
}
