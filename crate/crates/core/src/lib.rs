//! Correlation-guided multi-view depth estimation.
//!
//! Stages, in pipeline order:
//!
//! 1. [`correlation`]: all-pairs feature correlation, pooled pyramid and windowed lookup.
//! 2. [`triangulation`]: closed-form least-squares depth from flows.
//! 3. [`refine`]: iterative reprojection, correlation fusion and residual depth updates.
//! 4. [`upsample`]: three 2x fusion stages up to full resolution.
//! 5. [`metrics`]: depth error metrics and the sequence loss.
//!
//! [`synthscene`] generates scenes with exact ground truth and [`io`] holds the file formats.

pub mod correlation;
pub mod error;
pub mod geometry;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod nn;
pub mod refine;
pub mod synthscene;
pub mod triangulation;
pub mod upsample;

pub use error::{Error, Result};
pub use geometry::{CameraRig, Intrinsics, Pixel, Pose, RelativePose};
pub use maps::{DepthMap, FeatureMap, FlowField};
