//! Feature maps paired with per-frame spatial transforms.
//!
//! A [`WorldFeature`] couples a `(T, C, H, W)` feature map with a track of
//! per-frame pull transforms relating each frame to a shared world frame,
//! plus a validity mask marking observed pixels. World-coordinate layers
//! align each receptive field before applying ordinary conv/pool
//! arithmetic; the [`stabilize`] and [`gaze`] modules build tracks.

pub mod cli;
pub mod error;
pub mod gaze;
pub mod io;
pub mod sampler;
pub mod stabilize;
pub mod tensor;
pub mod worldops;
pub mod xform;

pub use error::{Error, Result};
pub use sampler::{warp_clip, warp_clip_to_reference, warp_frame, FrameView, InterpMode};
pub use tensor::{replicate_image, BoundingBox, FeatureMap, ValidityMask, WorldFeature};
pub use xform::{FrameTransform, TransformKind, TransformTrack};
