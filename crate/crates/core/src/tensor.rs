//! Dense video tensors, validity masks and the `WorldFeature` pairing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xform::TransformTrack;

/// Dense real-valued video tensor laid out frame-major: `(T, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    t: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(dims: (usize, usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let (t, c, h, w) = dims;
        if t == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "feature map dims must be positive, got {t}x{c}x{h}x{w}"
            )));
        }
        let expected = t * c * h * w;
        if data.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: data.len(),
            });
        }
        Ok(FeatureMap { t, c, h, w, data })
    }

    pub fn zeros(dims: (usize, usize, usize, usize)) -> Result<Self> {
        let (t, c, h, w) = dims;
        Self::new(dims, vec![0.0; t * c * h * w])
    }

    /// Builds a clip from per-frame `(C, H, W)` buffers.
    pub fn from_frames(c: usize, h: usize, w: usize, frames: Vec<Vec<f32>>) -> Result<Self> {
        let t = frames.len();
        let frame_len = c * h * w;
        let mut data = Vec::with_capacity(t * frame_len);
        for (i, f) in frames.into_iter().enumerate() {
            if f.len() != frame_len {
                return Err(Error::contract(format!(
                    "frame {i} has {} values, expected {frame_len}",
                    f.len()
                )));
            }
            data.extend_from_slice(&f);
        }
        Self::new((t, c, h, w), data)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.t, self.c, self.h, self.w)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn frame_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// The `(C, H, W)` block of frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((t * self.c + c) * self.h + y) * self.w + x]
    }

    /// Frames `range` as a new clip.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t {
            return Err(Error::contract(format!(
                "frame range {start}..{end} invalid for T={}",
                self.t
            )));
        }
        let n = self.frame_len();
        Self::new(
            (end - start, self.c, self.h, self.w),
            self.data[start * n..end * n].to_vec(),
        )
    }
}

/// Repeats a single-frame map `frames` times along time, turning a still
/// image into an uneventful video.
pub fn replicate_image(img: &FeatureMap, frames: usize) -> Result<FeatureMap> {
    if img.t() != 1 {
        return Err(Error::contract(format!(
            "replicate_image needs a single frame, got T={}",
            img.t()
        )));
    }
    if frames == 0 {
        return Err(Error::contract("replicate_image needs frames >= 1"));
    }
    let mut data = Vec::with_capacity(frames * img.frame_len());
    for _ in 0..frames {
        data.extend_from_slice(img.data());
    }
    FeatureMap::new((frames, img.c(), img.h(), img.w()), data)
}

/// Per-pixel observation weight in `[0, 1]`, dims `(T, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityMask {
    t: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl ValidityMask {
    pub fn new(dims: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        let (t, h, w) = dims;
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::contract("validity dims must be positive"));
        }
        if data.len() != t * h * w {
            return Err(Error::Truncated {
                expected: t * h * w,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("validity value {v} outside [0, 1]")));
        }
        Ok(ValidityMask { t, h, w, data })
    }

    pub fn ones(dims: (usize, usize, usize)) -> Self {
        let (t, h, w) = dims;
        ValidityMask {
            t,
            h,
            w,
            data: vec![1.0; t * h * w],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.t, self.h, self.w)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.h * self.w;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn from_frames(h: usize, w: usize, frames: Vec<Vec<f32>>) -> Result<Self> {
        let t = frames.len();
        let mut data = Vec::with_capacity(t * h * w);
        for f in frames {
            if f.len() != h * w {
                return Err(Error::contract("validity frame has wrong size"));
            }
            data.extend_from_slice(&f);
        }
        Self::new((t, h, w), data)
    }
}

/// A feature map paired with the per-frame transforms that relate it to a
/// common world frame, plus a validity mask for missing data.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldFeature {
    features: FeatureMap,
    track: TransformTrack,
    validity: ValidityMask,
}

impl WorldFeature {
    pub fn new(features: FeatureMap, track: TransformTrack, validity: ValidityMask) -> Result<Self> {
        let (t, _, h, w) = features.dims();
        if track.len() != t {
            return Err(Error::contract(format!(
                "track length {} does not match T={t}",
                track.len()
            )));
        }
        if validity.dims() != (t, h, w) {
            return Err(Error::contract(format!(
                "validity dims {:?} do not match features (T,H,W)=({t},{h},{w})",
                validity.dims()
            )));
        }
        Ok(WorldFeature {
            features,
            track,
            validity,
        })
    }

    /// Fully observed features under the given track.
    pub fn observed(features: FeatureMap, track: TransformTrack) -> Result<Self> {
        let (t, _, h, w) = features.dims();
        Self::new(features, track, ValidityMask::ones((t, h, w)))
    }

    /// Fully observed features in camera coordinates (identity track).
    pub fn camera(features: FeatureMap) -> Self {
        let track = TransformTrack::identity(features.t());
        Self::observed(features, track).expect("identity track matches T")
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn track(&self) -> &TransformTrack {
        &self.track
    }

    pub fn validity(&self) -> &ValidityMask {
        &self.validity
    }

    pub fn into_parts(self) -> (FeatureMap, TransformTrack, ValidityMask) {
        (self.features, self.track, self.validity)
    }
}

/// Axis-aligned rectangle in continuous pixel coordinates, where integer
/// values sit on pixel centers (pixel `(i, j)` is the point `(i, j)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    #[serde(default)]
    pub t: Option<usize>,
    pub y0: f64,
    pub x0: f64,
    pub y1: f64,
    pub x1: f64,
}

impl BoundingBox {
    pub fn new(y0: f64, x0: f64, y1: f64, x1: f64) -> Result<Self> {
        let b = BoundingBox {
            t: None,
            y0,
            x0,
            y1,
            x1,
        };
        b.validate()?;
        Ok(b)
    }

    /// The box whose corners are the centers of the corner pixels.
    pub fn full_frame(h: usize, w: usize) -> Self {
        BoundingBox {
            t: None,
            y0: 0.0,
            x0: 0.0,
            y1: (h.max(1) - 1) as f64,
            x1: (w.max(1) - 1) as f64,
        }
    }

    pub fn at_frame(mut self, t: usize) -> Self {
        self.t = Some(t);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.y0, self.x0, self.y1, self.x1]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.y0 < self.y1) || !(self.x0 < self.x1) {
            return Err(Error::contract(format!(
                "degenerate box ({}, {}, {}, {})",
                self.y0, self.x0, self.y1, self.x1
            )));
        }
        Ok(())
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn area(&self) -> f64 {
        self.height().max(0.0) * self.width().max(0.0)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        if h <= 0.0 || w <= 0.0 {
            0.0
        } else {
            h * w
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Whether the box overlaps the pixel extent of an `h x w` frame.
    pub fn intersects_frame(&self, h: usize, w: usize) -> bool {
        let frame = BoundingBox {
            t: None,
            y0: -0.5,
            x0: -0.5,
            y1: h as f64 - 0.5,
            x1: w as f64 - 0.5,
        };
        self.intersection_area(&frame) > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_makes_identical_frames() {
        let mut data = vec![0.0; 2 * 3 * 4];
        data[0] = 7.0;
        let img = FeatureMap::new((1, 2, 3, 4), data).unwrap();
        let clip = replicate_image(&img, 3).unwrap();
        assert_eq!(clip.dims(), (3, 2, 3, 4));
        for t in 0..3 {
            assert_eq!(clip.get(t, 0, 0, 0), 7.0);
            assert_eq!(clip.frame(t), img.frame(0));
        }
        assert_eq!(replicate_image(&img, 1).unwrap(), img);
    }

    #[test]
    fn replicate_sixty_four_frames() {
        let img = FeatureMap::zeros((1, 3, 224, 224)).unwrap();
        let clip = replicate_image(&img, 64).unwrap();
        assert_eq!(clip.dims(), (64, 3, 224, 224));
    }

    #[test]
    fn replicate_rejects_clips() {
        let clip = FeatureMap::zeros((2, 1, 2, 2)).unwrap();
        assert!(matches!(replicate_image(&clip, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn feature_map_checks_length() {
        assert!(matches!(
            FeatureMap::new((2, 3, 4, 5), vec![0.0; 100]),
            Err(Error::Truncated {
                expected: 120,
                found: 100
            })
        ));
        assert!(FeatureMap::new((0, 1, 1, 1), vec![]).is_err());
    }

    #[test]
    fn validity_bounds() {
        assert!(ValidityMask::new((1, 1, 2), vec![0.0, 1.0]).is_ok());
        assert!(ValidityMask::new((1, 1, 2), vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn world_feature_rejects_mismatch() {
        let fm = FeatureMap::zeros((3, 1, 2, 2)).unwrap();
        let short = TransformTrack::identity(2);
        assert!(WorldFeature::observed(fm.clone(), short).is_err());
        let bad_mask = ValidityMask::ones((2, 2, 2));
        assert!(WorldFeature::new(fm.clone(), TransformTrack::identity(3), bad_mask).is_err());
        assert!(WorldFeature::observed(fm, TransformTrack::identity(3)).is_ok());
    }

    #[test]
    fn box_iou() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BoundingBox::new(1.0, 1.0, 3.0, 3.0).unwrap();
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(a.intersects_frame(4, 4));
        assert!(!BoundingBox::new(10.0, 10.0, 12.0, 12.0)
            .unwrap()
            .intersects_frame(4, 4));
    }
}
