//! Transform algebra on normalized, corner-aligned frame coordinates.
//!
//! A point is `(y, x)` with `(-1, -1)` at the center of the top-left pixel
//! and `(1, 1)` at the center of the bottom-right pixel, so a transform is
//! independent of the resolution of the frame it is applied to.
//!
//! Every transform has pull semantics: it maps an output location to the
//! source location that output reads, `out(p) = src(tf(p))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant floor below which a transform is treated as singular.
pub const DET_FLOOR: f64 = 1e-12;

pub type Point = (f64, f64);

/// Normalized coordinate of pixel index `i` along an axis of length `n`.
#[inline]
pub fn pixel_to_norm(i: f64, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i / (n - 1) as f64
    }
}

/// Continuous pixel coordinate of a normalized coordinate along an axis of
/// length `n`. A length-1 axis maps normalized 0 onto pixel 0.
#[inline]
pub fn norm_to_pixel(v: f64, n: usize) -> f64 {
    if n <= 1 {
        v
    } else {
        (v + 1.0) * (n - 1) as f64 * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Affine,
    Homography,
}

impl TransformKind {
    pub fn param_len(self) -> usize {
        match self {
            TransformKind::Affine => 6,
            TransformKind::Homography => 9,
        }
    }

    /// Number of parameters an optimizer is free to move.
    pub fn free_len(self) -> usize {
        match self {
            TransformKind::Affine => 6,
            TransformKind::Homography => 8,
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(TransformKind::Affine),
            "homography" => Ok(TransformKind::Homography),
            other => Err(Error::Format(format!("unknown transform kind {other:?}"))),
        }
    }
}

/// One 2D affine or homography transform.
///
/// Affine parameters follow the layout
/// `(y, x) -> (a0*y + a1*x + a2, a3*y + a4*x + a5)`; a homography is the
/// row-major 3x3 matrix acting on `(y, x, 1)` with its last entry fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    kind: TransformKind,
    m: [f64; 9],
}

impl Default for FrameTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl FrameTransform {
    pub fn identity() -> Self {
        FrameTransform {
            kind: TransformKind::Affine,
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    pub fn affine(a: [f64; 6]) -> Self {
        FrameTransform {
            kind: TransformKind::Affine,
            m: [a[0], a[1], a[2], a[3], a[4], a[5], 0.0, 0.0, 1.0],
        }
    }

    /// Builds a homography, rescaling so the last entry is 1.
    pub fn homography(h: [f64; 9]) -> Result<Self> {
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericDomain("non-finite homography entry".into()));
        }
        if h[8].abs() <= DET_FLOOR {
            return Err(Error::NumericDomain(
                "homography with zero last entry cannot be normalized".into(),
            ));
        }
        let s = 1.0 / h[8];
        let mut m = h.map(|v| v * s);
        m[8] = 1.0;
        Ok(FrameTransform {
            kind: TransformKind::Homography,
            m,
        })
    }

    pub fn from_params(kind: TransformKind, params: &[f64]) -> Result<Self> {
        if params.len() != kind.param_len() {
            return Err(Error::Format(format!(
                "{kind:?} transform needs {} parameters, got {}",
                kind.param_len(),
                params.len()
            )));
        }
        match kind {
            TransformKind::Affine => {
                let mut a = [0.0; 6];
                a.copy_from_slice(params);
                Ok(Self::affine(a))
            }
            TransformKind::Homography => {
                let mut h = [0.0; 9];
                h.copy_from_slice(params);
                Self::homography(h)
            }
        }
    }

    /// Translation by `(dy, dx)` in normalized units.
    pub fn translate(dy: f64, dx: f64) -> Self {
        Self::affine([1.0, 0.0, dy, 0.0, 1.0, dx])
    }

    /// Translation by a pixel offset on an `h x w` grid.
    pub fn translate_pixels(dy: f64, dx: f64, h: usize, w: usize) -> Self {
        let sy = if h > 1 { 2.0 / (h - 1) as f64 } else { 0.0 };
        let sx = if w > 1 { 2.0 / (w - 1) as f64 } else { 0.0 };
        Self::translate(dy * sy, dx * sx)
    }

    pub fn scale(s: f64) -> Self {
        Self::scale_xy(s, s)
    }

    pub fn scale_xy(sy: f64, sx: f64) -> Self {
        Self::affine([sy, 0.0, 0.0, 0.0, sx, 0.0])
    }

    /// Rotation about the normalized origin by `theta` radians.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::affine([c, -s, 0.0, s, c, 0.0])
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    /// Parameters in the file layout for this transform's kind.
    pub fn params(&self) -> &[f64] {
        &self.m[..self.kind.param_len()]
    }

    /// Row-major 3x3 homogeneous matrix on `(y, x, 1)`.
    pub fn matrix(&self) -> [f64; 9] {
        self.m
    }

    pub fn is_identity(&self) -> bool {
        self.m == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    }

    pub fn to_homography(self) -> Self {
        FrameTransform {
            kind: TransformKind::Homography,
            m: self.m,
        }
    }

    /// Parameters an optimizer may move: 6 for affine, the first 8 matrix
    /// entries for a homography.
    pub fn free_params(&self) -> Vec<f64> {
        self.m[..self.kind.free_len()].to_vec()
    }

    pub fn from_free_params(kind: TransformKind, p: &[f64]) -> Result<Self> {
        match kind {
            TransformKind::Affine => Self::from_params(kind, p),
            TransformKind::Homography => {
                if p.len() != 8 {
                    return Err(Error::contract("homography has 8 free parameters"));
                }
                let mut h = [1.0; 9];
                h[..8].copy_from_slice(p);
                Ok(FrameTransform { kind, m: h })
            }
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
            + m[2] * (m[3] * m[7] - m[4] * m[6])
    }

    pub fn apply_point(&self, p: Point) -> Result<Point> {
        let (y, x) = p;
        let m = &self.m;
        match self.kind {
            TransformKind::Affine => Ok((m[0] * y + m[1] * x + m[2], m[3] * y + m[4] * x + m[5])),
            TransformKind::Homography => {
                let d = m[6] * y + m[7] * x + m[8];
                if d.abs() <= DET_FLOOR {
                    return Err(Error::NumericDomain(format!(
                        "homography sends ({y}, {x}) to infinity"
                    )));
                }
                Ok((
                    (m[0] * y + m[1] * x + m[2]) / d,
                    (m[3] * y + m[4] * x + m[5]) / d,
                ))
            }
        }
    }

    /// `a ∘ b`: the transform that applies `b` first, then `a`.
    pub fn compose(&self, b: &FrameTransform) -> FrameTransform {
        let x = &self.m;
        let y = &b.m;
        let mut m = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                m[r * 3 + c] = x[r * 3] * y[c] + x[r * 3 + 1] * y[3 + c] + x[r * 3 + 2] * y[6 + c];
            }
        }
        if self.kind == TransformKind::Affine && b.kind == TransformKind::Affine {
            m[6] = 0.0;
            m[7] = 0.0;
            m[8] = 1.0;
            FrameTransform {
                kind: TransformKind::Affine,
                m,
            }
        } else {
            let s = 1.0 / m[8];
            FrameTransform {
                kind: TransformKind::Homography,
                m: m.map(|v| v * s),
            }
        }
    }

    pub fn invert(&self) -> Result<FrameTransform> {
        let m = &self.m;
        match self.kind {
            TransformKind::Affine => {
                let det = m[0] * m[4] - m[1] * m[3];
                if !(det.abs() > DET_FLOOR) {
                    return Err(Error::Singular { det });
                }
                let (i0, i1, i3, i4) = (m[4] / det, -m[1] / det, -m[3] / det, m[0] / det);
                Ok(Self::affine([
                    i0,
                    i1,
                    -(i0 * m[2] + i1 * m[5]),
                    i3,
                    i4,
                    -(i3 * m[2] + i4 * m[5]),
                ]))
            }
            TransformKind::Homography => {
                let det = self.det();
                if !(det.abs() > DET_FLOOR) {
                    return Err(Error::Singular { det });
                }
                let adj = [
                    m[4] * m[8] - m[5] * m[7],
                    m[2] * m[7] - m[1] * m[8],
                    m[1] * m[5] - m[2] * m[4],
                    m[5] * m[6] - m[3] * m[8],
                    m[0] * m[8] - m[2] * m[6],
                    m[2] * m[3] - m[0] * m[5],
                    m[3] * m[7] - m[4] * m[6],
                    m[1] * m[6] - m[0] * m[7],
                    m[0] * m[4] - m[1] * m[3],
                ];
                if adj[8].abs() <= DET_FLOOR {
                    return Err(Error::NumericDomain(
                        "inverse homography cannot be normalized".into(),
                    ));
                }
                let s = 1.0 / adj[8];
                let mut inv = adj.map(|v| v * s);
                inv[8] = 1.0;
                Ok(FrameTransform {
                    kind: TransformKind::Homography,
                    m: inv,
                })
            }
        }
    }

    /// Largest absolute difference between matrix entries.
    pub fn max_abs_diff(&self, other: &FrameTransform) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-frame sequence of transforms accompanying a feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformTrack {
    transforms: Vec<FrameTransform>,
}

impl TransformTrack {
    /// Builds a track; mixed kinds are promoted to homography.
    pub fn new(transforms: Vec<FrameTransform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::contract("transform track must be nonempty"));
        }
        let mixed = transforms.iter().any(|t| t.kind != transforms[0].kind);
        let transforms = if mixed {
            transforms.into_iter().map(|t| t.to_homography()).collect()
        } else {
            transforms
        };
        Ok(TransformTrack { transforms })
    }

    pub fn identity(len: usize) -> Self {
        TransformTrack {
            transforms: vec![FrameTransform::identity(); len.max(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn kind(&self) -> TransformKind {
        self.transforms[0].kind
    }

    pub fn get(&self, i: usize) -> Option<&FrameTransform> {
        self.transforms.get(i)
    }

    pub fn transforms(&self) -> &[FrameTransform] {
        &self.transforms
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrameTransform> {
        self.transforms.iter()
    }

    fn at(&self, i: usize) -> Result<&FrameTransform> {
        self.transforms.get(i).ok_or_else(|| {
            Error::contract(format!("frame index {i} out of range for track of {}", self.len()))
        })
    }

    /// Transform that renders frame `u` in the coordinates of frame `c`:
    /// `track[u] ∘ track[c]⁻¹`.
    pub fn relative_to_center(&self, u: usize, c: usize) -> Result<FrameTransform> {
        let tu = self.at(u)?;
        let tc = self.at(c)?;
        if u == c {
            // exact identity, no round-off from T ∘ T⁻¹
            tc.invert()?;
            return Ok(if tu.kind == TransformKind::Affine {
                FrameTransform::identity()
            } else {
                FrameTransform::identity().to_homography()
            });
        }
        Ok(tu.compose(&tc.invert()?))
    }

    /// `out[t] = track[offset + t * stride]` for every in-range index.
    pub fn resample(&self, stride: usize, offset: isize) -> Result<TransformTrack> {
        if stride == 0 {
            return Err(Error::contract("resample stride must be positive"));
        }
        if offset < 0 || offset as usize >= self.len() {
            return Err(Error::contract(format!(
                "resample offset {offset} outside track of length {}",
                self.len()
            )));
        }
        let transforms: Vec<_> = self
            .transforms
            .iter()
            .skip(offset as usize)
            .step_by(stride)
            .copied()
            .collect();
        Self::new(transforms)
    }

    /// Frame-wise `track[t] ∘ other[t]`.
    pub fn compose_each(&self, other: &TransformTrack) -> Result<TransformTrack> {
        if self.len() != other.len() {
            return Err(Error::contract("tracks differ in length"));
        }
        Self::new(
            self.transforms
                .iter()
                .zip(other.transforms.iter())
                .map(|(a, b)| a.compose(b))
                .collect(),
        )
    }
}

impl FromIterator<FrameTransform> for TransformTrack {
    /// Panics on an empty iterator.
    fn from_iter<I: IntoIterator<Item = FrameTransform>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect()).expect("nonempty track")
    }
}
