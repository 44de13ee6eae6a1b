//! Grid-sampling warp engine.
//!
//! Out-of-bounds samples read feature 0 with validity 0. Nearest sampling
//! rounds half-way coordinates toward the larger pixel index.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ValidityMask, WorldFeature};
use crate::xform::{norm_to_pixel, pixel_to_norm, FrameTransform, Point, TransformTrack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterpMode {
    /// Used by every network layer; avoids blurring under repeated warps.
    #[default]
    Nearest,
    /// Used inside the alignment solver where differentiability matters.
    Bilinear,
}

/// Source location (normalized) for every output pixel of an `h x w` frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    h: usize,
    w: usize,
    coords: Vec<Point>,
}

impl SampleGrid {
    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn at(&self, i: usize, j: usize) -> Point {
        self.coords[i * self.w + j]
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }
}

pub fn build_grid(tf: &FrameTransform, h: usize, w: usize) -> Result<SampleGrid> {
    if h == 0 || w == 0 {
        return Err(Error::contract("grid dims must be positive"));
    }
    let mut coords = Vec::with_capacity(h * w);
    for i in 0..h {
        let y = pixel_to_norm(i as f64, h);
        for j in 0..w {
            coords.push(tf.apply_point((y, pixel_to_norm(j as f64, w)))?);
        }
    }
    Ok(SampleGrid { h, w, coords })
}

/// Borrowed `(C, H, W)` frame together with its `(H, W)` validity.
#[derive(Debug, Clone, Copy)]
pub struct FrameView<'a> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: &'a [f32],
    pub validity: &'a [f32],
}

impl<'a> FrameView<'a> {
    pub fn of(wf: &'a WorldFeature, t: usize) -> Self {
        let f = wf.features();
        FrameView {
            c: f.c(),
            h: f.h(),
            w: f.w(),
            data: f.frame(t),
            validity: wf.validity().frame(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFrame {
    pub data: Vec<f32>,
    pub validity: Vec<f32>,
}

/// Nearest pixel index for a continuous coordinate, or `None` off-grid.
#[inline]
pub(crate) fn nearest_index(p: f64, n: usize) -> Option<usize> {
    let r = (p + 0.5).floor();
    if r >= 0.0 && r < n as f64 {
        Some(r as usize)
    } else {
        None
    }
}

/// Renders `frame` under `tf` at the frame's own resolution.
pub fn warp_frame(frame: FrameView<'_>, tf: &FrameTransform, mode: InterpMode) -> WarpedFrame {
    let FrameView { c, h, w, data, validity } = frame;
    debug_assert_eq!(data.len(), c * h * w);
    debug_assert_eq!(validity.len(), h * w);
    if tf.is_identity() {
        return WarpedFrame {
            data: data.to_vec(),
            validity: validity.to_vec(),
        };
    }
    let plane = h * w;
    let mut out = vec![0.0f32; c * plane];
    let mut out_v = vec![0.0f32; plane];
    for i in 0..h {
        let y = pixel_to_norm(i as f64, h);
        for j in 0..w {
            let Ok((sy, sx)) = tf.apply_point((y, pixel_to_norm(j as f64, w))) else {
                continue;
            };
            let py = norm_to_pixel(sy, h);
            let px = norm_to_pixel(sx, w);
            let o = i * w + j;
            match mode {
                InterpMode::Nearest => {
                    if let (Some(si), Some(sj)) = (nearest_index(py, h), nearest_index(px, w)) {
                        let s = si * w + sj;
                        for ch in 0..c {
                            out[ch * plane + o] = data[ch * plane + s];
                        }
                        out_v[o] = validity[s];
                    }
                }
                InterpMode::Bilinear => {
                    if !(py > -1.0 && py < h as f64 && px > -1.0 && px < w as f64) {
                        continue;
                    }
                    let y0 = py.floor();
                    let x0 = px.floor();
                    let fy = py - y0;
                    let fx = px - x0;
                    let (y0, x0) = (y0 as isize, x0 as isize);
                    let taps = [
                        (y0, x0, (1.0 - fy) * (1.0 - fx)),
                        (y0, x0 + 1, (1.0 - fy) * fx),
                        (y0 + 1, x0, fy * (1.0 - fx)),
                        (y0 + 1, x0 + 1, fy * fx),
                    ];
                    let mut live = [(0usize, 0.0f64); 4];
                    let mut n = 0;
                    let mut acc_v = 0.0f64;
                    for &(ty, tx, wgt) in &taps {
                        if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize || wgt == 0.0 {
                            continue;
                        }
                        let s = ty as usize * w + tx as usize;
                        acc_v += wgt * validity[s] as f64;
                        live[n] = (s, wgt);
                        n += 1;
                    }
                    for ch in 0..c {
                        let base = ch * plane;
                        let v: f64 = live[..n]
                            .iter()
                            .map(|&(s, wgt)| wgt * data[base + s] as f64)
                            .sum();
                        out[base + o] = v as f32;
                    }
                    out_v[o] = acc_v.min(1.0) as f32;
                }
            }
        }
    }
    WarpedFrame {
        data: out,
        validity: out_v,
    }
}

/// Warps every frame `t` by `track[t]`.
pub fn warp_clip(
    features: &FeatureMap,
    validity: &ValidityMask,
    track: &TransformTrack,
    mode: InterpMode,
) -> Result<(FeatureMap, ValidityMask)> {
    let (t, c, h, w) = features.dims();
    if track.len() != t || validity.dims() != (t, h, w) {
        return Err(Error::contract("clip, track and validity disagree on dims"));
    }
    let warped: Vec<WarpedFrame> = (0..t)
        .into_par_iter()
        .map(|u| {
            let view = FrameView {
                c,
                h,
                w,
                data: features.frame(u),
                validity: validity.frame(u),
            };
            warp_frame(view, &track.transforms()[u], mode)
        })
        .collect();
    let (frames, masks): (Vec<_>, Vec<_>) = warped.into_iter().map(|f| (f.data, f.validity)).unzip();
    Ok((
        FeatureMap::from_frames(c, h, w, frames)?,
        ValidityMask::from_frames(h, w, masks)?,
    ))
}

/// Explicit stabilization: renders every frame in the coordinates of
/// `reference`. The returned feature carries an identity track.
pub fn warp_clip_to_reference(
    wf: &WorldFeature,
    reference: usize,
    mode: InterpMode,
) -> Result<WorldFeature> {
    let t = wf.features().t();
    if reference >= t {
        return Err(Error::contract(format!(
            "reference frame {reference} out of range for T={t}"
        )));
    }
    let relative = (0..t)
        .map(|u| wf.track().relative_to_center(u, reference))
        .collect::<Result<Vec<_>>>()?;
    let relative = TransformTrack::new(relative)?;
    let (features, validity) = warp_clip(wf.features(), wf.validity(), &relative, mode)?;
    WorldFeature::new(features, TransformTrack::identity(t), validity)
}
