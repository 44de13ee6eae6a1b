//! Gaze transforms: fixation boxes, smooth pursuit, saccade paths and
//! synthetic camera motion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundingBox, FeatureMap};
use crate::xform::{pixel_to_norm, FrameTransform, TransformTrack};

/// Non-negative `(T, H, W)` map.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (t, h, w) = dims;
        if t * h * w != data.len() || t == 0 || h == 0 || w == 0 {
            return Err(Error::contract(format!(
                "saliency dims {dims:?} with {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::contract(format!("saliency value {v} is not a finite non-negative number")));
        }
        Ok(SaliencyMap { dims, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Sum over time, `(H, W)` row-major.
    pub fn accumulate(&self) -> Vec<f64> {
        let (_, h, w) = self.dims;
        let mut acc = vec![0.0; h * w];
        for frame in self.data.chunks_exact(h * w) {
            for (a, v) in acc.iter_mut().zip(frame) {
                *a += v;
            }
        }
        acc
    }
}

/// `s(t, y, x) = sum_c |x(t+1, c, y, x) - x(t, c, y, x)|`.
pub fn temporal_diff_saliency(clip: &FeatureMap) -> Result<SaliencyMap> {
    let (t, c, h, w) = clip.dims();
    if t < 2 {
        return Err(Error::contract(format!("temporal difference needs T >= 2, got {t}")));
    }
    let plane = h * w;
    let mut data = vec![0.0f64; (t - 1) * plane];
    for (u, out) in data.chunks_exact_mut(plane).enumerate() {
        let (a, b) = (clip.frame(u), clip.frame(u + 1));
        for ch in 0..c {
            let (a, b) = (&a[ch * plane..(ch + 1) * plane], &b[ch * plane..(ch + 1) * plane]);
            for ((o, x0), x1) in out.iter_mut().zip(a).zip(b) {
                *o += (*x1 as f64 - *x0 as f64).abs();
            }
        }
    }
    SaliencyMap::new((t - 1, h, w), data)
}

/// Shortest index interval `[a, b]` whose marginal mass excludes at most
/// `allowed`; ties go to more enclosed mass, then to the smaller start.
fn shortest_interval(marginal: &[f64], allowed: f64) -> (usize, usize) {
    let n = marginal.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, m) in marginal.iter().enumerate() {
        prefix[i + 1] = prefix[i] + m;
    }
    let total = prefix[n];
    let mut best: Option<(usize, f64, usize)> = None;
    for a in 0..n {
        for b in a..n {
            let inside = prefix[b + 1] - prefix[a];
            if total - inside > allowed {
                continue;
            }
            let len = b - a + 1;
            let better = match best {
                None => true,
                Some((bl, bm, _)) => len < bl || (len == bl && inside > bm),
            };
            if better {
                best = Some((len, inside, a));
            }
            // longer intervals from this start only add length
            break;
        }
    }
    let (len, _, a) = best.expect("the full range always qualifies");
    (a, a + len - 1)
}

/// Smallest box holding at least `fraction` of the time-accumulated
/// saliency: on each axis the excluded marginal mass is at most
/// `(1 - fraction) / 2` of the total. The box spans whole pixels, so one
/// selected pixel `(i, j)` gives `(i - 0.5, j - 0.5, i + 0.5, j + 0.5)`.
pub fn variance_box(s: &SaliencyMap, fraction: f64) -> Result<BoundingBox> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::contract(format!("fraction {fraction} outside (0, 1]")));
    }
    let (_, h, w) = s.dims();
    let acc = s.accumulate();
    let mut my = vec![0.0; h];
    let mut mx = vec![0.0; w];
    for y in 0..h {
        for x in 0..w {
            my[y] += acc[y * w + x];
            mx[x] += acc[y * w + x];
        }
    }
    let total: f64 = my.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("saliency has zero total mass".into()));
    }
    // slack so that e.g. (1 - 0.8) / 2 admits exactly a tenth of the mass
    let allowed = ((1.0 - fraction) * 0.5 + 1e-12) * total;
    let (y0, y1) = shortest_interval(&my, allowed);
    let (x0, x1) = shortest_interval(&mx, allowed);
    BoundingBox::new(y0 as f64 - 0.5, x0 as f64 - 0.5, y1 as f64 + 0.5, x1 as f64 + 0.5)
}

/// How a fixation box is fitted to the output frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FixationFit {
    /// Box corners map onto output corners; the aspect ratio may change.
    #[default]
    Stretch,
    /// The box is grown about its center to the frame's aspect ratio first.
    PreserveAspect,
}

/// Pull affine mapping output normalized coordinates onto the box: output
/// `(-1, -1)` reads the box's top-left corner, `(1, 1)` its bottom-right.
pub fn fixation_transform(b: &BoundingBox, h: usize, w: usize) -> Result<FrameTransform> {
    fixation_transform_with(b, h, w, FixationFit::Stretch)
}

pub fn fixation_transform_with(b: &BoundingBox, h: usize, w: usize, fit: FixationFit) -> Result<FrameTransform> {
    b.validate()?;
    if !b.intersects_frame(h, w) {
        return Err(Error::contract(format!(
            "box ({}, {}, {}, {}) lies outside the {h}x{w} frame",
            b.y0, b.x0, b.y1, b.x1
        )));
    }
    let mut b = *b;
    if fit == FixationFit::PreserveAspect && h > 1 && w > 1 {
        let frame_aspect = (h - 1) as f64 / (w - 1) as f64;
        let (cy, cx) = ((b.y0 + b.y1) * 0.5, (b.x0 + b.x1) * 0.5);
        let (mut bh, mut bw) = (b.height(), b.width());
        if bh / bw < frame_aspect {
            bh = bw * frame_aspect;
        } else {
            bw = bh / frame_aspect;
        }
        b = BoundingBox {
            t: b.t,
            y0: cy - bh * 0.5,
            x0: cx - bw * 0.5,
            y1: cy + bh * 0.5,
            x1: cx + bw * 0.5,
        };
    }
    let (ny0, ny1) = (pixel_to_norm(b.y0, h), pixel_to_norm(b.y1, h));
    let (nx0, nx1) = (pixel_to_norm(b.x0, w), pixel_to_norm(b.x1, w));
    let (sy, ty) = ((ny1 - ny0) * 0.5, (ny1 + ny0) * 0.5);
    let (sx, tx) = ((nx1 - nx0) * 0.5, (nx1 + nx0) * 0.5);
    Ok(FrameTransform::affine([sy, 0.0, ty, 0.0, sx, tx]))
}

/// Orders per-frame boxes by their `t` field when every box carries one.
fn frame_ordered(boxes: &[BoundingBox]) -> Result<Vec<BoundingBox>> {
    if boxes.is_empty() {
        return Err(Error::contract("no boxes given"));
    }
    if boxes.iter().all(|b| b.t.is_none()) {
        return Ok(boxes.to_vec());
    }
    let mut slots: Vec<Option<BoundingBox>> = vec![None; boxes.len()];
    for b in boxes {
        match b.t {
            Some(t) if t < boxes.len() && slots[t].is_none() => slots[t] = Some(*b),
            Some(t) => return Err(Error::contract(format!("box frame index {t} repeated or out of range"))),
            None => return Err(Error::contract("boxes mix frame-indexed and unindexed entries")),
        }
    }
    Ok(slots.into_iter().map(|b| b.expect("all slots filled")).collect())
}

/// Exponential smoothing of box coordinates, `b'[t] = a b[t] + (1 - a) b'[t-1]`.
pub fn smooth_boxes(boxes: &[BoundingBox], alpha: f64) -> Result<Vec<BoundingBox>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!("smoothing factor {alpha} outside (0, 1]")));
    }
    let mut out: Vec<BoundingBox> = Vec::with_capacity(boxes.len());
    for b in boxes {
        let next = match out.last() {
            None => *b,
            Some(p) => BoundingBox {
                t: b.t,
                y0: alpha * b.y0 + (1.0 - alpha) * p.y0,
                x0: alpha * b.x0 + (1.0 - alpha) * p.x0,
                y1: alpha * b.y1 + (1.0 - alpha) * p.y1,
                x1: alpha * b.x1 + (1.0 - alpha) * p.x1,
            },
        };
        out.push(next);
    }
    Ok(out)
}

fn fixation_track(boxes: &[BoundingBox], h: usize, w: usize) -> Result<TransformTrack> {
    let transforms = boxes
        .iter()
        .enumerate()
        .map(|(t, b)| {
            fixation_transform(b, h, w).map_err(|e| Error::contract(format!("frame {t}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    TransformTrack::new(transforms)
}

/// One fixation per frame, keeping the boxed subject centered and
/// frame-filling.
pub fn pursuit_track(boxes: &[BoundingBox], h: usize, w: usize) -> Result<TransformTrack> {
    fixation_track(&frame_ordered(boxes)?, h, w)
}

pub fn pursuit_track_smoothed(boxes: &[BoundingBox], h: usize, w: usize, alpha: f64) -> Result<TransformTrack> {
    fixation_track(&smooth_boxes(&frame_ordered(boxes)?, alpha)?, h, w)
}

/// Ordered fixation boxes, one per output frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GazePath {
    boxes: Vec<BoundingBox>,
    /// Input index of every path entry.
    order: Vec<usize>,
}

impl GazePath {
    pub fn new(boxes: Vec<BoundingBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::contract("gaze path must be nonempty"));
        }
        let order = (0..boxes.len()).collect();
        Ok(GazePath { boxes, order })
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Greedy overlap chain: start at the largest box, then repeatedly take the
/// unused box with the highest IoU to the current one. Ties prefer larger
/// area, then lower input index.
pub fn order_saccades(boxes: &[BoundingBox]) -> Result<GazePath> {
    if boxes.is_empty() {
        return Err(Error::contract("no boxes to order"));
    }
    let mut used = vec![false; boxes.len()];
    let mut current = 0;
    for (i, b) in boxes.iter().enumerate() {
        if b.area() > boxes[current].area() {
            current = i;
        }
    }
    let mut order = vec![current];
    used[current] = true;
    while order.len() < boxes.len() {
        let cur = boxes[current];
        let mut pick: Option<(usize, f64)> = None;
        for (i, b) in boxes.iter().enumerate() {
            if used[i] {
                continue;
            }
            let iou = cur.iou(b);
            let better = match pick {
                None => true,
                Some((j, best)) => iou > best || (iou == best && b.area() > boxes[j].area()),
            };
            if better {
                pick = Some((i, iou));
            }
        }
        let (next, _) = pick.expect("an unused box remains");
        used[next] = true;
        order.push(next);
        current = next;
    }
    Ok(GazePath {
        boxes: order.iter().map(|&i| boxes[i]).collect(),
        order,
    })
}

pub fn saccade_track(path: &GazePath, h: usize, w: usize) -> Result<TransformTrack> {
    fixation_track(path.boxes(), h, w)
}

/// Parameters of a piecewise-linear synthetic camera path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionSpec {
    pub frames: usize,
    pub waypoints: usize,
    /// Magnification range; drawn log-uniformly.
    pub scale_range: (f64, f64),
    /// Waypoint centers are drawn uniformly in `[-e, e]²` (normalized).
    pub center_extent: f64,
    pub seed: u64,
}

impl MotionSpec {
    pub fn new(frames: usize, seed: u64) -> Self {
        MotionSpec {
            frames,
            waypoints: 3,
            scale_range: (0.3, 3.0),
            center_extent: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::contract(format!("bad scale range ({lo}, {hi})")));
        }
        if self.waypoints < 2 {
            return Err(Error::contract("need at least two waypoints"));
        }
        if self.frames < self.waypoints {
            return Err(Error::contract(format!(
                "{} frames cannot hold {} waypoints",
                self.frames, self.waypoints
            )));
        }
        if !(self.center_extent >= 0.0 && self.center_extent.is_finite()) {
            return Err(Error::contract("center extent must be finite and non-negative"));
        }
        Ok(())
    }

    /// Frame index of waypoint `k`.
    pub fn waypoint_frame(&self, k: usize) -> usize {
        k * (self.frames - 1) / (self.waypoints - 1)
    }
}

/// Camera state: normalized center and magnification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraState {
    pub center: (f64, f64),
    pub scale: f64,
}

impl CameraState {
    /// Pull map `p -> center + p / scale`.
    pub fn transform(&self) -> FrameTransform {
        let inv = 1.0 / self.scale;
        FrameTransform::affine([inv, 0.0, self.center.0, 0.0, inv, self.center.1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMotion {
    pub waypoints: Vec<CameraState>,
    pub states: Vec<CameraState>,
    pub track: TransformTrack,
}

/// Waypoints drawn from the seeded generator, interpolated linearly in
/// `(center, log scale)`.
pub fn synth_motion(spec: &MotionSpec) -> Result<SynthMotion> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (lo, hi) = spec.scale_range;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let e = spec.center_extent;
    let waypoints: Vec<CameraState> = (0..spec.waypoints)
        .map(|_| {
            let cy = e * rng.gen_range(-1.0..=1.0);
            let cx = e * rng.gen_range(-1.0..=1.0);
            let ls = if lhi > llo { rng.gen_range(llo..=lhi) } else { llo };
            CameraState {
                center: (cy, cx),
                scale: ls.exp().clamp(lo, hi),
            }
        })
        .collect();
    let mut states = Vec::with_capacity(spec.frames);
    for k in 0..spec.waypoints - 1 {
        let (f0, f1) = (spec.waypoint_frame(k), spec.waypoint_frame(k + 1));
        let (a, b) = (waypoints[k], waypoints[k + 1]);
        let last = k + 2 == spec.waypoints;
        for f in f0..f1 + usize::from(last) {
            let state = if f == f0 {
                a
            } else if f == f1 {
                b
            } else {
                let s = (f - f0) as f64 / (f1 - f0) as f64;
                let lerp = |x: f64, y: f64| x + s * (y - x);
                CameraState {
                    center: (lerp(a.center.0, b.center.0), lerp(a.center.1, b.center.1)),
                    scale: lerp(a.scale.ln(), b.scale.ln()).exp().clamp(lo, hi),
                }
            };
            states.push(state);
        }
    }
    let track = TransformTrack::new(states.iter().map(CameraState::transform).collect())?;
    Ok(SynthMotion {
        waypoints,
        states,
        track,
    })
}

pub fn synth_motion_track(spec: &MotionSpec) -> Result<TransformTrack> {
    synth_motion(spec).map(|m| m.track)
}
