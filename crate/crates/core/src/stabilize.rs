//! Direct photometric alignment of consecutive frames and chaining of the
//! pairwise estimates into a stabilizing track.
//!
//! The objective is the mean, over pixels whose sample lands inside the
//! source frame, of `min(|target(p) - source(tf(p))|², delta)` with bilinear
//! sampling. It is minimized by gradient descent with a multiplicative
//! step-size rule on a box-filtered pyramid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;
use crate::xform::{norm_to_pixel, pixel_to_norm, FrameTransform, TransformKind, TransformTrack};

/// Real-valued `(C, H, W)` frame used by the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 || data.len() != c * h * w {
            return Err(Error::contract(format!(
                "frame {c}x{h}x{w} with {} values",
                data.len()
            )));
        }
        Ok(Frame { c, h, w, data })
    }

    pub fn from_feature_map(fm: &FeatureMap, t: usize) -> Self {
        let (_, c, h, w) = fm.dims();
        Frame {
            c,
            h,
            w,
            data: fm.frame(t).iter().map(|&v| v as f64).collect(),
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    fn scaled(&self, s: f64) -> Frame {
        Frame {
            data: self.data.iter().map(|v| v * s).collect(),
            ..*self
        }
    }

    /// Averages 2x2 blocks; odd trailing rows/columns are dropped.
    pub fn downsample(&self) -> Frame {
        let (h2, w2) = ((self.h / 2).max(1), (self.w / 2).max(1));
        let plane = self.h * self.w;
        let mut data = Vec::with_capacity(self.c * h2 * w2);
        for ch in 0..self.c {
            let src = &self.data[ch * plane..(ch + 1) * plane];
            for i in 0..h2 {
                for j in 0..w2 {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for di in 0..2 {
                        for dj in 0..2 {
                            let (y, x) = (2 * i + di, 2 * j + dj);
                            if y < self.h && x < self.w {
                                s += src[y * self.w + x];
                                n += 1.0;
                            }
                        }
                    }
                    data.push(s / n);
                }
            }
        }
        Frame {
            c: self.c,
            h: h2,
            w: w2,
            data,
        }
    }

    fn variance(&self) -> f64 {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Clip threshold on the squared residual.
    pub delta: f64,
    pub kind: TransformKind,
    pub max_iters: usize,
    /// Length of the first step in parameter space; steps follow the
    /// normalized negative gradient.
    pub initial_step: f64,
    /// Step multiplier after an accepted (objective-decreasing) step.
    pub grow: f64,
    /// Step multiplier after a rejected step.
    pub shrink: f64,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction.
    pub tol: f64,
    pub levels: usize,
    /// Pyramid level `l` (0 = full resolution) clips at
    /// `delta * delta_growth^l`; 1 keeps `delta` on every level.
    pub delta_growth: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            delta: 0.01,
            kind: TransformKind::Affine,
            max_iters: 200,
            initial_step: 1e-2,
            grow: 1.2,
            shrink: 0.5,
            tol: 1e-6,
            levels: 3,
            delta_growth: 4.0,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::contract("delta must be positive"));
        }
        if self.levels == 0 {
            return Err(Error::contract("at least one pyramid level is required"));
        }
        if !(self.grow > 1.0 && self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::contract("need grow > 1 > shrink > 0"));
        }
        if !(self.delta_growth >= 1.0 && self.delta_growth.is_finite()) {
            return Err(Error::contract("delta growth must be a finite factor >= 1"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::contract("initial step must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAlignment {
    /// Pull map rendering the source frame in the target frame's coordinates.
    pub transform: FrameTransform,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Scales both frames by `1 / std(target)` so the target has unit variance.
pub fn normalize_pair(target: &Frame, source: &Frame) -> Result<(Frame, Frame, f64)> {
    let var = target.variance();
    if !(var > 1e-12) {
        return Err(Error::Degenerate(format!(
            "target frame is (nearly) constant, variance {var:e}"
        )));
    }
    let scale = 1.0 / var.sqrt();
    Ok((target.scaled(scale), source.scaled(scale), scale))
}

fn check_pair(target: &Frame, source: &Frame) -> Result<()> {
    if target.dims() != source.dims() {
        return Err(Error::contract(format!(
            "frame dims differ: {:?} vs {:?}",
            target.dims(),
            source.dims()
        )));
    }
    Ok(())
}

/// Bilinear sample geometry at a continuous pixel location that lies inside
/// `[0, h-1] x [0, w-1]`.
struct Tap {
    i00: usize,
    dy: usize,
    dx: usize,
    fy: f64,
    fx: f64,
}

#[inline]
fn tap(py: f64, px: f64, h: usize, w: usize) -> Option<Tap> {
    let hmax = (h - 1) as f64;
    let wmax = (w - 1) as f64;
    if !(py >= 0.0 && py <= hmax && px >= 0.0 && px <= wmax) {
        return None;
    }
    // the last row/column interpolates from the cell that ends there
    let y0 = (py.floor() as usize).min(h.saturating_sub(2));
    let x0 = (px.floor() as usize).min(w.saturating_sub(2));
    Some(Tap {
        i00: y0 * w + x0,
        dy: if h > 1 { w } else { 0 },
        dx: usize::from(w > 1),
        fy: py - y0 as f64,
        fx: px - x0 as f64,
    })
}

/// Per-pixel quantities shared by the objective and its gradient.
struct PixelEval {
    clipped_r2: f64,
    /// `d(r²)/d(py)`, `d(r²)/d(px)` when not clipped.
    dr2: Option<(f64, f64)>,
}

#[inline]
fn eval_pixel(target: &Frame, source: &Frame, o: usize, t: &Tap, delta: f64, want_grad: bool) -> PixelEval {
    let plane = source.h * source.w;
    let mut r2 = 0.0;
    let mut gy = 0.0;
    let mut gx = 0.0;
    for ch in 0..source.c {
        let s = &source.data[ch * plane..(ch + 1) * plane];
        let v00 = s[t.i00];
        let v01 = s[t.i00 + t.dx];
        let v10 = s[t.i00 + t.dy];
        let v11 = s[t.i00 + t.dy + t.dx];
        let top = v00 + t.fx * (v01 - v00);
        let bot = v10 + t.fx * (v11 - v10);
        let val = top + t.fy * (bot - top);
        let r = val - target.data[ch * plane + o];
        r2 += r * r;
        if want_grad {
            let dvdy = bot - top;
            let dvdx = (1.0 - t.fy) * (v01 - v00) + t.fy * (v11 - v10);
            gy += 2.0 * r * dvdy;
            gx += 2.0 * r * dvdx;
        }
    }
    if r2 >= delta {
        PixelEval {
            clipped_r2: delta,
            dr2: None,
        }
    } else {
        PixelEval {
            clipped_r2: r2,
            dr2: want_grad.then_some((gy, gx)),
        }
    }
}

/// Source location of pixel `(i, j)` under `tf`, plus derivatives of the
/// normalized source coordinates with respect to the free parameters.
#[inline]
fn warp_point(tf: &FrameTransform, y: f64, x: f64, jac: Option<(&mut [f64], &mut [f64])>) -> Option<(f64, f64)> {
    let (qy, qx) = tf.apply_point((y, x)).ok()?;
    if let Some((jy, jx)) = jac {
        match tf.kind() {
            TransformKind::Affine => {
                jy.copy_from_slice(&[y, x, 1.0, 0.0, 0.0, 0.0]);
                jx.copy_from_slice(&[0.0, 0.0, 0.0, y, x, 1.0]);
            }
            TransformKind::Homography => {
                let m = tf.matrix();
                let d = m[6] * y + m[7] * x + m[8];
                let inv = 1.0 / d;
                jy.copy_from_slice(&[y * inv, x * inv, inv, 0.0, 0.0, 0.0, -qy * y * inv, -qy * x * inv]);
                jx.copy_from_slice(&[0.0, 0.0, 0.0, y * inv, x * inv, inv, -qx * y * inv, -qx * x * inv]);
            }
        }
    }
    Some((qy, qx))
}

/// Objective and (optionally) its gradient; `None` when no pixel is in bounds.
fn evaluate(
    target: &Frame,
    source: &Frame,
    tf: &FrameTransform,
    delta: f64,
    want_grad: bool,
) -> Option<(f64, Vec<f64>)> {
    let (h, w) = (source.h, source.w);
    let np = tf.kind().free_len();
    let sy = if h > 1 { (h - 1) as f64 * 0.5 } else { 1.0 };
    let sx = if w > 1 { (w - 1) as f64 * 0.5 } else { 1.0 };
    let rows = (0..h).map(|i| {
            let y = pixel_to_norm(i as f64, h);
            let mut sum = 0.0;
            let mut count = 0usize;
            let mut grad = vec![0.0; if want_grad { np } else { 0 }];
            let mut jy = [0.0; 8];
            let mut jx = [0.0; 8];
            for j in 0..w {
                let x = pixel_to_norm(j as f64, w);
                let jac = want_grad.then(|| (&mut jy[..np], &mut jx[..np]));
                let Some((qy, qx)) = warp_point(tf, y, x, jac) else {
                    continue;
                };
                let Some(t) = tap(norm_to_pixel(qy, h), norm_to_pixel(qx, w), h, w) else {
                    continue;
                };
                count += 1;
                let e = eval_pixel(target, source, i * w + j, &t, delta, want_grad);
                sum += e.clipped_r2;
                if let Some((gy, gx)) = e.dr2 {
                    let (gy, gx) = (gy * sy, gx * sx);
                    for k in 0..np {
                        grad[k] += gy * jy[k] + gx * jx[k];
                    }
                }
            }
            (sum, count, grad)
        });
    let mut sum = 0.0;
    let mut count = 0;
    let mut grad = vec![0.0; if want_grad { np } else { 0 }];
    for (s, n, g) in rows {
        sum += s;
        count += n;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if count == 0 {
        return None;
    }
    let n = count as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Some((sum / n, grad))
}

/// Mean clipped squared residual between `target` and `source` warped by
/// `tf`, over in-bounds pixels.
pub fn photometric_objective(target: &Frame, source: &Frame, tf: &FrameTransform, delta: f64) -> Result<f64> {
    check_pair(target, source)?;
    evaluate(target, source, tf, delta, false)
        .map(|(f, _)| f)
        .ok_or_else(|| Error::Degenerate("no pixel samples inside the source frame".into()))
}

/// Gradient of [`photometric_objective`] over the free parameters of `tf`
/// (6 for affine, 8 for homography).
pub fn objective_gradient(target: &Frame, source: &Frame, tf: &FrameTransform, delta: f64) -> Result<Vec<f64>> {
    check_pair(target, source)?;
    evaluate(target, source, tf, delta, true)
        .map(|(_, g)| g)
        .ok_or_else(|| Error::Degenerate("no pixel samples inside the source frame".into()))
}

/// Iterates of one descent run, exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    /// Objective after every accepted step, starting with the initial value.
    pub accepted: Vec<f64>,
}

struct LevelResult {
    transform: FrameTransform,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn descend(
    target: &Frame,
    source: &Frame,
    init: FrameTransform,
    cfg: &AlignConfig,
    trace: &mut DescentTrace,
) -> Result<LevelResult> {
    let kind = init.kind();
    let mut theta = init.free_params();
    let (mut f, mut g) = evaluate(target, source, &init, cfg.delta, true)
        .ok_or_else(|| Error::Degenerate("no pixel samples inside the source frame".into()))?;
    trace.accepted.push(f);
    let mut step = cfg.initial_step;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cand: Vec<f64> = theta.iter().zip(&g).map(|(p, d)| p - step * d / norm).collect();
        let cand_tf = FrameTransform::from_free_params(kind, &cand)?;
        match evaluate(target, source, &cand_tf, cfg.delta, true) {
            Some((fc, gc)) if fc < f => {
                let rel = (f - fc) / f.max(f64::MIN_POSITIVE);
                theta = cand;
                f = fc;
                g = gc;
                trace.accepted.push(f);
                step *= cfg.grow;
                if rel < cfg.tol {
                    converged = true;
                    break;
                }
            }
            _ => {
                step *= cfg.shrink;
                if step < 1e-15 {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok(LevelResult {
        transform: FrameTransform::from_free_params(kind, &theta)?,
        objective: f,
        iterations,
        converged,
    })
}

fn initial_transform(kind: TransformKind) -> FrameTransform {
    match kind {
        TransformKind::Affine => FrameTransform::identity(),
        TransformKind::Homography => FrameTransform::identity().to_homography(),
    }
}

/// Estimates the pull transform rendering `source` in `target`'s
/// coordinates. A constant target yields identity with `converged = false`.
pub fn align_pair(target: &Frame, source: &Frame, cfg: &AlignConfig) -> Result<PairAlignment> {
    align_pair_traced(target, source, cfg).map(|(a, _)| a)
}

/// As [`align_pair`], also returning the accepted objective sequence of
/// every pyramid level, coarsest first.
pub fn align_pair_traced(
    target: &Frame,
    source: &Frame,
    cfg: &AlignConfig,
) -> Result<(PairAlignment, Vec<DescentTrace>)> {
    check_pair(target, source)?;
    cfg.validate()?;
    let identity = initial_transform(cfg.kind);
    let (t0, s0, _) = match normalize_pair(target, source) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => {
            return Ok((
                PairAlignment {
                    transform: identity,
                    objective: 0.0,
                    iterations: 0,
                    converged: false,
                },
                Vec::new(),
            ))
        }
        Err(e) => return Err(e),
    };
    let mut pyramid = vec![(t0, s0)];
    while pyramid.len() < cfg.levels {
        let (t, s) = pyramid.last().unwrap();
        if t.h < 8 || t.w < 8 {
            break;
        }
        let next = (t.downsample(), s.downsample());
        pyramid.push(next);
    }
    let mut tf = identity;
    let mut traces = Vec::with_capacity(pyramid.len());
    let mut result = None;
    for (l, (t, s)) in pyramid.iter().enumerate().rev() {
        let mut trace = DescentTrace { accepted: Vec::new() };
        let level_cfg = AlignConfig {
            delta: cfg.delta * cfg.delta_growth.powi(l as i32),
            ..*cfg
        };
        let level = descend(t, s, tf, &level_cfg, &mut trace)?;
        tf = level.transform;
        traces.push(trace);
        result = Some(level);
    }
    let level = result.expect("at least one level");
    Ok((
        PairAlignment {
            transform: level.transform,
            objective: level.objective,
            iterations: level.iterations,
            converged: level.converged,
        },
        traces,
    ))
}

/// Pairwise alignments and the chained stabilizing track.
#[derive(Debug, Clone)]
pub struct ClipStabilization {
    pub track: TransformTrack,
    /// `pairs[t]` renders frame `t+1` in frame `t`'s coordinates.
    pub pairs: Vec<PairAlignment>,
}

impl ClipStabilization {
    /// Indices `t` whose pair `(t, t+1)` fell back to identity.
    pub fn degenerate_pairs(&self) -> Vec<usize> {
        self.pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.converged && p.iterations == 0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Chains pairwise transforms into a world-to-frame track whose world
/// frame is frame `reference`.
pub fn chain_pairs(pairs: &[FrameTransform], reference: usize) -> Result<TransformTrack> {
    let t = pairs.len() + 1;
    if reference >= t {
        return Err(Error::contract(format!("reference {reference} out of range for T={t}")));
    }
    let mut track = vec![FrameTransform::identity(); t];
    if pairs.iter().any(|p| p.kind() == TransformKind::Homography) {
        track[reference] = FrameTransform::identity().to_homography();
    }
    for u in reference + 1..t {
        track[u] = pairs[u - 1].compose(&track[u - 1]);
    }
    for u in (0..reference).rev() {
        track[u] = pairs[u].invert()?.compose(&track[u + 1]);
    }
    TransformTrack::new(track)
}

pub fn stabilize_clip_detailed(clip: &FeatureMap, reference: usize, cfg: &AlignConfig) -> Result<ClipStabilization> {
    let t = clip.t();
    if reference >= t {
        return Err(Error::contract(format!("reference {reference} out of range for T={t}")));
    }
    cfg.validate()?;
    let pairs = (0..t.saturating_sub(1))
        .into_par_iter()
        .map(|u| {
            align_pair(
                &Frame::from_feature_map(clip, u),
                &Frame::from_feature_map(clip, u + 1),
                cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let transforms: Vec<_> = pairs.iter().map(|p| p.transform).collect();
    let track = chain_pairs(&transforms, reference)?;
    Ok(ClipStabilization { track, pairs })
}

/// Stabilizing track for `clip`: `warp_clip_to_reference` with this track
/// renders every frame in frame `reference`'s coordinates.
pub fn stabilize_clip(clip: &FeatureMap, reference: usize, cfg: &AlignConfig) -> Result<TransformTrack> {
    stabilize_clip_detailed(clip, reference, cfg).map(|s| s.track)
}
