//! World-coordinate layers.
//!
//! Every layer that mixes neighbouring frames first warps the frames of each
//! output's temporal receptive field into the coordinates of the window's
//! center frame (nearest sampling), then applies the ordinary layer to the
//! aligned stack. The output frame inherits the center frame's transform.
//!
//! Padding positions, temporal or spatial, are not contributors: they read
//! as zero for convolution and are skipped by pooling and validity
//! averaging. Pixels that a warp moved off the source frame are
//! contributors with feature 0 and validity 0.

mod align;
mod kernels;
pub mod net;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ValidityMask, WorldFeature};
use crate::xform::TransformTrack;

pub use align::AlignStrategy;
pub use net::{forward_mini_net, LayerConfig, MiniNetConfig, MiniNetWeights, NetOutput};

/// Kernel extent, stride and padding along `(t, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Window {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Self {
        Window {
            kernel,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.iter().chain(self.stride.iter()).any(|&v| v == 0) {
            return Err(Error::contract("kernel and stride must be positive"));
        }
        if self.kernel[0] % 2 == 0 {
            return Err(Error::contract(format!(
                "temporal kernel {} must be odd to have a center frame",
                self.kernel[0]
            )));
        }
        if self.padding[0] > self.kernel[0] / 2 {
            return Err(Error::contract(
                "temporal padding larger than half the kernel moves window centers off the clip",
            ));
        }
        Ok(())
    }

    /// Output length along `axis` for an input of length `n`.
    pub fn out_len(&self, axis: usize, n: usize) -> Result<usize> {
        let padded = n + 2 * self.padding[axis];
        if padded < self.kernel[axis] {
            return Err(Error::contract(format!(
                "kernel {} larger than padded input {padded} on axis {axis}",
                self.kernel[axis]
            )));
        }
        Ok((padded - self.kernel[axis]) / self.stride[axis] + 1)
    }

    pub fn out_dims(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize)> {
        Ok((self.out_len(0, t)?, self.out_len(1, h)?, self.out_len(2, w)?))
    }

    /// First input frame of output `t`'s window; may be negative (padding).
    pub(crate) fn window_start(&self, t: usize) -> isize {
        (t * self.stride[0]) as isize - self.padding[0] as isize
    }

    /// Offset of the window center from its first frame.
    pub(crate) fn half(&self) -> usize {
        self.kernel[0] / 2
    }

    /// Center frame of output `t`'s temporal receptive field.
    pub fn center_frame(&self, t: usize) -> usize {
        (self.window_start(t) + self.half() as isize) as usize
    }

    /// Index of the input track entry that output 0 inherits.
    pub fn track_offset(&self) -> isize {
        self.half() as isize - self.padding[0] as isize
    }
}

/// 3D convolution parameters. Weights are laid out `(out, in, kt, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub window: Window,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvSpec {
    pub fn new(
        window: Window,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        let spec = ConvSpec {
            window,
            in_channels,
            out_channels,
            weights,
            bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn weight_len(&self) -> usize {
        let [kt, kh, kw] = self.window.kernel;
        self.out_channels * self.in_channels * kt * kh * kw
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::contract("conv channels must be positive"));
        }
        if self.weights.len() != self.weight_len() {
            return Err(Error::contract(format!(
                "conv weights have {} values, expected {}",
                self.weights.len(),
                self.weight_len()
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::contract(format!(
                "conv bias has {} values, expected {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: Window,
}

impl PoolSpec {
    pub fn new(kind: PoolKind, window: Window) -> Result<Self> {
        window.validate()?;
        Ok(PoolSpec { kind, window })
    }

    /// Average pool collapsing a `(t, h, w)` map to a single output. An even
    /// clip gets one frame of leading padding so the window has a center,
    /// which is frame `(t - 1) / 2`.
    pub fn global_avg(t: usize, h: usize, w: usize) -> Self {
        let (kt, pt) = if t % 2 == 1 { (t, 0) } else { (t + 1, 1) };
        PoolSpec {
            kind: PoolKind::Avg,
            window: Window::new([kt, h, w], [kt, 1, 1], [pt, 0, 0]),
        }
    }
}

fn check_input(wf: &WorldFeature, window: &Window) -> Result<(usize, usize, usize)> {
    window.validate()?;
    let f = wf.features();
    window.out_dims(f.t(), f.h(), f.w())
}

pub fn world_conv3d(wf: &WorldFeature, spec: &ConvSpec) -> Result<WorldFeature> {
    world_conv3d_with(wf, spec, AlignStrategy::default())
}

pub fn world_conv3d_with(
    wf: &WorldFeature,
    spec: &ConvSpec,
    strategy: AlignStrategy,
) -> Result<WorldFeature> {
    spec.validate()?;
    if wf.features().c() != spec.in_channels {
        return Err(Error::contract(format!(
            "conv expects {} input channels, got {}",
            spec.in_channels,
            wf.features().c()
        )));
    }
    let out_dims = check_input(wf, &spec.window)?;
    let frames = align::map_aligned(wf, &spec.window, strategy, |stack| {
        kernels::conv_frame(stack, spec, out_dims)
    })?;
    assemble(wf, &spec.window, spec.out_channels, out_dims, frames)
}

pub fn world_maxpool3d(wf: &WorldFeature, spec: &PoolSpec) -> Result<WorldFeature> {
    world_pool3d_with(wf, &PoolSpec { kind: PoolKind::Max, ..*spec }, AlignStrategy::default())
}

pub fn world_avgpool3d(wf: &WorldFeature, spec: &PoolSpec) -> Result<WorldFeature> {
    world_pool3d_with(wf, &PoolSpec { kind: PoolKind::Avg, ..*spec }, AlignStrategy::default())
}

pub fn world_pool3d_with(
    wf: &WorldFeature,
    spec: &PoolSpec,
    strategy: AlignStrategy,
) -> Result<WorldFeature> {
    let out_dims = check_input(wf, &spec.window)?;
    let c = wf.features().c();
    let frames = align::map_aligned(wf, &spec.window, strategy, |stack| match spec.kind {
        PoolKind::Max => kernels::max_pool_frame(stack, &spec.window, c, out_dims),
        PoolKind::Avg => kernels::avg_pool_frame(stack, &spec.window, c, out_dims),
    })?;
    assemble(wf, &spec.window, c, out_dims, frames)
}

fn assemble(
    wf: &WorldFeature,
    window: &Window,
    channels: usize,
    (_, ho, wo): (usize, usize, usize),
    frames: Vec<kernels::OutFrame>,
) -> Result<WorldFeature> {
    let (data, validity): (Vec<_>, Vec<_>) = frames.into_iter().map(|f| (f.data, f.validity)).unzip();
    let features = FeatureMap::from_frames(channels, ho, wo, data)?;
    let validity = ValidityMask::from_frames(ho, wo, validity)?;
    // the resampled track can run past the last full window
    let resampled = wf.track().resample(window.stride[0], window.track_offset())?;
    let track = TransformTrack::new(resampled.transforms()[..features.t()].to_vec())?;
    WorldFeature::new(features, track, validity)
}

/// Appends the validity mask as an extra feature channel.
pub fn attach_validity_channel(wf: &WorldFeature) -> WorldFeature {
    let f = wf.features();
    let (t, c, h, w) = f.dims();
    let plane = h * w;
    let mut data = Vec::with_capacity(t * (c + 1) * plane);
    for u in 0..t {
        data.extend_from_slice(f.frame(u));
        data.extend_from_slice(wf.validity().frame(u));
    }
    let features = FeatureMap::new((t, c + 1, h, w), data).expect("dims are consistent");
    WorldFeature::new(features, wf.track().clone(), wf.validity().clone())
        .expect("track and validity unchanged")
}
