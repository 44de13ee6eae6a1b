//! Receptive-field alignment: builds, for every output frame, the stack of
//! input frames warped into the window center's coordinates.

use std::borrow::Cow;

use rayon::prelude::*;

use super::kernels::OutFrame;
use super::Window;
use crate::error::Result;
use crate::sampler::{warp_frame, FrameView, InterpMode};
use crate::tensor::WorldFeature;

/// How aligned stacks are materialized. Both produce identical outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignStrategy {
    /// Warp the receptive field of each output independently.
    PerOutput,
    /// Build `k` aligned copies of the clip, one per window phase, so copy
    /// `j` aligns frames `{j, .., j+k-1}`, `{j+k, .., j+2k-1}`, ... to their
    /// group centers, then read every window out of the copy of its phase.
    #[default]
    Batched,
}

pub(crate) struct AlignedFrame<'a> {
    pub data: Cow<'a, [f32]>,
    pub validity: Cow<'a, [f32]>,
}

/// Temporal receptive field of one output; `None` marks a padding frame.
pub(crate) struct Stack<'s, 'a> {
    pub h: usize,
    pub w: usize,
    pub frames: &'s [Option<&'s AlignedFrame<'a>>],
}

fn align_frame(wf: &WorldFeature, u: usize, center: usize) -> Result<AlignedFrame<'_>> {
    let rel = wf.track().relative_to_center(u, center)?;
    let view = FrameView::of(wf, u);
    if rel.is_identity() {
        return Ok(AlignedFrame {
            data: Cow::Borrowed(view.data),
            validity: Cow::Borrowed(view.validity),
        });
    }
    let warped = warp_frame(view, &rel, InterpMode::Nearest);
    Ok(AlignedFrame {
        data: Cow::Owned(warped.data),
        validity: Cow::Owned(warped.validity),
    })
}

fn frame_index(u: isize, t: usize) -> Option<usize> {
    (u >= 0 && (u as usize) < t).then_some(u as usize)
}

pub(crate) fn map_aligned<F>(
    wf: &WorldFeature,
    window: &Window,
    strategy: AlignStrategy,
    kernel: F,
) -> Result<Vec<OutFrame>>
where
    F: Fn(&Stack<'_, '_>) -> OutFrame + Sync,
{
    let (t, _, h, w) = wf.features().dims();
    let t_out = window.out_len(0, t)?;
    let kt = window.kernel[0];
    match strategy {
        AlignStrategy::PerOutput => (0..t_out)
            .into_par_iter()
            .map(|o| {
                let center = window.center_frame(o);
                let start = window.window_start(o);
                let owned = (0..kt as isize)
                    .map(|d| {
                        frame_index(start + d, t)
                            .map(|u| align_frame(wf, u, center))
                            .transpose()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<_> = owned.iter().map(Option::as_ref).collect();
                Ok(kernel(&Stack { h, w, frames: &refs }))
            })
            .collect(),
        AlignStrategy::Batched => {
            let half = window.half() as isize;
            let mut phases = vec![false; kt];
            for o in 0..t_out {
                phases[window.window_start(o).rem_euclid(kt as isize) as usize] = true;
            }
            // copies[j][u]: frame u aligned to the center of its phase-j group
            let jobs: Vec<(usize, usize)> = (0..kt)
                .filter(|&j| phases[j])
                .flat_map(|j| (0..t).map(move |u| (j, u)))
                .collect();
            let aligned = jobs
                .par_iter()
                .map(|&(j, u)| {
                    let u_i = u as isize;
                    let start = u_i - (u_i - j as isize).rem_euclid(kt as isize);
                    frame_index(start + half, t)
                        .map(|center| align_frame(wf, u, center))
                        .transpose()
                })
                .collect::<Result<Vec<_>>>()?;
            let mut copies: Vec<Vec<Option<AlignedFrame<'_>>>> = (0..kt).map(|_| Vec::new()).collect();
            for ((j, _), frame) in jobs.iter().zip(aligned) {
                copies[*j].push(frame);
            }
            Ok((0..t_out)
                .into_par_iter()
                .map(|o| {
                    let start = window.window_start(o);
                    let copy = &copies[start.rem_euclid(kt as isize) as usize];
                    let refs: Vec<_> = (0..kt as isize)
                        .map(|d| frame_index(start + d, t).and_then(|u| copy[u].as_ref()))
                        .collect();
                    kernel(&Stack { h, w, frames: &refs })
                })
                .collect())
        }
    }
}
