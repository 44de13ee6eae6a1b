//! Ordinary conv / pool arithmetic evaluated on one aligned stack.
//!
//! Accumulation runs in f64 in `(channel, dt, dy, dx)` order for every
//! output pixel; results are rounded to f32 once.

use super::align::Stack;
use super::{ConvSpec, Window};

pub(crate) struct OutFrame {
    pub data: Vec<f32>,
    pub validity: Vec<f32>,
}

/// Output indices `ox` whose tap `ox * stride + d - pad` lands in `[0, n)`.
fn tap_range(d: usize, pad: usize, stride: usize, n: usize, n_out: usize) -> std::ops::Range<usize> {
    // smallest ox with ox*stride + d >= pad
    let lo = if d >= pad { 0 } else { (pad - d).div_ceil(stride) };
    // largest ox with ox*stride + d - pad <= n - 1, exclusive bound
    let hi = if n + pad < d + 1 {
        0
    } else {
        ((n + pad - d - 1) / stride + 1).min(n_out)
    };
    lo.min(hi)..hi
}

/// Mean validity over every non-padding position of each output window.
fn mean_validity(stack: &Stack<'_, '_>, window: &Window, ho: usize, wo: usize) -> Vec<f32> {
    let [_, kh, kw] = window.kernel;
    let [_, sh, sw] = window.stride;
    let [_, ph, pw] = window.padding;
    let (h, w) = (stack.h, stack.w);
    let mut sum = vec![0.0f64; ho * wo];
    let mut count = vec![0usize; ho * wo];
    for frame in stack.frames.iter().flatten() {
        let v = &frame.validity;
        for dy in 0..kh {
            for oy in tap_range(dy, ph, sh, h, ho) {
                let iy = oy * sh + dy - ph;
                for dx in 0..kw {
                    for ox in tap_range(dx, pw, sw, w, wo) {
                        let ix = ox * sw + dx - pw;
                        sum[oy * wo + ox] += v[iy * w + ix] as f64;
                        count[oy * wo + ox] += 1;
                    }
                }
            }
        }
    }
    sum.iter()
        .zip(count.iter())
        .map(|(&s, &n)| if n == 0 { 0.0 } else { (s / n as f64).min(1.0) as f32 })
        .collect()
}

pub(crate) fn conv_frame(stack: &Stack<'_, '_>, spec: &ConvSpec, (_, ho, wo): (usize, usize, usize)) -> OutFrame {
    let [kt, kh, kw] = spec.window.kernel;
    let [_, sh, sw] = spec.window.stride;
    let [_, ph, pw] = spec.window.padding;
    let (h, w) = (stack.h, stack.w);
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut out = vec![0.0f32; cout * plane_out];
    let mut acc = vec![0.0f64; plane_out];
    let x_ranges: Vec<_> = (0..kw).map(|dx| tap_range(dx, pw, sw, w, wo)).collect();
    for co in 0..cout {
        acc.fill(0.0);
        for ci in 0..cin {
            for dt in 0..kt {
                let Some(frame) = stack.frames[dt] else {
                    continue;
                };
                let src = &frame.data[ci * plane_in..(ci + 1) * plane_in];
                let wbase = (((co * cin + ci) * kt + dt) * kh) * kw;
                for dy in 0..kh {
                    for oy in tap_range(dy, ph, sh, h, ho) {
                        let row = &src[(oy * sh + dy - ph) * w..];
                        let acc_row = &mut acc[oy * wo..(oy + 1) * wo];
                        for dx in 0..kw {
                            let wv = spec.weights[wbase + dy * kw + dx] as f64;
                            for ox in x_ranges[dx].clone() {
                                acc_row[ox] += wv * row[ox * sw + dx - pw] as f64;
                            }
                        }
                    }
                }
            }
        }
        let b = spec.bias[co] as f64;
        for (o, a) in out[co * plane_out..(co + 1) * plane_out].iter_mut().zip(acc.iter()) {
            *o = (a + b) as f32;
        }
    }
    OutFrame {
        data: out,
        validity: mean_validity(stack, &spec.window, ho, wo),
    }
}

pub(crate) fn max_pool_frame(
    stack: &Stack<'_, '_>,
    window: &Window,
    channels: usize,
    (_, ho, wo): (usize, usize, usize),
) -> OutFrame {
    let [_, kh, kw] = window.kernel;
    let [_, sh, sw] = window.stride;
    let [_, ph, pw] = window.padding;
    let (h, w) = (stack.h, stack.w);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut out = vec![f32::NEG_INFINITY; channels * plane_out];
    let mut valid = vec![0.0f32; plane_out];
    let mut seen = vec![false; plane_out];
    for frame in stack.frames.iter().flatten() {
        for dy in 0..kh {
            for oy in tap_range(dy, ph, sh, h, ho) {
                let iy = oy * sh + dy - ph;
                for dx in 0..kw {
                    for ox in tap_range(dx, pw, sw, w, wo) {
                        let ix = ox * sw + dx - pw;
                        let o = oy * wo + ox;
                        let s = iy * w + ix;
                        seen[o] = true;
                        valid[o] = valid[o].max(frame.validity[s]);
                        for ch in 0..channels {
                            let v = frame.data[ch * plane_in + s];
                            let slot = &mut out[ch * plane_out + o];
                            if v > *slot {
                                *slot = v;
                            }
                        }
                    }
                }
            }
        }
    }
    for ch in 0..channels {
        for o in 0..plane_out {
            if !seen[o] {
                out[ch * plane_out + o] = 0.0;
            }
        }
    }
    OutFrame { data: out, validity: valid }
}

pub(crate) fn avg_pool_frame(
    stack: &Stack<'_, '_>,
    window: &Window,
    channels: usize,
    (_, ho, wo): (usize, usize, usize),
) -> OutFrame {
    let [_, kh, kw] = window.kernel;
    let [_, sh, sw] = window.stride;
    let [_, ph, pw] = window.padding;
    let (h, w) = (stack.h, stack.w);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let mut sum = vec![0.0f64; channels * plane_out];
    let mut count = vec![0usize; plane_out];
    for frame in stack.frames.iter().flatten() {
        for dy in 0..kh {
            for oy in tap_range(dy, ph, sh, h, ho) {
                let iy = oy * sh + dy - ph;
                for dx in 0..kw {
                    for ox in tap_range(dx, pw, sw, w, wo) {
                        let ix = ox * sw + dx - pw;
                        let s = iy * w + ix;
                        if frame.validity[s] <= 0.5 {
                            continue;
                        }
                        let o = oy * wo + ox;
                        count[o] += 1;
                        for ch in 0..channels {
                            sum[ch * plane_out + o] += frame.data[ch * plane_in + s] as f64;
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0f32; channels * plane_out];
    for ch in 0..channels {
        for o in 0..plane_out {
            if count[o] > 0 {
                out[ch * plane_out + o] = (sum[ch * plane_out + o] / count[o] as f64) as f32;
            }
        }
    }
    OutFrame {
        data: out,
        validity: mean_validity(stack, window, ho, wo),
    }
}

#[cfg(test)]
mod tests {
    use super::tap_range;

    #[test]
    fn tap_ranges_match_brute_force() {
        for n in 1..9 {
            for k in 1..6 {
                for pad in 0..4 {
                    for stride in 1..4 {
                        if n + 2 * pad < k {
                            continue;
                        }
                        let n_out = (n + 2 * pad - k) / stride + 1;
                        for d in 0..k {
                            let brute: Vec<usize> = (0..n_out)
                                .filter(|&o| {
                                    let i = (o * stride + d) as isize - pad as isize;
                                    i >= 0 && (i as usize) < n
                                })
                                .collect();
                            let fast: Vec<usize> = tap_range(d, pad, stride, n, n_out).collect();
                            assert_eq!(brute, fast, "n={n} k={k} pad={pad} stride={stride} d={d}");
                        }
                    }
                }
            }
        }
    }
}
