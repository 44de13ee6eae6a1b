//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use worldfeatures::stabilize::Frame;
use worldfeatures::worldops::Window;
use worldfeatures::xform::{norm_to_pixel, pixel_to_norm};
use worldfeatures::{FeatureMap, FrameTransform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Band-limited random texture defined on the whole plane, in pixel units.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl Texture {
    /// Sum of sinusoids with wavelengths between `min_wl` and `max_wl`
    /// pixels and amplitude proportional to wavelength.
    pub fn new(seed: u64, components: usize, min_wl: f64, max_wl: f64) -> Self {
        let mut r = rng(seed);
        let waves = (0..components)
            .map(|_| {
                let wl = min_wl * (max_wl / min_wl).powf(r.gen::<f64>());
                let angle = r.gen_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / wl;
                (k * angle.sin(), k * angle.cos(), r.gen_range(0.0..std::f64::consts::TAU), wl / max_wl)
            })
            .collect();
        Texture { waves }
    }

    pub fn standard(seed: u64) -> Self {
        Texture::new(seed, 16, 6.0, 96.0)
    }

    pub fn at(&self, y: f64, x: f64) -> f64 {
        0.5 + 0.15
            * self
                .waves
                .iter()
                .map(|(ky, kx, ph, a)| a * (ky * y + kx * x + ph).sin())
                .sum::<f64>()
    }

    /// Renders `out(i, j) = texture(tf(i, j))` with `tf` a pull map in the
    /// normalized coordinates of an `h x w` frame.
    pub fn render(&self, h: usize, w: usize, tf: &FrameTransform) -> Frame {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let (qy, qx) = tf
                    .apply_point((pixel_to_norm(i as f64, h), pixel_to_norm(j as f64, w)))
                    .unwrap();
                data.push(self.at(norm_to_pixel(qy, h), norm_to_pixel(qx, w)));
            }
        }
        Frame::new(1, h, w, data).unwrap()
    }

    pub fn render_shifted(&self, h: usize, w: usize, dy: f64, dx: f64) -> Frame {
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                data.push(self.at(i as f64 + dy, j as f64 + dx));
            }
        }
        Frame::new(1, h, w, data).unwrap()
    }
}

pub fn frame_to_f32(f: &Frame) -> Vec<f32> {
    f.data.iter().map(|v| *v as f32).collect()
}

/// Mean distance, in pixels, between where `a` and `b` send each pixel.
pub fn endpoint_error(a: &FrameTransform, b: &FrameTransform, h: usize, w: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..h {
        for j in 0..w {
            let p = (pixel_to_norm(i as f64, h), pixel_to_norm(j as f64, w));
            let (ay, ax) = a.apply_point(p).unwrap();
            let (by, bx) = b.apply_point(p).unwrap();
            let dy = (ay - by) * (h - 1) as f64 * 0.5;
            let dx = (ax - bx) * (w - 1) as f64 * 0.5;
            sum += (dy * dy + dx * dx).sqrt();
        }
    }
    sum / (h * w) as f64
}

/// Random similarity-style affine: rotation about the center, isotropic
/// scale, translation in pixels.
pub fn random_affine(r: &mut ChaCha8Rng, h: usize, w: usize, max_shift: f64, max_deg: f64, scale: (f64, f64)) -> FrameTransform {
    let theta = r.gen_range(-max_deg..=max_deg).to_radians();
    let s = r.gen_range(scale.0..=scale.1);
    let dy = r.gen_range(-max_shift..=max_shift);
    let dx = r.gen_range(-max_shift..=max_shift);
    FrameTransform::translate_pixels(dy, dx, h, w)
        .compose(&FrameTransform::rotation(theta))
        .compose(&FrameTransform::scale(s))
}

pub fn random_values(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect()
}

/// Plain zero-padded 3D convolution of a `(T, C, H, W)` tensor, summing in
/// f64 in `(ci, dt, dy, dx)` order.
pub fn naive_conv3d(x: &FeatureMap, window: &Window, cout: usize, weights: &[f32], bias: &[f32]) -> FeatureMap {
    let (t, cin, h, w) = x.dims();
    let [kt, kh, kw] = window.kernel;
    let [st, sh, sw] = window.stride;
    let [pt, ph, pw] = window.padding;
    let to = (t + 2 * pt - kt) / st + 1;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let fetch = |u: isize, c: usize, y: isize, xx: isize| -> f64 {
        if u < 0 || y < 0 || xx < 0 || u >= t as isize || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x.get(u as usize, c, y as usize, xx as usize) as f64
        }
    };
    let mut out = Vec::with_capacity(to * cout * ho * wo);
    for ot in 0..to {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0f64;
                    for ci in 0..cin {
                        for dt in 0..kt {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let wi = (((co * cin + ci) * kt + dt) * kh + dy) * kw + dx;
                                    let v = fetch(
                                        (ot * st + dt) as isize - pt as isize,
                                        ci,
                                        (oy * sh + dy) as isize - ph as isize,
                                        (ox * sw + dx) as isize - pw as isize,
                                    );
                                    acc += weights[wi] as f64 * v;
                                }
                            }
                        }
                    }
                    out.push((acc + bias[co] as f64) as f32);
                }
            }
        }
    }
    FeatureMap::new((to, cout, ho, wo), out).unwrap()
}

/// Plain 3D pooling; padding positions are ignored. `avg` divides by the
/// number of non-padding positions.
pub fn naive_pool3d(x: &FeatureMap, window: &Window, avg: bool) -> FeatureMap {
    let (t, c, h, w) = x.dims();
    let [kt, kh, kw] = window.kernel;
    let [st, sh, sw] = window.stride;
    let [pt, ph, pw] = window.padding;
    let to = (t + 2 * pt - kt) / st + 1;
    let ho = (h + 2 * ph - kh) / sh + 1;
    let wo = (w + 2 * pw - kw) / sw + 1;
    let mut out = Vec::with_capacity(to * c * ho * wo);
    for ot in 0..to {
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut sum = 0.0f64;
                    let mut max = f32::NEG_INFINITY;
                    let mut n = 0usize;
                    for dt in 0..kt {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let u = (ot * st + dt) as isize - pt as isize;
                                let y = (oy * sh + dy) as isize - ph as isize;
                                let xx = (ox * sw + dx) as isize - pw as isize;
                                if u < 0 || y < 0 || xx < 0 || u >= t as isize || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let v = x.get(u as usize, ch, y as usize, xx as usize);
                                sum += v as f64;
                                max = max.max(v);
                                n += 1;
                            }
                        }
                    }
                    out.push(match (n, avg) {
                        (0, _) => 0.0,
                        (_, true) => (sum / n as f64) as f32,
                        (_, false) => max,
                    });
                }
            }
        }
    }
    FeatureMap::new((to, c, ho, wo), out).unwrap()
}

/// Per-pixel reference warp. Returns `(data, validity)`.
pub fn brute_warp(
    data: &[f32],
    validity: &[f32],
    c: usize,
    h: usize,
    w: usize,
    tf: &FrameTransform,
    bilinear: bool,
) -> (Vec<f32>, Vec<f32>) {
    let mut out = vec![0.0f32; c * h * w];
    let mut out_v = vec![0.0f32; h * w];
    let px = |ch: usize, y: i64, x: i64| -> (f64, f64) {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            (0.0, 0.0)
        } else {
            let k = y as usize * w + x as usize;
            (data[ch * h * w + k] as f64, validity[k] as f64)
        }
    };
    for i in 0..h {
        for j in 0..w {
            let Ok((qy, qx)) = tf.apply_point((pixel_to_norm(i as f64, h), pixel_to_norm(j as f64, w))) else {
                continue;
            };
            let (py, pxx) = (norm_to_pixel(qy, h), norm_to_pixel(qx, w));
            if !py.is_finite() || !pxx.is_finite() {
                continue;
            }
            if bilinear {
                let (y0, x0) = (py.floor(), pxx.floor());
                let (fy, fx) = (py - y0, pxx - x0);
                let (y0, x0) = (y0 as i64, x0 as i64);
                let taps = [
                    (y0, x0, (1.0 - fy) * (1.0 - fx)),
                    (y0, x0 + 1, (1.0 - fy) * fx),
                    (y0 + 1, x0, fy * (1.0 - fx)),
                    (y0 + 1, x0 + 1, fy * fx),
                ];
                let mut v = 0.0;
                for &(y, x, wt) in &taps {
                    v += wt * px(0, y, x).1;
                }
                out_v[i * w + j] = v.min(1.0) as f32;
                for ch in 0..c {
                    let mut s = 0.0;
                    for &(y, x, wt) in &taps {
                        s += wt * px(ch, y, x).0;
                    }
                    out[ch * h * w + i * w + j] = s as f32;
                }
            } else {
                let (y, x) = ((py + 0.5).floor(), (pxx + 0.5).floor());
                if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
                    continue;
                }
                let (y, x) = (y as i64, x as i64);
                out_v[i * w + j] = px(0, y, x).1 as f32;
                for ch in 0..c {
                    out[ch * h * w + i * w + j] = px(ch, y, x).0 as f32;
                }
            }
        }
    }
    (out, out_v)
}

/// Random valid window for a `(t, h, w)` input; spatial padding at most
/// half the kernel.
pub fn random_window(r: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> Window {
    loop {
        let kt = [1, 3, 5][r.gen_range(0..3)];
        let kh = r.gen_range(1..=5);
        let kw = r.gen_range(1..=5);
        let win = Window::new(
            [kt, kh, kw],
            [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=2)],
            [r.gen_range(0..=kt / 2), r.gen_range(0..=kh / 2), r.gen_range(0..=kw / 2)],
        );
        if win.out_dims(t, h, w).is_ok() {
            return win;
        }
    }
}
