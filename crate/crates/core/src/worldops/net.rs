//! A reduced-width 3D ResNet built entirely from world layers.
//!
//! The layer rows mirror the usual video ResNet-50 stem and stages
//! (conv1, pool1, res2, pool2, res3..res5, global pool, fc) so the
//! temporal length of the transform track shrinks exactly like the feature
//! map does: 64, 32, 16, 16, 8, 8, 8, 8, 1.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    attach_validity_channel, world_avgpool3d, world_conv3d, world_maxpool3d, ConvSpec, PoolKind,
    PoolSpec, Window,
};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{FeatureMap, ValidityMask, WorldFeature};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerConfig {
    Conv {
        name: String,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        out_channels: usize,
        #[serde(default = "default_true")]
        relu: bool,
    },
    MaxPool {
        name: String,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    AvgPool {
        name: String,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    },
    /// Bottleneck blocks `[3x1x1, 1x3x3, 1x1x1]`; the first block applies
    /// `spatial_stride` and a projection shortcut when shapes change.
    ResStage {
        name: String,
        blocks: usize,
        mid_channels: usize,
        out_channels: usize,
        spatial_stride: usize,
    },
    GlobalAvgPool {
        name: String,
    },
    Fc {
        name: String,
        out_features: usize,
    },
}

fn default_true() -> bool {
    true
}

impl LayerConfig {
    pub fn name(&self) -> &str {
        match self {
            LayerConfig::Conv { name, .. }
            | LayerConfig::MaxPool { name, .. }
            | LayerConfig::AvgPool { name, .. }
            | LayerConfig::ResStage { name, .. }
            | LayerConfig::GlobalAvgPool { name }
            | LayerConfig::Fc { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniNetConfig {
    /// Feature channels of the input, before the validity channel is added.
    pub input_channels: usize,
    /// Required input length, if the config pins one.
    #[serde(default)]
    pub expected_frames: Option<usize>,
    /// Channel-width factor relative to the full-size network.
    #[serde(default = "one")]
    pub width_scale: f64,
    pub layers: Vec<LayerConfig>,
}

fn one() -> f64 {
    1.0
}

/// Shape of one convolution (or fc, with a 1x1x1 kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamShape {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: [usize; 3],
}

impl ParamShape {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }
}

struct Bottleneck {
    a: String,
    b: String,
    c: String,
    shortcut: Option<String>,
    spatial_stride: usize,
}

fn bottlenecks(name: &str, blocks: usize, spatial_stride: usize, in_c: usize, out_c: usize) -> Vec<Bottleneck> {
    (0..blocks)
        .map(|i| {
            let stride = if i == 0 { spatial_stride } else { 1 };
            let project = i == 0 && (in_c != out_c || spatial_stride != 1);
            Bottleneck {
                a: format!("{name}.{i}.a"),
                b: format!("{name}.{i}.b"),
                c: format!("{name}.{i}.c"),
                shortcut: project.then(|| format!("{name}.{i}.shortcut")),
                spatial_stride: stride,
            }
        })
        .collect()
}

const BLOCK_A: [usize; 3] = [3, 1, 1];
const BLOCK_B: [usize; 3] = [1, 3, 3];
const POINTWISE: [usize; 3] = [1, 1, 1];

impl MiniNetConfig {
    /// The stem, pooling and four residual stages of the reference video
    /// ResNet-50, channel widths multiplied by `width_scale` (at least 1).
    pub fn canonical(width_scale: f64, classes: usize) -> Self {
        let ch = |full: usize| ((full as f64 * width_scale).round() as usize).max(1);
        let stage = |name: &str, blocks, mid, out, stride| LayerConfig::ResStage {
            name: name.into(),
            blocks,
            mid_channels: ch(mid),
            out_channels: ch(out),
            spatial_stride: stride,
        };
        MiniNetConfig {
            input_channels: 3,
            expected_frames: Some(64),
            width_scale,
            layers: vec![
                LayerConfig::Conv {
                    name: "conv1".into(),
                    kernel: [1, 7, 7],
                    stride: [2, 2, 2],
                    padding: [0, 3, 3],
                    out_channels: ch(64),
                    relu: true,
                },
                LayerConfig::MaxPool {
                    name: "pool1".into(),
                    kernel: [3, 3, 3],
                    stride: [2, 2, 2],
                    padding: [1, 1, 1],
                },
                stage("res2", 3, 64, 256, 1),
                LayerConfig::MaxPool {
                    name: "pool2".into(),
                    kernel: [3, 1, 1],
                    stride: [2, 1, 1],
                    padding: [1, 0, 0],
                },
                stage("res3", 4, 128, 512, 2),
                stage("res4", 6, 256, 1024, 2),
                stage("res5", 3, 512, 2048, 2),
                LayerConfig::GlobalAvgPool { name: "pool5".into() },
                LayerConfig::Fc {
                    name: "fc".into(),
                    out_features: classes,
                },
            ],
        }
    }

    /// Every parameterized layer in forward order, with its shape.
    pub fn param_shapes(&self) -> Result<Vec<(String, ParamShape)>> {
        let mut shapes = Vec::new();
        let mut c = self.input_channels + 1;
        let mut seen_fc = false;
        for layer in &self.layers {
            if seen_fc {
                return Err(Error::contract("fc must be the last layer"));
            }
            match layer {
                LayerConfig::Conv {
                    name,
                    kernel,
                    out_channels,
                    ..
                } => {
                    shapes.push((
                        name.clone(),
                        ParamShape {
                            out_channels: *out_channels,
                            in_channels: c,
                            kernel: *kernel,
                        },
                    ));
                    c = *out_channels;
                }
                LayerConfig::ResStage {
                    name,
                    blocks,
                    mid_channels,
                    out_channels,
                    spatial_stride,
                } => {
                    if *blocks == 0 || *spatial_stride == 0 {
                        return Err(Error::contract(format!("{name}: blocks and stride must be positive")));
                    }
                    let mut in_c = c;
                    for b in bottlenecks(name, *blocks, *spatial_stride, c, *out_channels) {
                        let shape = |out_channels, in_channels, kernel| ParamShape {
                            out_channels,
                            in_channels,
                            kernel,
                        };
                        shapes.push((b.a, shape(*mid_channels, in_c, BLOCK_A)));
                        shapes.push((b.b, shape(*mid_channels, *mid_channels, BLOCK_B)));
                        shapes.push((b.c, shape(*out_channels, *mid_channels, POINTWISE)));
                        if let Some(s) = b.shortcut {
                            shapes.push((s, shape(*out_channels, in_c, POINTWISE)));
                        }
                        in_c = *out_channels;
                    }
                    c = *out_channels;
                }
                LayerConfig::Fc { name, out_features } => {
                    shapes.push((
                        name.clone(),
                        ParamShape {
                            out_channels: *out_features,
                            in_channels: c,
                            kernel: POINTWISE,
                        },
                    ));
                    seen_fc = true;
                }
                LayerConfig::MaxPool { .. }
                | LayerConfig::AvgPool { .. }
                | LayerConfig::GlobalAvgPool { .. } => {}
            }
        }
        Ok(shapes)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub shape: ParamShape,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Weights for every parameterized layer, keyed by layer name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MiniNetWeights {
    layers: BTreeMap<String, LayerParams>,
}

impl MiniNetWeights {
    pub fn zeros(cfg: &MiniNetConfig) -> Result<Self> {
        Self::build(cfg, |_, shape| (vec![0.0; shape.weight_len()], vec![0.0; shape.out_channels]))
    }

    /// He-uniform weights and small biases from a seeded generator.
    pub fn random(cfg: &MiniNetConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(cfg, |_, shape| {
            let bound = (6.0 / shape.fan_in() as f64).sqrt() as f32;
            let w = (0..shape.weight_len()).map(|_| rng.gen_range(-bound..bound)).collect();
            let b = (0..shape.out_channels).map(|_| rng.gen_range(-0.1..0.1)).collect();
            (w, b)
        })
    }

    fn build<F>(cfg: &MiniNetConfig, mut init: F) -> Result<Self>
    where
        F: FnMut(&str, &ParamShape) -> (Vec<f32>, Vec<f32>),
    {
        let mut layers = BTreeMap::new();
        for (name, shape) in cfg.param_shapes()? {
            let (weight, bias) = init(&name, &shape);
            layers.insert(name, LayerParams { shape, weight, bias });
        }
        Ok(MiniNetWeights { layers })
    }

    pub fn get(&self, name: &str) -> Result<&LayerParams> {
        self.layers
            .get(name)
            .ok_or_else(|| Error::contract(format!("no weights for layer {name:?}")))
    }

    pub fn insert(&mut self, name: impl Into<String>, params: LayerParams) {
        self.layers.insert(name.into(), params);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LayerParams)> {
        self.layers.iter()
    }

    /// Writes `<name>.weight.wft` with dims `(out, in, kt, kh*kw)` and
    /// `<name>.bias.wft` with dims `(1, 1, 1, out)` for every layer.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        for (name, p) in &self.layers {
            let [kt, kh, kw] = p.shape.kernel;
            let w = FeatureMap::new(
                (p.shape.out_channels, p.shape.in_channels, kt, kh * kw),
                p.weight.clone(),
            )?;
            io::write_tensor(&w, &dir.join(format!("{name}.weight.wft")))?;
            let b = FeatureMap::new((1, 1, 1, p.shape.out_channels), p.bias.clone())?;
            io::write_tensor(&b, &dir.join(format!("{name}.bias.wft")))?;
        }
        Ok(())
    }

    /// Loads the bundle a config needs, checking every shape.
    pub fn load(dir: &Path, cfg: &MiniNetConfig) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for (name, shape) in cfg.param_shapes()? {
            let w = io::read_tensor(&dir.join(format!("{name}.weight.wft")))?;
            let [kt, kh, kw] = shape.kernel;
            let expect = (shape.out_channels, shape.in_channels, kt, kh * kw);
            if w.dims() != expect {
                return Err(Error::contract(format!(
                    "{name}: weight dims {:?}, expected {expect:?}",
                    w.dims()
                )));
            }
            let b = io::read_tensor(&dir.join(format!("{name}.bias.wft")))?;
            if b.data().len() != shape.out_channels {
                return Err(Error::contract(format!(
                    "{name}: bias has {} values, expected {}",
                    b.data().len(),
                    shape.out_channels
                )));
            }
            layers.insert(
                name,
                LayerParams {
                    shape,
                    weight: w.into_data(),
                    bias: b.into_data(),
                },
            );
        }
        Ok(MiniNetWeights { layers })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub logits: Vec<f32>,
    /// Track length of the input and after every layer row except fc.
    pub track_sizes: Vec<usize>,
}

fn conv_spec(
    weights: &MiniNetWeights,
    name: &str,
    window: Window,
    in_channels: usize,
) -> Result<ConvSpec> {
    let p = weights.get(name)?;
    if p.shape.kernel != window.kernel || p.shape.in_channels != in_channels {
        return Err(Error::contract(format!(
            "{name}: weights shaped {:?} do not fit kernel {:?} with {in_channels} inputs",
            p.shape, window.kernel
        )));
    }
    ConvSpec::new(
        window,
        in_channels,
        p.shape.out_channels,
        p.weight.clone(),
        p.bias.clone(),
    )
}

fn relu(wf: WorldFeature) -> WorldFeature {
    let (f, track, validity) = wf.into_parts();
    let dims = f.dims();
    let data = f.into_data().into_iter().map(|v| v.max(0.0)).collect();
    let f = FeatureMap::new(dims, data).expect("dims unchanged");
    WorldFeature::new(f, track, validity).expect("dims unchanged")
}

/// Elementwise sum; an output position is as observed as the less observed
/// operand.
fn residual_add(a: WorldFeature, b: &WorldFeature) -> Result<WorldFeature> {
    if a.features().dims() != b.features().dims() || a.track() != b.track() {
        return Err(Error::contract("residual operands disagree on shape or track"));
    }
    let (f, track, validity) = a.into_parts();
    let dims = f.dims();
    let data = f
        .into_data()
        .iter()
        .zip(b.features().data())
        .map(|(x, y)| x + y)
        .collect();
    let valid = validity
        .data()
        .iter()
        .zip(b.validity().data())
        .map(|(x, y)| x.min(*y))
        .collect();
    WorldFeature::new(
        FeatureMap::new(dims, data)?,
        track,
        ValidityMask::new(validity.dims(), valid)?,
    )
}

fn bottleneck_forward(
    x: &WorldFeature,
    block: &Bottleneck,
    weights: &MiniNetWeights,
) -> Result<WorldFeature> {
    let c_in = x.features().c();
    let s = block.spatial_stride;
    let a = relu(world_conv3d(
        x,
        &conv_spec(weights, &block.a, Window::new(BLOCK_A, [1, 1, 1], [1, 0, 0]), c_in)?,
    )?);
    let mid = a.features().c();
    let b = relu(world_conv3d(
        &a,
        &conv_spec(weights, &block.b, Window::new(BLOCK_B, [1, s, s], [0, 1, 1]), mid)?,
    )?);
    let c = world_conv3d(
        &b,
        &conv_spec(weights, &block.c, Window::new(POINTWISE, [1, 1, 1], [0, 0, 0]), mid)?,
    )?;
    let out = match &block.shortcut {
        Some(name) => {
            let proj = world_conv3d(
                x,
                &conv_spec(weights, name, Window::new(POINTWISE, [1, s, s], [0, 0, 0]), c_in)?,
            )?;
            residual_add(c, &proj)?
        }
        None => residual_add(c, x)?,
    };
    Ok(relu(out))
}

pub fn forward_mini_net(
    wf: &WorldFeature,
    cfg: &MiniNetConfig,
    weights: &MiniNetWeights,
) -> Result<NetOutput> {
    let (t, c, _, _) = wf.features().dims();
    if c != cfg.input_channels {
        return Err(Error::contract(format!(
            "network expects {} input channels, got {c}",
            cfg.input_channels
        )));
    }
    if let Some(expected) = cfg.expected_frames {
        if t != expected {
            return Err(Error::contract(format!("network expects {expected} frames, got {t}")));
        }
    }
    let mut x = attach_validity_channel(wf);
    let mut sizes = vec![x.track().len()];
    let mut logits = None;
    for layer in &cfg.layers {
        let c_in = x.features().c();
        match layer {
            LayerConfig::Conv {
                name,
                kernel,
                stride,
                padding,
                relu: apply_relu,
                ..
            } => {
                let spec = conv_spec(weights, name, Window::new(*kernel, *stride, *padding), c_in)?;
                x = world_conv3d(&x, &spec)?;
                if *apply_relu {
                    x = relu(x);
                }
            }
            LayerConfig::MaxPool {
                kernel,
                stride,
                padding,
                ..
            } => {
                let spec = PoolSpec::new(PoolKind::Max, Window::new(*kernel, *stride, *padding))?;
                x = world_maxpool3d(&x, &spec)?;
            }
            LayerConfig::AvgPool {
                kernel,
                stride,
                padding,
                ..
            } => {
                let spec = PoolSpec::new(PoolKind::Avg, Window::new(*kernel, *stride, *padding))?;
                x = world_avgpool3d(&x, &spec)?;
            }
            LayerConfig::ResStage {
                name,
                blocks,
                out_channels,
                spatial_stride,
                ..
            } => {
                for block in bottlenecks(name, *blocks, *spatial_stride, c_in, *out_channels) {
                    x = bottleneck_forward(&x, &block, weights)?;
                }
            }
            LayerConfig::GlobalAvgPool { .. } => {
                let (t, _, h, w) = x.features().dims();
                x = world_avgpool3d(&x, &PoolSpec::global_avg(t, h, w))?;
            }
            LayerConfig::Fc { name, .. } => {
                let p = weights.get(name)?;
                let input = x.features().data();
                if p.shape.in_channels != input.len() {
                    return Err(Error::contract(format!(
                        "{name}: expects {} inputs, got {}",
                        p.shape.in_channels,
                        input.len()
                    )));
                }
                logits = Some(
                    (0..p.shape.out_channels)
                        .map(|k| {
                            let row = &p.weight[k * input.len()..(k + 1) * input.len()];
                            let acc: f64 = row
                                .iter()
                                .zip(input)
                                .fold(0.0, |acc, (w, v)| acc + *w as f64 * *v as f64);
                            (acc + p.bias[k] as f64) as f32
                        })
                        .collect(),
                );
                continue;
            }
        }
        sizes.push(x.track().len());
    }
    Ok(NetOutput {
        logits: logits.unwrap_or_else(|| x.features().data().to_vec()),
        track_sizes: sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_roundtrips_through_json() {
        let cfg = MiniNetConfig::canonical(1.0 / 16.0, 10);
        let back = MiniNetConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn canonical_param_shapes() {
        let cfg = MiniNetConfig::canonical(1.0 / 16.0, 10);
        let shapes = cfg.param_shapes().unwrap();
        let conv1 = &shapes[0];
        assert_eq!(conv1.0, "conv1");
        assert_eq!(conv1.1.in_channels, 4);
        assert_eq!(conv1.1.out_channels, 4);
        // 3 + 4 + 6 + 3 blocks of 3 convs, plus 4 projections, conv1 and fc
        assert_eq!(shapes.len(), 16 * 3 + 4 + 2);
        assert_eq!(shapes.last().unwrap().1.in_channels, 128);
    }

    #[test]
    fn weights_roundtrip_through_files() {
        let cfg = MiniNetConfig::canonical(1.0 / 32.0, 3);
        let w = MiniNetWeights::random(&cfg, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        assert_eq!(MiniNetWeights::load(dir.path(), &cfg).unwrap(), w);
        let bigger = MiniNetConfig::canonical(1.0 / 16.0, 3);
        assert!(MiniNetWeights::load(dir.path(), &bigger).is_err());
    }

    #[test]
    fn fc_after_fc_is_rejected() {
        let mut cfg = MiniNetConfig::canonical(1.0 / 32.0, 3);
        cfg.layers.push(LayerConfig::Fc {
            name: "fc2".into(),
            out_features: 2,
        });
        assert!(cfg.param_shapes().is_err());
    }
}
