//! `worldfeat` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gaze::{
    fixation_transform, order_saccades, pursuit_track, pursuit_track_smoothed, saccade_track, synth_motion_track,
    temporal_diff_saliency, variance_box, MotionSpec,
};
use crate::io;
use crate::sampler::{warp_clip_to_reference, InterpMode};
use crate::stabilize::{stabilize_clip_detailed, AlignConfig};
use crate::tensor::{replicate_image, BoundingBox, WorldFeature};
use crate::worldops::{forward_mini_net, MiniNetConfig, MiniNetWeights};
use crate::xform::{TransformKind, TransformTrack};

#[derive(Debug, Parser)]
#[command(name = "worldfeat", version, about = "World-coordinate video features: stabilization, gaze transforms and world-aligned layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a stabilizing track for an image sequence
    Stabilize(StabilizeArgs),
    /// Render a sequence in the reference frame's coordinates
    StabilizeRender(RenderArgs),
    /// Smooth-pursuit track from per-frame boxes
    Pursuit(PursuitArgs),
    /// Fixation track from temporal-difference saliency
    Fixate(FixateArgs),
    /// Saccade track over a still image from a set of boxes
    Saccades(SaccadeArgs),
    /// Synthetic camera-motion track
    GenMotion(MotionArgs),
    /// Run the world-coordinate mini network
    Worldconv(WorldconvArgs),
}

/// Reference frame selector: `center` or a frame index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reference {
    Center,
    Index(usize),
}

impl FromStr for Reference {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "center" {
            return Ok(Reference::Center);
        }
        s.parse()
            .map(Reference::Index)
            .map_err(|_| format!("expected `center` or a frame index, got `{s}`"))
    }
}

impl Reference {
    fn resolve(self, t: usize) -> Result<usize> {
        match self {
            Reference::Center => Ok(t / 2),
            Reference::Index(i) if i < t => Ok(i),
            Reference::Index(i) => Err(Error::Contract(format!("reference frame {i} out of range for {t} frames"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Interp {
    Nearest,
    Bilinear,
}

impl From<Interp> for InterpMode {
    fn from(i: Interp) -> Self {
        match i {
            Interp::Nearest => InterpMode::Nearest,
            Interp::Bilinear => InterpMode::Bilinear,
        }
    }
}

#[derive(Debug, Args)]
struct StabilizeArgs {
    /// Directory of PGM/PPM frames, read in lexicographic order
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "affine")]
    kind: TransformKind,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value = "center")]
    reference: Reference,
}

#[derive(Debug, Args)]
struct RenderArgs {
    input: PathBuf,
    #[arg(long)]
    track: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "center")]
    reference: Reference,
    #[arg(long, value_enum, default_value = "nearest")]
    interp: Interp,
}

#[derive(Debug, Args)]
struct PursuitArgs {
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    out: PathBuf,
    /// Exponential smoothing factor in (0, 1]; 1 disables smoothing
    #[arg(long)]
    smooth: Option<f64>,
}

#[derive(Debug, Args)]
struct FixateArgs {
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    /// Existing track to compose the fixation with
    #[arg(long)]
    track: Option<PathBuf>,
    /// Also write the fixation box as box JSON
    #[arg(long)]
    box_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SaccadeArgs {
    #[arg(long)]
    boxes: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 64)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the replicated clip tensor
    #[arg(long)]
    clip: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MotionArgs {
    #[arg(long)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WorldconvArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    track: PathBuf,
    /// Network config JSON; defaults to the canonical 1/16-width network
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weight directory; random weights from --seed when omitted
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Runs the CLI and returns the process exit code: 0 on success, 2 on a
/// usage error, 1 on a runtime error.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 2,
                _ => 2,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            1
        }
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Stabilize(a) => stabilize(a),
        Command::StabilizeRender(a) => render(a),
        Command::Pursuit(a) => pursuit(a),
        Command::Fixate(a) => fixate(a),
        Command::Saccades(a) => saccades(a),
        Command::GenMotion(a) => gen_motion(a),
        Command::Worldconv(a) => worldconv(a),
    }
}

fn stabilize(a: StabilizeArgs) -> Result<()> {
    let clip = io::read_image_dir(&a.input)?;
    let reference = a.reference.resolve(clip.t())?;
    let cfg = AlignConfig {
        delta: a.delta,
        kind: a.kind,
        levels: a.levels,
        ..AlignConfig::default()
    };
    let result = stabilize_clip_detailed(&clip, reference, &cfg)?;
    for t in result.degenerate_pairs() {
        eprintln!("warning: frames {t} and {} are degenerate, using identity", t + 1);
    }
    io::write_track(&result.track, &a.out)
}

fn render(a: RenderArgs) -> Result<()> {
    let clip = io::read_image_dir(&a.input)?;
    let track = io::read_track(&a.track)?;
    let reference = a.reference.resolve(clip.t())?;
    let wf = WorldFeature::observed(clip, track)?;
    let out = warp_clip_to_reference(&wf, reference, a.interp.into())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io_at(&a.out, e))?;
    io::write_image_dir(out.features(), &a.out, "frame")?;
    io::write_mask_dir(out.validity(), &a.out, "mask")?;
    Ok(())
}

fn pursuit(a: PursuitArgs) -> Result<()> {
    let boxes = io::read_boxes(&a.boxes)?;
    let track = match a.smooth {
        Some(alpha) => pursuit_track_smoothed(&boxes, a.height, a.width, alpha)?,
        None => pursuit_track(&boxes, a.height, a.width)?,
    };
    io::write_track(&track, &a.out)
}

fn fixate(a: FixateArgs) -> Result<()> {
    let clip = io::read_image_dir(&a.input)?;
    let (t, _, h, w) = clip.dims();
    let saliency = temporal_diff_saliency(&clip)?;
    let b = match variance_box(&saliency, a.fraction) {
        Ok(b) => b,
        Err(Error::Degenerate(msg)) => {
            eprintln!("warning: {msg}; fixating the full frame");
            BoundingBox::full_frame(h, w)
        }
        Err(e) => return Err(e),
    };
    let fix = fixation_transform(&b, h, w)?;
    let base = match &a.track {
        Some(p) => read_track_len(p, t)?,
        None => TransformTrack::identity(t),
    };
    let track = TransformTrack::new(base.iter().map(|tf| tf.compose(&fix)).collect())?;
    if let Some(p) = &a.box_out {
        io::write_boxes(&[b], p)?;
    }
    io::write_track(&track, &a.out)
}

fn read_track_len(path: &Path, t: usize) -> Result<TransformTrack> {
    let track = io::read_track(path)?;
    if track.len() != t {
        return Err(Error::Contract(format!(
            "track {} has {} frames, clip has {t}",
            path.display(),
            track.len()
        )));
    }
    Ok(track)
}

fn saccades(a: SaccadeArgs) -> Result<()> {
    let boxes = io::read_boxes(&a.boxes)?;
    if boxes.len() != a.frames {
        return Err(Error::Contract(format!(
            "{} boxes given for {} frames",
            boxes.len(),
            a.frames
        )));
    }
    let img = io::read_image(&a.image)?;
    let (_, _, h, w) = img.dims();
    let path = order_saccades(&boxes)?;
    let track = saccade_track(&path, h, w)?;
    if let Some(p) = &a.clip {
        io::write_tensor(&replicate_image(&img, a.frames)?, p)?;
    }
    io::write_track(&track, &a.out)
}

fn gen_motion(a: MotionArgs) -> Result<()> {
    let track = synth_motion_track(&MotionSpec::new(a.frames, a.seed))?;
    io::write_track(&track, &a.out)
}

fn worldconv(a: WorldconvArgs) -> Result<()> {
    let clip = io::read_tensor(&a.input)?;
    let track = read_track_len(&a.track, clip.t())?;
    let cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io_at(p, e))?;
            MiniNetConfig::from_json(&text)?
        }
        None => MiniNetConfig::canonical(1.0 / 16.0, 400),
    };
    let weights = match &a.weights {
        Some(dir) => MiniNetWeights::load(dir, &cfg)?,
        None => MiniNetWeights::random(&cfg, a.seed)?,
    };
    let wf = WorldFeature::observed(clip, track)?;
    let out = forward_mini_net(&wf, &cfg, &weights)?;
    let n = out.logits.len();
    io::write_tensor(&crate::tensor::FeatureMap::new((1, 1, 1, n), out.logits)?, &a.out)?;
    if let Some(p) = &a.report {
        io::write_atomic(p, serde_json::to_string(&out.track_sizes)?.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parsing() {
        assert_eq!("center".parse::<Reference>().unwrap(), Reference::Center);
        assert_eq!("3".parse::<Reference>().unwrap(), Reference::Index(3));
        assert!("middle".parse::<Reference>().is_err());
        assert_eq!(Reference::Center.resolve(16).unwrap(), 8);
        assert!(Reference::Index(16).resolve(16).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run_cli(["worldfeat", "--help"]), 0);
        assert_eq!(run_cli(["worldfeat", "bogus"]), 2);
        assert_eq!(run_cli(["worldfeat", "gen-motion", "--frames", "8", "--out"]), 2);
        assert_eq!(run_cli(["worldfeat", "gen-motion", "--frames", "8", "--bogus", "x"]), 2);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("t.json");
        let out = out.to_str().unwrap();
        assert_eq!(run_cli(["worldfeat", "gen-motion", "--frames", "2", "--out", out]), 1);
        assert_eq!(run_cli(["worldfeat", "gen-motion", "--frames", "8", "--out", out]), 0);
        assert_eq!(io::read_track(Path::new(out)).unwrap().len(), 8);
    }
}
