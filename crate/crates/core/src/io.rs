//! File formats: `WFT1` tensors, PGM/PPM image sequences, transform and
//! box JSON documents.
//!
//! `WFT1` layout: the magic bytes `WFT1`, four little-endian `u32` dims
//! `(T, C, H, W)`, then `T*C*H*W` little-endian `f32` values, frame-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoundingBox, FeatureMap, ValidityMask};
use crate::xform::{FrameTransform, TransformKind, TransformTrack};

pub const TENSOR_MAGIC: &[u8; 4] = b"WFT1";
const HEADER_LEN: usize = 4 + 16;

/// Writes `bytes` to a temporary file beside `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io_at(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io_at(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io_at(path, e))?;
    tmp.persist(path).map_err(|e| Error::io_at(path, e.error))?;
    Ok(())
}

pub fn encode_tensor(fm: &FeatureMap) -> Result<Vec<u8>> {
    let (t, c, h, w) = fm.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fm.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [t, c, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in fm.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("missing WFT1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("tensor header is truncated".into()));
    }
    let dim = |i: usize| {
        let b = &bytes[4 + 4 * i..8 + 4 * i];
        u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize
    };
    let dims = (dim(0), dim(1), dim(2), dim(3));
    let expected = dims
        .0
        .checked_mul(dims.1)
        .and_then(|v| v.checked_mul(dims.2))
        .and_then(|v| v.checked_mul(dims.3))
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() % 4 != 0 {
        return Err(Error::Format("payload is not a whole number of f32 values".into()));
    }
    let found = payload.len() / 4;
    if found != expected {
        return Err(Error::Truncated { expected, found });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(dims, data)
}

pub fn read_tensor(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| Error::io_at(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor(fm: &FeatureMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_tensor(fm)?)
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// PGM/PPM files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io_at(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io_at(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_pnm(p))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads one 8-bit PGM (1 channel) or PPM (3 channels) image as a
/// single-frame map with values in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<FeatureMap> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io_at(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io_at(path, e))?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, interleaved) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    let plane = h * w;
    let mut data = vec![0.0f32; c * plane];
    for (k, v) in interleaved.iter().enumerate() {
        data[(k % c) * plane + k / c] = *v as f32 / 255.0;
    }
    FeatureMap::new((1, c, h, w), data)
}

/// Reads a directory of same-sized PGM/PPM frames as one clip.
pub fn read_image_dir(dir: &Path) -> Result<FeatureMap> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Format(format!("no PGM/PPM frames in {}", dir.display())));
    }
    let first = read_image(&paths[0])?;
    let (_, c, h, w) = first.dims();
    let mut frames = vec![first.into_data()];
    for p in &paths[1..] {
        let f = read_image(p)?;
        if f.dims() != (1, c, h, w) {
            return Err(Error::Format(format!(
                "{} has dims {:?}, expected {:?}",
                p.display(),
                f.dims(),
                (1, c, h, w)
            )));
        }
        frames.push(f.into_data());
    }
    FeatureMap::from_frames(c, h, w, frames)
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes one frame (1 or 3 channels) as binary PGM/PPM.
pub fn encode_pnm(frame: &[f32], c: usize, h: usize, w: usize) -> Result<Vec<u8>> {
    let plane = h * w;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::contract(format!("cannot write {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(to_byte(frame[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Writes every frame as `<prefix>_NNNN.pgm|ppm` into `dir`.
pub fn write_image_dir(fm: &FeatureMap, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
    let (t, c, h, w) = fm.dims();
    let ext = if c == 1 { "pgm" } else { "ppm" };
    (0..t)
        .map(|u| {
            let path = dir.join(format!("{prefix}_{u:04}.{ext}"));
            write_atomic(&path, &encode_pnm(fm.frame(u), c, h, w)?)?;
            Ok(path)
        })
        .collect()
}

pub fn write_mask_dir(mask: &ValidityMask, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let (t, h, w) = mask.dims();
    let fm = FeatureMap::new((t, 1, h, w), mask.data().to_vec())?;
    write_image_dir(&fm, dir, prefix)
}

pub const COORDS_TAG: &str = "normalized_corner_aligned";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformFile {
    pub version: u32,
    pub kind: TransformKind,
    pub coords: String,
    pub frames: Vec<Vec<f64>>,
}

impl TransformFile {
    pub fn from_track(track: &TransformTrack) -> Self {
        TransformFile {
            version: 1,
            kind: track.kind(),
            coords: COORDS_TAG.into(),
            frames: track.iter().map(|t| t.params().to_vec()).collect(),
        }
    }

    pub fn into_track(self) -> Result<TransformTrack> {
        if self.version != 1 {
            return Err(Error::Format(format!("unsupported transform file version {}", self.version)));
        }
        if self.coords != COORDS_TAG {
            return Err(Error::Format(format!("unsupported coordinate convention {:?}", self.coords)));
        }
        let frames = self
            .frames
            .iter()
            .map(|p| FrameTransform::from_params(self.kind, p))
            .collect::<Result<Vec<_>>>()?;
        TransformTrack::new(frames)
    }
}

pub fn track_to_json(track: &TransformTrack) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TransformFile::from_track(track))?)
}

pub fn track_from_json(text: &str) -> Result<TransformTrack> {
    serde_json::from_str::<TransformFile>(text)?.into_track()
}

pub fn read_track(path: &Path) -> Result<TransformTrack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    track_from_json(&text)
}

pub fn write_track(track: &TransformTrack, path: &Path) -> Result<()> {
    write_atomic(path, track_to_json(track)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxFile {
    pub version: u32,
    pub boxes: Vec<BoundingBox>,
}

pub fn boxes_from_json(text: &str) -> Result<Vec<BoundingBox>> {
    let file: BoxFile = serde_json::from_str(text)?;
    if file.version != 1 {
        return Err(Error::Format(format!("unsupported box file version {}", file.version)));
    }
    for b in &file.boxes {
        b.validate()?;
    }
    Ok(file.boxes)
}

pub fn boxes_to_json(boxes: &[BoundingBox]) -> Result<String> {
    Ok(serde_json::to_string_pretty(&BoxFile {
        version: 1,
        boxes: boxes.to_vec(),
    })?)
}

pub fn read_boxes(path: &Path) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    boxes_from_json(&text)
}

pub fn write_boxes(boxes: &[BoundingBox], path: &Path) -> Result<()> {
    write_atomic(path, boxes_to_json(boxes)?.as_bytes())
}
