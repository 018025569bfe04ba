//! File containers.
//!
//! Binary containers are little-endian throughout.
//!
//! | container | layout |
//! |-----------|--------|
//! | motion    | `b"GGMO"`, version `u32`, fps `f32`, T `u32`, J `u32`, then `T*J*(3+9)` `f32` (per frame and joint: position, row-major rotation) |
//! | features  | `b"GGFT"`, version `u32`, modality `u32` (0 audio, 1 motion), F, D_low, C, D_high, hop `u32`, fps `f32`, then `F*D_low` and `C*D_high` `f32` row-major |
//! | flow      | width `u32`, height `u32`, then row-major `(dx, dy)` `f32` pairs |
//!
//! Structured-text files are JSON, except matches (`x1 y1 x2 y2` per line)
//! and the motion text variant (JSON lines: a `{"fps", "joints"}` header
//! record followed by one `{"positions", "rotations"}` record per frame).

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTrack, Modality};
use crate::geometry::{HomographyFlow, PointMatch, Pose2D};
use crate::mask::{BBox, RleMask};
use crate::motion::JointSequence;

pub const MOTION_MAGIC: &[u8; 4] = b"GGMO";
pub const FEATURE_MAGIC: &[u8; 4] = b"GGFT";
pub const FORMAT_VERSION: u32 = 1;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.path, format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| {
            Error::format(self.path, "array length overflows")
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::format(
                self.path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            ));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn to_u32(path: &Path, v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("{what} {v} does not fit in u32")))
}

// ---- motion ----

pub fn encode_motion(seq: &JointSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + seq.positions().len() * 48);
    out.extend_from_slice(MOTION_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_f32(&mut out, seq.fps());
    push_u32(&mut out, seq.frames() as u32);
    push_u32(&mut out, seq.joints() as u32);
    for (p, r) in seq.positions().iter().zip(seq.rotations()) {
        p.iter().for_each(|&v| push_f32(&mut out, v));
        for row in 0..3 {
            for col in 0..3 {
                push_f32(&mut out, r[(row, col)]);
            }
        }
    }
    out
}

/// Byte offset of frame `frame` in a binary motion container.
pub fn motion_frame_offset(joints: usize, frame: usize) -> u64 {
    24 + (frame * joints * 12 * 4) as u64
}

pub fn write_motion(path: &Path, seq: &JointSequence) -> Result<()> {
    write_bytes(path, &encode_motion(seq))
}

#[derive(Serialize, Deserialize)]
struct MotionTextHeader {
    fps: f64,
    joints: usize,
}

#[derive(Serialize, Deserialize)]
struct MotionTextFrame {
    positions: Vec<[f64; 3]>,
    /// Row-major 3x3 per joint.
    rotations: Vec<[f64; 9]>,
}

fn build_sequence(
    path: &Path,
    fps: f64,
    joints: usize,
    positions: Vec<Vector3<f64>>,
    rotations: Vec<Matrix3<f64>>,
) -> Result<JointSequence> {
    JointSequence::new(fps, joints, positions, rotations)
        .map_err(|e| Error::format(path, e.to_string()))
}

/// Reads either container variant (binary when the magic matches).
pub fn read_motion(path: &Path) -> Result<JointSequence> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(MOTION_MAGIC) {
        decode_motion(path, &bytes)
    } else {
        decode_motion_text(path, &bytes)
    }
}

pub fn decode_motion(path: &Path, bytes: &[u8]) -> Result<JointSequence> {
    let mut r = Reader::new(path, bytes);
    r.magic(MOTION_MAGIC)?;
    let fps = r.f32()? as f64;
    let frames = r.u32()? as usize;
    let joints = r.u32()? as usize;
    let values = r.f32s(frames * joints * 12)?;
    r.finish()?;
    let mut positions = Vec::with_capacity(frames * joints);
    let mut rotations = Vec::with_capacity(frames * joints);
    for entry in values.chunks_exact(12) {
        positions.push(Vector3::new(entry[0], entry[1], entry[2]));
        rotations.push(Matrix3::from_row_slice(&entry[3..12]));
    }
    build_sequence(path, fps, joints, positions, rotations)
}

fn decode_motion_text(path: &Path, bytes: &[u8]) -> Result<JointSequence> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: MotionTextHeader = serde_json::from_str(
        lines.next().ok_or_else(|| Error::format(path, "empty motion file"))?,
    )
    .map_err(|e| Error::format(path, format!("header: {e}")))?;
    let mut positions = Vec::new();
    let mut rotations = Vec::new();
    for (t, line) in lines.enumerate() {
        let frame: MotionTextFrame = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("frame {t}: {e}")))?;
        if frame.positions.len() != header.joints || frame.rotations.len() != header.joints {
            return Err(Error::format(path, format!("frame {t}: expected {} joints", header.joints)));
        }
        positions.extend(frame.positions.iter().map(|p| Vector3::from_row_slice(p)));
        rotations.extend(frame.rotations.iter().map(|r| Matrix3::from_row_slice(r)));
    }
    build_sequence(path, header.fps, header.joints, positions, rotations)
}

pub fn write_motion_text(path: &Path, seq: &JointSequence) -> Result<()> {
    let mut out = serde_json::to_string(&MotionTextHeader {
        fps: seq.fps(),
        joints: seq.joints(),
    })?;
    out.push('\n');
    let j = seq.joints();
    for t in 0..seq.frames() {
        let frame = MotionTextFrame {
            positions: seq.positions()[t * j..(t + 1) * j].iter().map(|p| [p.x, p.y, p.z]).collect(),
            rotations: seq.rotations()[t * j..(t + 1) * j]
                .iter()
                .map(|r| {
                    let mut v = [0.0; 9];
                    for row in 0..3 {
                        for col in 0..3 {
                            v[row * 3 + col] = r[(row, col)];
                        }
                    }
                    v
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&frame)?);
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

// ---- masks and boxes ----

/// Per-frame body masks of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskTrack {
    pub width: u32,
    pub height: u32,
    /// Run-length counts per frame.
    pub frames: Vec<Vec<u32>>,
}

impl MaskTrack {
    pub fn from_masks(width: u32, height: u32, masks: &[RleMask]) -> Self {
        MaskTrack {
            width,
            height,
            frames: masks.iter().map(|m| m.counts.clone()).collect(),
        }
    }

    pub fn into_masks(self) -> Result<Vec<RleMask>> {
        let (w, h) = (self.width, self.height);
        self.frames.into_iter().map(|c| RleMask::new(w, h, c)).collect()
    }
}

pub fn read_masks(path: &Path) -> Result<(u32, u32, Vec<RleMask>)> {
    let track: MaskTrack = read_json(path)?;
    let (w, h) = (track.width, track.height);
    let masks = track.into_masks().map_err(|e| Error::format(path, e.to_string()))?;
    Ok((w, h, masks))
}

/// A single-mask file is a mask track with one frame.
pub fn read_single_mask(path: &Path) -> Result<RleMask> {
    let (_, _, mut masks) = read_masks(path)?;
    if masks.len() != 1 {
        return Err(Error::format(path, format!("expected one mask, found {}", masks.len())));
    }
    Ok(masks.remove(0))
}

pub fn write_masks(path: &Path, width: u32, height: u32, masks: &[RleMask]) -> Result<()> {
    write_json(path, &MaskTrack::from_masks(width, height, masks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxTrack {
    /// Hand boxes per frame, each `[x0, y0, x1, y1]`.
    pub frames: Vec<Vec<BBox>>,
}

pub fn read_boxes(path: &Path) -> Result<Vec<Vec<BBox>>> {
    Ok(read_json::<BoxTrack>(path)?.frames)
}

pub fn write_boxes(path: &Path, frames: &[Vec<BBox>]) -> Result<()> {
    write_json(path, &BoxTrack { frames: frames.to_vec() })
}

// ---- features ----

pub fn encode_features(track: &FeatureTrack) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + (track.low().len() + track.high().len()) * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, track.modality.tag());
    push_u32(&mut out, track.frames() as u32);
    push_u32(&mut out, track.low_dim() as u32);
    push_u32(&mut out, track.windows() as u32);
    push_u32(&mut out, track.high_dim() as u32);
    push_u32(&mut out, track.hop() as u32);
    push_f32(&mut out, track.fps);
    track.low().iter().chain(track.high()).for_each(|&v| push_f32(&mut out, v));
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<FeatureTrack> {
    let mut r = Reader::new(path, bytes);
    r.magic(FEATURE_MAGIC)?;
    let tag = r.u32()?;
    let modality = Modality::from_tag(tag)
        .ok_or_else(|| Error::format(path, format!("unknown modality tag {tag}")))?;
    let frames = r.u32()? as usize;
    let low_dim = r.u32()? as usize;
    let windows = r.u32()? as usize;
    let high_dim = r.u32()? as usize;
    let hop = r.u32()? as usize;
    let fps = r.f32()? as f64;
    let low = r.f32s(frames * low_dim)?;
    let high = r.f32s(windows * high_dim)?;
    r.finish()?;
    FeatureTrack::new(modality, fps, low_dim, low, high_dim, high, hop)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_features(path: &Path) -> Result<FeatureTrack> {
    decode_features(path, &read_bytes(path)?)
}

pub fn write_features(path: &Path, track: &FeatureTrack) -> Result<()> {
    to_u32(path, track.frames(), "frame count")?;
    write_bytes(path, &encode_features(track))
}

// ---- flow ----

pub fn encode_flow(flow: &HomographyFlow) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + flow.offsets.len() * 8);
    push_u32(&mut out, flow.width);
    push_u32(&mut out, flow.height);
    for o in &flow.offsets {
        push_f32(&mut out, o[0]);
        push_f32(&mut out, o[1]);
    }
    out
}

pub fn write_flow(path: &Path, flow: &HomographyFlow) -> Result<()> {
    write_bytes(path, &encode_flow(flow))
}

/// Reads `(width, height, offsets)`.
pub fn read_flow(path: &Path) -> Result<(u32, u32, Vec<[f64; 2]>)> {
    let bytes = read_bytes(path)?;
    let mut r = Reader::new(path, &bytes);
    let w = r.u32()?;
    let h = r.u32()?;
    let values = r.f32s(w as usize * h as usize * 2)?;
    r.finish()?;
    Ok((w, h, values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
}

// ---- matches ----

pub fn parse_matches(path: &Path, text: &str) -> Result<Vec<PointMatch>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {e}", no + 1)))?;
        if vals.len() != 4 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, format!("line {}: expected 4 finite numbers", no + 1)));
        }
        out.push(PointMatch {
            src: [vals[0], vals[1]],
            dst: [vals[2], vals[3]],
        });
    }
    Ok(out)
}

pub fn read_matches(path: &Path) -> Result<Vec<PointMatch>> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    parse_matches(path, text)
}

pub fn write_matches(path: &Path, matches: &[PointMatch]) -> Result<()> {
    let mut out = String::new();
    for m in matches {
        out.push_str(&format!("{} {} {} {}\n", m.src[0], m.src[1], m.dst[0], m.dst[1]));
    }
    write_bytes(path, out.as_bytes())
}

// ---- poses ----

pub fn read_poses(path: &Path) -> Result<Vec<Pose2D>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<Pose2D>),
        One(Pose2D),
    }
    Ok(match read_json::<OneOrMany>(path)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(p) => vec![p],
    })
}

pub fn write_poses(path: &Path, poses: &[Pose2D]) -> Result<()> {
    write_json(path, poses)
}
