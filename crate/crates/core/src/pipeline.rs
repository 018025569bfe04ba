//! End-to-end run: build, prune, search, then plan transitions.
//!
//! The output is a [`TransitionManifest`]: retrieved 4-frame segments in
//! playback order, with an interpolation segment inserted (not overlapped)
//! after every step taken over a non-original edge. Each interpolation
//! segment carries linearly blended 2D poses and a background flow file.
//!
//! A run owns its output directory through a lock file for its duration.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::RetrievalEvalConfig;
use crate::features::FeatureTrack;
use crate::geometry::{
    background_flow, estimate_homography, linear_pose_blend, Pose2D, RansacConfig, DEFAULT_BLEND_FRAMES,
};
use crate::graph::doc::{GraphDocument, SourceRef, DEFAULT_AUDIO_SAMPLE_RATE};
use crate::graph::{build_graph, prune_graph, segment_nodes, EdgeKind, GestureGraph, GraphConfig, VideoSource, CLIP_FRAMES};
use crate::io;
use crate::mask::RleMask;
use crate::motion::POSITION;
use crate::retrieval::{check_compatible, search, MotionBank, RetrievedPath, SearchConfig};

pub const MANIFEST_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".gvgraph.lock";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub video_id: String,
    pub motion: PathBuf,
    pub masks: PathBuf,
    pub boxes: PathBuf,
    pub motion_features: PathBuf,
    /// Per-frame 2D poses. When absent, poses are an orthographic
    /// projection of the 3D joint positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses2d: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpConfig {
    pub blend_frames: usize,
    /// Frames of context taken on each side of a transition.
    pub context_frames: usize,
    pub ransac: RansacConfig,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            blend_frames: DEFAULT_BLEND_FRAMES,
            context_frames: CLIP_FRAMES,
            ransac: RansacConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub audio_features: PathBuf,
    pub audio_sample_rate: u32,
    pub prune: bool,
    /// Directory holding `<from>_<to>.txt` match files for transitions;
    /// transitions without one use the identity homography.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches_dir: Option<PathBuf>,
    pub sources: Vec<SourceConfig>,
    pub graph: GraphConfig,
    pub search: SearchConfig,
    pub interp: InterpConfig,
    pub eval: RetrievalEvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            audio_features: PathBuf::from("audio.feat"),
            audio_sample_rate: DEFAULT_AUDIO_SAMPLE_RATE,
            prune: true,
            matches_dir: None,
            sources: Vec::new(),
            graph: GraphConfig::default(),
            search: SearchConfig::default(),
            interp: InterpConfig::default(),
            eval: RetrievalEvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_bytes(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
        let mut cfg = Self::from_toml(text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        join(&mut self.audio_features);
        if let Some(m) = self.matches_dir.as_mut() {
            join(m);
        }
        for s in &mut self.sources {
            join(&mut s.motion);
            join(&mut s.masks);
            join(&mut s.boxes);
            join(&mut s.motion_features);
            if let Some(p) = s.poses2d.as_mut() {
                join(p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sources.is_empty() {
            return Err(Error::Config("at least one source is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.sources {
            if !seen.insert(&s.video_id) {
                return Err(Error::Config(format!("duplicate video id {:?}", s.video_id)));
            }
            for p in [&s.motion, &s.masks, &s.boxes, &s.motion_features]
                .into_iter()
                .chain(s.poses2d.as_ref())
            {
                if !p.is_file() {
                    return Err(Error::Config(format!("missing file {}", p.display())));
                }
            }
        }
        if !self.audio_features.is_file() {
            return Err(Error::Config(format!("missing file {}", self.audio_features.display())));
        }
        if self.audio_sample_rate == 0 {
            return Err(Error::Config("audio_sample_rate must be positive".into()));
        }
        if self.interp.blend_frames == 0 || self.interp.context_frames == 0 {
            return Err(Error::Config("blend_frames and context_frames must be positive".into()));
        }
        self.graph.validate()?;
        self.search.validate()?;
        self.interp.ransac.validate()?;
        self.eval.validate()
    }

    pub fn source_refs(&self) -> Vec<SourceRef> {
        self.sources
            .iter()
            .map(|s| SourceRef {
                video_id: s.video_id.clone(),
                motion: s.motion.clone(),
                masks: s.masks.clone(),
                boxes: s.boxes.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HomographySource {
    Identity,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Segment {
    Retrieved {
        timeline_start: usize,
        length: usize,
        node: usize,
        video: String,
        /// Half-open source frame range.
        frames: [usize; 2],
    },
    Interpolate {
        timeline_start: usize,
        length: usize,
        from_node: usize,
        to_node: usize,
        edge: EdgeKind,
        start_video: String,
        /// Context ending at the last frame of `from_node`, half-open.
        start_frames: [usize; 2],
        end_video: String,
        /// Context starting at the first frame of `to_node`, half-open.
        end_frames: [usize; 2],
        poses: Vec<Pose2D>,
        homography: [[f64; 3]; 3],
        homography_source: HomographySource,
        /// Flow file, relative to the manifest.
        flow: PathBuf,
    },
}

impl Segment {
    pub fn timeline(&self) -> (usize, usize) {
        match self {
            Segment::Retrieved {
                timeline_start, length, ..
            }
            | Segment::Interpolate {
                timeline_start, length, ..
            } => (*timeline_start, *length),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionManifest {
    pub version: u32,
    pub seed: u64,
    pub fps: f64,
    pub audio_frames: usize,
    pub total_frames: usize,
    pub total_score: f64,
    pub terminated_early: bool,
    pub node_ids: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl TransitionManifest {
    pub fn interpolation_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s, Segment::Interpolate { .. }))
            .count()
    }

    /// Segments start where the previous one ends and sum to `total_frames`.
    pub fn tiles_timeline(&self) -> bool {
        let mut at = 0;
        for s in &self.segments {
            let (start, len) = s.timeline();
            if start != at {
                return false;
            }
            at += len;
        }
        at == self.total_frames
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(format!(
                "output directory {} is in use (remove {} if no run is active)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        if let Err(e) = std::fs::remove_file(&self.path) {
            log::warn!("could not remove {}: {e}", self.path.display());
        }
    }
}

/// Orthographic view of joint positions: `u = 0.5 + 0.25 x`,
/// `v = 0.5 - 0.25 y`, clamped to the unit square.
pub fn project_positions(positions: impl Iterator<Item = [f64; 3]>) -> Pose2D {
    Pose2D::certain(
        positions
            .map(|p| [(0.5 + 0.25 * p[0]).clamp(0.0, 1.0), (0.5 - 0.25 * p[1]).clamp(0.0, 1.0)])
            .collect(),
    )
}

struct LoadedSource {
    video: VideoSource,
    poses: Vec<Pose2D>,
}

fn load_source(cfg: &SourceConfig) -> Result<LoadedSource> {
    let r = SourceRef {
        video_id: cfg.video_id.clone(),
        motion: cfg.motion.clone(),
        masks: cfg.masks.clone(),
        boxes: cfg.boxes.clone(),
    };
    let video = r.load()?;
    let frames = video.motion.frames();
    let poses = match &cfg.poses2d {
        Some(p) => {
            let poses = io::read_poses(p)?;
            if poses.len() < frames {
                return Err(Error::Validation(format!(
                    "{}: {} poses for {frames} frames",
                    p.display(),
                    poses.len()
                )));
            }
            for pose in &poses {
                pose.validate()?;
            }
            poses
        }
        None => (0..frames)
            .map(|t| {
                project_positions((0..video.motion.joints()).map(|j| {
                    let e = video.motion.entry(t, j);
                    [e[POSITION], e[POSITION + 1], e[POSITION + 2]]
                }))
            })
            .collect(),
    };
    Ok(LoadedSource { video, poses })
}

fn union_mask(a: &RleMask, b: &RleMask) -> Result<RleMask> {
    let bits: Vec<bool> = a.to_bitmap().iter().zip(b.to_bitmap()).map(|(x, y)| *x || y).collect();
    RleMask::from_bitmap(a.width, a.height, &bits)
}

fn to_rows(h: &Matrix3<f64>) -> [[f64; 3]; 3] {
    let r = |i: usize| [h[(i, 0)], h[(i, 1)], h[(i, 2)]];
    [r(0), r(1), r(2)]
}

#[derive(Debug)]
pub struct RunOutput {
    pub manifest: TransitionManifest,
    pub graph: GestureGraph,
    pub path: RetrievedPath,
    pub manifest_path: PathBuf,
}

/// Runs every stage. Errors are tagged with the stage that raised them.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutput> {
    config.validate()?;
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let out = &config.output_dir;

    // load and check dimensions before anything expensive
    let audio = io::read_features(&config.audio_features).map_err(|e| e.in_stage("load"))?;
    let mut bank = MotionBank::new();
    let mut sources = BTreeMap::new();
    for s in &config.sources {
        let track = io::read_features(&s.motion_features).map_err(|e| e.in_stage("load"))?;
        check_compatible(&audio, &track).map_err(|e| e.in_stage("load"))?;
        let loaded = load_source(s).map_err(|e| e.in_stage("load"))?;
        if track.frames() < loaded.video.motion.frames() {
            return Err(Error::Shape(format!(
                "video {:?}: {} feature frames for {} motion frames",
                s.video_id,
                track.frames(),
                loaded.video.motion.frames()
            ))
            .in_stage("load"));
        }
        bank.insert(s.video_id.clone(), track);
        sources.insert(s.video_id.clone(), loaded);
    }

    let mut nodes = Vec::new();
    for s in &config.sources {
        let video = &sources[&s.video_id].video;
        nodes.extend(segment_nodes(video, nodes.len(), config.audio_sample_rate).map_err(|e| e.in_stage("build"))?);
    }
    let mut graph = build_graph(nodes, config.graph).map_err(|e| e.in_stage("build"))?;
    if config.prune {
        graph = prune_graph(&graph).map_err(|e| e.in_stage("prune"))?;
    }
    // graph.json is read back relative to its own directory, so pin sources
    let doc_sources = config
        .source_refs()
        .into_iter()
        .map(|s| -> Result<SourceRef> {
            let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
            Ok(SourceRef {
                motion: abs(&s.motion)?,
                masks: abs(&s.masks)?,
                boxes: abs(&s.boxes)?,
                video_id: s.video_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = GraphDocument::from_graph(&graph, doc_sources, config.audio_sample_rate);
    io::write_json(&out.join("graph.json"), &doc)?;

    let path = search(&graph, &audio, &bank, &config.search).map_err(|e| e.in_stage("search"))?;
    io::write_json(&out.join("path.json"), &path)?;

    let manifest = plan_transitions(config, &graph, &path, &audio, &sources).map_err(|e| e.in_stage("interp"))?;
    let manifest_path = out.join("manifest.json");
    io::write_json(&manifest_path, &manifest)?;
    Ok(RunOutput {
        manifest,
        graph,
        path,
        manifest_path,
    })
}

fn plan_transitions(
    config: &PipelineConfig,
    graph: &GestureGraph,
    path: &RetrievedPath,
    audio: &FeatureTrack,
    sources: &BTreeMap<String, LoadedSource>,
) -> Result<TransitionManifest> {
    let k = config.interp.context_frames;
    let n_blend = config.interp.blend_frames;
    let (width, height) = graph.image_dims;
    let mut segments = Vec::new();
    let mut at = 0;
    for (step, &id) in path.node_ids.iter().enumerate() {
        let node = &graph.nodes[id];
        segments.push(Segment::Retrieved {
            timeline_start: at,
            length: CLIP_FRAMES,
            node: id,
            video: node.source_video.clone(),
            frames: [node.frame_start, node.frame_start + CLIP_FRAMES],
        });
        at += CLIP_FRAMES;

        let Some(&kind) = path.transition_kinds.get(step) else {
            continue;
        };
        if !kind.needs_interpolation() {
            continue;
        }
        let next = &graph.nodes[path.node_ids[step + 1]];
        let from = &sources[&node.source_video];
        let to = &sources[&next.source_video];
        let i = node.frame_start + CLIP_FRAMES - 1;
        let j = next.frame_start;
        let poses = linear_pose_blend(&from.poses[i], &to.poses[j], n_blend)?;

        let match_file = config
            .matches_dir
            .as_ref()
            .map(|d| d.join(format!("{}_{}.txt", node.id, next.id)))
            .filter(|p| p.is_file());
        let (h, h_source) = match match_file {
            Some(p) => {
                let matches = io::read_matches(&p)?;
                let ransac = RansacConfig {
                    seed: config.seed,
                    ..config.interp.ransac
                };
                (estimate_homography(&matches, &ransac)?.h, HomographySource::Estimated)
            }
            None => (Matrix3::identity(), HomographySource::Identity),
        };
        let fg = union_mask(&node.body_masks[CLIP_FRAMES - 1], &next.body_masks[0])?;
        let flow = background_flow(&h, width, height, Some(&fg))?;
        let flow_rel = PathBuf::from("flows").join(format!("{step:04}_{}_{}.flow", node.id, next.id));
        io::write_flow(&config.output_dir.join(&flow_rel), &flow)?;

        let end_len = to.video.motion.frames();
        segments.push(Segment::Interpolate {
            timeline_start: at,
            length: n_blend,
            from_node: node.id,
            to_node: next.id,
            edge: kind,
            start_video: node.source_video.clone(),
            start_frames: [(i + 1).saturating_sub(k), i + 1],
            end_video: next.source_video.clone(),
            end_frames: [j, (j + k).min(end_len)],
            poses,
            homography: to_rows(&h),
            homography_source: h_source,
            flow: flow_rel,
        });
        at += n_blend;
    }
    Ok(TransitionManifest {
        version: MANIFEST_VERSION,
        seed: config.seed,
        fps: audio.fps,
        audio_frames: audio.frames(),
        total_frames: at,
        total_score: path.total_score,
        terminated_early: path.terminated_early,
        node_ids: path.node_ids.clone(),
        segments,
    })
}
