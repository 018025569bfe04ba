//! JSON form of a [`GestureGraph`].
//!
//! The document stores node metadata and edges only. Node payloads (motion
//! features, masks, boxes) are reloaded from the source containers it
//! references; relative source paths resolve against the document's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{segment_nodes, Edge, GestureGraph, GraphConfig, MotionClipNode, VideoSource, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::io;
use crate::motion::build_15d;

pub const GRAPH_DOC_VERSION: u32 = 1;
pub const DEFAULT_AUDIO_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub video_id: String,
    pub motion: PathBuf,
    pub masks: PathBuf,
    pub boxes: PathBuf,
}

impl SourceRef {
    fn resolved(&self, base: &Path) -> SourceRef {
        let join = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        SourceRef {
            video_id: self.video_id.clone(),
            motion: join(&self.motion),
            masks: join(&self.masks),
            boxes: join(&self.boxes),
        }
    }

    pub fn load(&self) -> Result<VideoSource> {
        let seq = io::read_motion(&self.motion)?;
        let motion = build_15d(&seq)?;
        let (_, _, body_masks) = io::read_masks(&self.masks)?;
        let hand_boxes = io::read_boxes(&self.boxes)?;
        Ok(VideoSource {
            video_id: self.video_id.clone(),
            fps: seq.fps(),
            motion,
            body_masks,
            hand_boxes,
        })
    }
}

/// Loads and segments every source, assigning dense ids in source order.
pub fn load_nodes(sources: &[SourceRef], audio_sample_rate: u32) -> Result<Vec<MotionClipNode>> {
    let mut nodes = Vec::new();
    for s in sources {
        let video = s.load()?;
        nodes.extend(segment_nodes(&video, nodes.len(), audio_sample_rate)?);
    }
    Ok(nodes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub video: String,
    pub frame_start: usize,
    pub frame_end: usize,
    pub audio_span: [u64; 2],
    /// Byte offset of the node's first frame in the binary motion container.
    pub motion_offset: u64,
    /// Index of the node's first frame in the mask and box tracks.
    pub mask_frame: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub version: u32,
    pub image_dims: [u32; 2],
    pub config: GraphConfig,
    pub audio_sample_rate: u32,
    pub sources: Vec<SourceRef>,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<Edge>,
}

impl GraphDocument {
    pub fn from_graph(graph: &GestureGraph, sources: Vec<SourceRef>, audio_sample_rate: u32) -> Self {
        let nodes = graph
            .nodes
            .iter()
            .zip(&graph.thresholds)
            .map(|(n, &threshold)| NodeRecord {
                id: n.id,
                video: n.source_video.clone(),
                frame_start: n.frame_start,
                frame_end: n.frame_start + CLIP_FRAMES,
                audio_span: [n.audio_span.0, n.audio_span.1],
                motion_offset: io::motion_frame_offset(n.motion.joints(), n.frame_start),
                mask_frame: n.frame_start,
                threshold,
            })
            .collect();
        GraphDocument {
            version: GRAPH_DOC_VERSION,
            image_dims: [graph.image_dims.0, graph.image_dims.1],
            config: graph.config,
            audio_sample_rate,
            sources,
            nodes,
            edges: graph.edges.clone(),
        }
    }

    /// Rehydrates the graph, checking that the sources still segment into
    /// the recorded nodes.
    pub fn into_graph(self, base_dir: &Path) -> Result<GestureGraph> {
        if self.version != GRAPH_DOC_VERSION {
            return Err(Error::Validation(format!("unsupported graph version {}", self.version)));
        }
        let sources: Vec<SourceRef> = self.sources.iter().map(|s| s.resolved(base_dir)).collect();
        let nodes = load_nodes(&sources, self.audio_sample_rate)?;
        if nodes.len() != self.nodes.len() {
            return Err(Error::Validation(format!(
                "sources yield {} nodes, graph lists {}",
                nodes.len(),
                self.nodes.len()
            )));
        }
        for (n, rec) in nodes.iter().zip(&self.nodes) {
            if n.id != rec.id || n.source_video != rec.video || n.frame_start != rec.frame_start {
                return Err(Error::Validation(format!(
                    "node {} does not match its source ({} @ {})",
                    rec.id, rec.video, rec.frame_start
                )));
            }
        }
        let n = nodes.len();
        if let Some(e) = self
            .edges
            .iter()
            .find(|e| e.src >= n || e.dst >= n || !e.distance.is_finite() || e.distance < 0.0)
        {
            return Err(Error::Validation(format!("invalid edge {e:?}")));
        }
        if let Some(n) = nodes.first() {
            let dims = (n.body_masks[0].width, n.body_masks[0].height);
            if dims != (self.image_dims[0], self.image_dims[1]) {
                return Err(Error::Validation("image dimensions do not match sources".into()));
            }
        }
        Ok(GestureGraph {
            nodes,
            edges: self.edges,
            image_dims: (self.image_dims[0], self.image_dims[1]),
            thresholds: self.nodes.iter().map(|r| r.threshold).collect(),
            config: self.config,
        })
    }
}

pub fn read_graph(path: &Path) -> Result<GestureGraph> {
    let doc: GraphDocument = io::read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    doc.into_graph(base)
}

pub fn write_graph(path: &Path, doc: &GraphDocument) -> Result<()> {
    io::write_json(path, doc)
}
