//! Gesture video motion graph.
//!
//! Nodes are 4-frame, non-overlapping clips cut from reference videos. Edges
//! are transitions that can be played back to back: `original` edges follow
//! the source video, `synthetic` edges are admitted by the distance rule in
//! [`build`], and `bridge` edges are added by [`prune`] to make the graph
//! strongly connected.

pub mod build;
pub mod doc;
pub mod prune;
pub mod scc;

use serde::{Deserialize, Serialize};

use crate::mask::{BBox, RleMask};
use crate::motion::Motion15D;

pub use build::{
    adaptive_threshold, build_graph, iou_distance, node_distance, pose_distance, segment_nodes,
    EdgeRule, GraphConfig, VideoSource,
};
pub use prune::{add_bridge_edges, bridge_components, dead_end_probability, prune_graph, Bridge, EdgeListGraph};
pub use scc::{scc_decompose, scc_from_adjacency, SccDecomposition};

/// Frames per node.
pub const CLIP_FRAMES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Original,
    Synthetic,
    Bridge,
}

impl EdgeKind {
    pub fn needs_interpolation(self) -> bool {
        self != EdgeKind::Original
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub distance: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClipNode {
    pub id: usize,
    pub source_video: String,
    /// First frame of `[frame_start, frame_start + 4)` in the source video.
    pub frame_start: usize,
    pub motion: Motion15D,
    pub body_masks: Vec<RleMask>,
    pub hand_boxes: Vec<Vec<BBox>>,
    /// `[start, end)` in audio samples of the source recording.
    pub audio_span: (u64, u64),
}

impl MotionClipNode {
    pub fn frame_range(&self) -> std::ops::Range<usize> {
        self.frame_start..self.frame_start + CLIP_FRAMES
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureGraph {
    pub nodes: Vec<MotionClipNode>,
    pub edges: Vec<Edge>,
    pub image_dims: (u32, u32),
    pub thresholds: Vec<f64>,
    pub config: GraphConfig,
}

impl GestureGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Original-video continuation of `i`, if any.
    pub fn successor(&self, i: usize) -> Option<usize> {
        original_successor(&self.nodes, i)
    }

    pub fn predecessor(&self, i: usize) -> Option<usize> {
        i.checked_sub(1)
            .filter(|&p| original_successor(&self.nodes, p) == Some(i))
    }

    /// Sorted, de-duplicated successor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        adjacency(self.nodes.len(), &self.edges)
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edges.iter().any(|e| e.src == src && e.dst == dst)
    }

    pub fn node_distance(&self, a: usize, b: usize) -> crate::Result<f64> {
        node_distance(&self.nodes[a], &self.nodes[b], &self.config)
    }
}

pub(crate) fn original_successor(nodes: &[MotionClipNode], i: usize) -> Option<usize> {
    let (a, b) = (nodes.get(i)?, nodes.get(i + 1)?);
    (a.source_video == b.source_video && b.frame_start == a.frame_start + CLIP_FRAMES)
        .then_some(i + 1)
}

pub fn adjacency(n: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.src].push(e.dst);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}
