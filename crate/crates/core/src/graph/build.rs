//! Node segmentation, clip dissimilarities and initial edge admission.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{original_successor, Edge, EdgeKind, GestureGraph, MotionClipNode, CLIP_FRAMES};
use crate::error::{Error, Result};
use crate::mask::{region_iou, BBox, RleMask};
use crate::motion::{Motion15D, FEATURE_DIM, LINEAR_VELOCITY, POSITION};

/// How synthetic transitions are admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRule {
    /// `i -> j` iff `j` could stand in for the original continuation of `i`:
    /// `d(succ(i), j) <= tau_i`. When `i` ends its video, `i` must instead
    /// stand in for the original predecessor of `j`: `d(i, pred(j)) <= tau_i`.
    /// When neither neighbour exists the pair is compared directly (no self
    /// loop).
    #[default]
    Substitute,
    /// `i -> j` iff `d(i, j) <= tau_i`, self loops included.
    Literal,
}

impl std::str::FromStr for EdgeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "substitute" => Ok(EdgeRule::Substitute),
            "literal" => Ok(EdgeRule::Literal),
            other => Err(Error::Validation(format!(
                "unknown edge rule {other:?} (expected substitute|literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub edge_rule: EdgeRule,
    pub w_body: f64,
    pub w_hand: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            edge_rule: EdgeRule::Substitute,
            w_body: 0.5,
            w_hand: 0.5,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.w_body) || !ok(self.w_hand) {
            return Err(Error::Validation(format!(
                "IoU weights must be finite and non-negative (w_body={}, w_hand={})",
                self.w_body, self.w_hand
            )));
        }
        Ok(())
    }
}

/// One reference video: its motion features plus per-frame masks and boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSource {
    pub video_id: String,
    pub fps: f64,
    pub motion: Motion15D,
    pub body_masks: Vec<RleMask>,
    pub hand_boxes: Vec<Vec<BBox>>,
}

/// Cuts a video into `floor(T / 4)` nodes with ids starting at `first_id`;
/// trailing frames are dropped.
pub fn segment_nodes(
    source: &VideoSource,
    first_id: usize,
    audio_sample_rate: u32,
) -> Result<Vec<MotionClipNode>> {
    let frames = source.motion.frames();
    if frames < 2 * CLIP_FRAMES {
        return Err(Error::Validation(format!(
            "source too short: video {:?} has {frames} frames, need at least {}",
            source.video_id,
            2 * CLIP_FRAMES
        )));
    }
    if source.body_masks.len() != frames || source.hand_boxes.len() != frames {
        return Err(Error::Shape(format!(
            "video {:?}: {frames} motion frames, {} masks, {} box lists",
            source.video_id,
            source.body_masks.len(),
            source.hand_boxes.len()
        )));
    }
    let (w, h) = (source.body_masks[0].width, source.body_masks[0].height);
    for (t, (m, boxes)) in source.body_masks.iter().zip(&source.hand_boxes).enumerate() {
        if (m.width, m.height) != (w, h) {
            return Err(Error::Shape(format!("frame {t}: mask dimensions differ")));
        }
        m.validate()?;
        for b in boxes {
            b.validate(w, h)?;
        }
    }
    let samples_at = |frame: usize| (frame as f64 / source.fps * audio_sample_rate as f64).round() as u64;
    (0..frames / CLIP_FRAMES)
        .map(|k| {
            let start = k * CLIP_FRAMES;
            Ok(MotionClipNode {
                id: first_id + k,
                source_video: source.video_id.clone(),
                frame_start: start,
                motion: source.motion.slice_frames(start, CLIP_FRAMES)?,
                body_masks: source.body_masks[start..start + CLIP_FRAMES].to_vec(),
                hand_boxes: source.hand_boxes[start..start + CLIP_FRAMES].to_vec(),
                audio_span: (samples_at(start), samples_at(start + CLIP_FRAMES)),
            })
        })
        .collect()
}

fn norm3(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean over aligned frames and joints of position distance plus velocity
/// distance.
pub fn pose_distance(a: &MotionClipNode, b: &MotionClipNode) -> Result<f64> {
    let (ma, mb) = (&a.motion, &b.motion);
    if ma.joints() != mb.joints() || ma.frames() != mb.frames() {
        return Err(Error::Shape(format!(
            "nodes {} and {} have {}x{} vs {}x{} frames x joints",
            a.id,
            b.id,
            ma.frames(),
            ma.joints(),
            mb.frames(),
            mb.joints()
        )));
    }
    let sum: f64 = ma
        .data()
        .chunks_exact(FEATURE_DIM)
        .zip(mb.data().chunks_exact(FEATURE_DIM))
        .map(|(x, y)| {
            norm3(&x[POSITION..POSITION + 3], &y[POSITION..POSITION + 3])
                + norm3(
                    &x[LINEAR_VELOCITY..LINEAR_VELOCITY + 3],
                    &y[LINEAR_VELOCITY..LINEAR_VELOCITY + 3],
                )
        })
        .sum();
    Ok(sum / (ma.frames() * ma.joints()) as f64)
}

/// Mean over aligned frames of
/// `w_body * (1 - IoU(body)) + w_hand * (1 - IoU(hand union))`.
/// A frame where both regions are empty contributes 0 for that term.
pub fn iou_distance(a: &MotionClipNode, b: &MotionClipNode, config: &GraphConfig) -> Result<f64> {
    if a.body_masks.len() != b.body_masks.len() || a.hand_boxes.len() != b.hand_boxes.len() {
        return Err(Error::Shape(format!(
            "nodes {} and {} have different frame counts",
            a.id, b.id
        )));
    }
    let mut total = 0.0;
    for t in 0..a.body_masks.len() {
        let body = a.body_masks[t].iou(&b.body_masks[t])?.map_or(0.0, |v| 1.0 - v);
        let hand = region_iou(&a.hand_boxes[t], &b.hand_boxes[t]).map_or(0.0, |v| 1.0 - v);
        total += config.w_body * body + config.w_hand * hand;
    }
    Ok(total / a.body_masks.len() as f64)
}

/// `D_pose + D_iou`.
pub fn node_distance(a: &MotionClipNode, b: &MotionClipNode, config: &GraphConfig) -> Result<f64> {
    Ok(pose_distance(a, b)? + iou_distance(a, b, config)?)
}

/// `(d(i, i-1) + d(i, i) + d(i, i+1)) / 3` with `d(i, i) = 0`. Missing
/// neighbours are dropped from both the sum and the divisor.
pub fn adaptive_threshold(prev: Option<f64>, next: Option<f64>) -> f64 {
    let terms = [prev, Some(0.0), next];
    let (sum, count) = terms
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    sum / count as f64
}

/// Symmetric pairwise distance matrix, row-major.
pub fn distance_matrix(nodes: &[MotionClipNode], config: &GraphConfig) -> Result<Vec<f64>> {
    let n = nodes.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| node_distance(&nodes[i], &nodes[j], config))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut d = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (k, v) in row.into_iter().enumerate() {
            let j = i + 1 + k;
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

fn validate_nodes(nodes: &[MotionClipNode]) -> Result<(u32, u32)> {
    let first = nodes
        .first()
        .ok_or_else(|| Error::Validation("cannot build a graph from zero nodes".into()))?;
    let dims = first
        .body_masks
        .first()
        .map(|m| (m.width, m.height))
        .ok_or_else(|| Error::Validation(format!("node {} has no masks", first.id)))?;
    for (i, node) in nodes.iter().enumerate() {
        if node.id != i {
            return Err(Error::Validation(format!(
                "node ids must be dense and ordered: position {i} holds id {}",
                node.id
            )));
        }
        if node.motion.frames() != CLIP_FRAMES
            || node.body_masks.len() != CLIP_FRAMES
            || node.hand_boxes.len() != CLIP_FRAMES
        {
            return Err(Error::Shape(format!("node {i} is not a {CLIP_FRAMES}-frame clip")));
        }
        if node.body_masks.iter().any(|m| (m.width, m.height) != dims) {
            return Err(Error::Shape(format!(
                "node {i} masks do not match image dimensions {}x{}",
                dims.0, dims.1
            )));
        }
    }
    Ok(dims)
}

/// Builds the initial graph: every original-successor edge plus the
/// synthetic edges admitted by `config.edge_rule` under per-node adaptive
/// thresholds.
///
/// Original edges record `d(i, succ(i))`; synthetic edges record the
/// distance that was compared against the threshold.
pub fn build_graph(nodes: Vec<MotionClipNode>, config: GraphConfig) -> Result<GestureGraph> {
    config.validate()?;
    let image_dims = validate_nodes(&nodes)?;
    let n = nodes.len();
    let d = distance_matrix(&nodes, &config)?;
    let dist = |a: usize, b: usize| d[a * n + b];
    let succ: Vec<Option<usize>> = (0..n).map(|i| original_successor(&nodes, i)).collect();
    let mut pred = vec![None; n];
    for (i, s) in succ.iter().enumerate() {
        if let Some(s) = *s {
            pred[s] = Some(i);
        }
    }

    let thresholds: Vec<f64> = (0..n)
        .map(|i| adaptive_threshold(pred[i].map(|p| dist(i, p)), succ[i].map(|s| dist(i, s))))
        .collect();

    let synthetic: Vec<Vec<Edge>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let tau = thresholds[i];
            (0..n)
                .filter(|&j| Some(j) != succ[i])
                .filter_map(|j| {
                    let admitted = match config.edge_rule {
                        EdgeRule::Literal => Some(dist(i, j)),
                        EdgeRule::Substitute => match (succ[i], pred[j]) {
                            (Some(s), _) => Some(dist(s, j)),
                            (None, Some(p)) => Some(dist(i, p)),
                            (None, None) => (i != j).then(|| dist(i, j)),
                        },
                    }?;
                    (admitted <= tau).then_some(Edge {
                        src: i,
                        dst: j,
                        distance: admitted,
                        kind: EdgeKind::Synthetic,
                    })
                })
                .collect()
        })
        .collect();

    let mut edges = Vec::new();
    for (i, row) in synthetic.into_iter().enumerate() {
        if let Some(s) = succ[i] {
            edges.push(Edge {
                src: i,
                dst: s,
                distance: dist(i, s),
                kind: EdgeKind::Original,
            });
        }
        edges.extend(row);
    }
    edges.sort_by_key(|e| (e.src, e.dst));

    Ok(GestureGraph {
        nodes,
        edges,
        image_dims,
        thresholds,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Motion15D;

    pub(crate) fn clip(id: usize, video: &str, start: usize, pos: [f64; 3]) -> MotionClipNode {
        let mut data = Vec::new();
        for _ in 0..CLIP_FRAMES {
            let mut e = [0.0; FEATURE_DIM];
            e[..3].copy_from_slice(&pos);
            e[6] = 1.0;
            e[10] = 1.0;
            data.extend_from_slice(&e);
        }
        MotionClipNode {
            id,
            source_video: video.into(),
            frame_start: start,
            motion: Motion15D::from_raw(CLIP_FRAMES, 1, data).unwrap(),
            body_masks: vec![RleMask::empty(8, 8); CLIP_FRAMES],
            hand_boxes: vec![Vec::new(); CLIP_FRAMES],
            audio_span: (0, 0),
        }
    }

    fn source(frames: usize) -> VideoSource {
        VideoSource {
            video_id: "v".into(),
            fps: 30.0,
            motion: Motion15D::from_raw(frames, 1, vec![0.0; frames * FEATURE_DIM]).unwrap(),
            body_masks: vec![RleMask::empty(4, 4); frames],
            hand_boxes: vec![Vec::new(); frames],
        }
    }

    #[test]
    fn segmentation_counts() {
        let nodes = segment_nodes(&source(16), 0, 16_000).unwrap();
        let ranges: Vec<_> = nodes.iter().map(|n| n.frame_range()).collect();
        assert_eq!(ranges, vec![0..4, 4..8, 8..12, 12..16]);
        assert_eq!(nodes[1].audio_span, (2133, 4267));
        let nodes = segment_nodes(&source(18), 10, 16_000).unwrap();
        assert_eq!(nodes.len(), 4);
        assert_eq!(nodes[3].id, 13);
        assert_eq!(nodes[3].frame_range(), 12..16);
    }

    #[test]
    fn short_source_rejected() {
        let err = segment_nodes(&source(7), 0, 16_000).unwrap_err();
        assert!(err.to_string().contains("source too short"));
    }

    #[test]
    fn threshold_formula() {
        assert!((adaptive_threshold(Some(0.3), Some(0.6)) - 0.3).abs() < 1e-15);
        assert!((adaptive_threshold(None, Some(0.4)) - 0.2).abs() < 1e-15);
        assert_eq!(adaptive_threshold(None, None), 0.0);
        assert_eq!(adaptive_threshold(Some(0.0), Some(0.0)), 0.0);
    }

    #[test]
    fn shifted_pose_distance() {
        let a = clip(0, "v", 0, [0.0, 0.0, 0.0]);
        let b = clip(1, "v", 4, [1.0, 0.0, 0.0]);
        assert_eq!(pose_distance(&a, &a).unwrap(), 0.0);
        assert!((pose_distance(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_clips_give_complete_digraph() {
        let nodes: Vec<_> = (0..5).map(|i| clip(i, "v", 4 * i, [0.0; 3])).collect();
        let g = build_graph(nodes, GraphConfig::default()).unwrap();
        assert_eq!(g.edges.len(), 25);
        for i in 0..5 {
            for j in 0..5 {
                assert!(g.has_edge(i, j), "{i}->{j}");
            }
        }
    }

    #[test]
    fn far_clips_keep_only_the_chain() {
        let nodes: Vec<_> = (0..5)
            .map(|i| clip(i, "v", 4 * i, [(i * i) as f64 * 10.0, 0.0, 0.0]))
            .collect();
        let g = build_graph(nodes, GraphConfig::default()).unwrap();
        let pairs: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst, e.kind)).collect();
        assert_eq!(
            pairs,
            (0..4).map(|i| (i, i + 1, EdgeKind::Original)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_graph_is_an_error() {
        assert!(build_graph(Vec::new(), GraphConfig::default()).is_err());
    }

    #[test]
    fn non_dense_ids_rejected() {
        let nodes = vec![clip(0, "v", 0, [0.0; 3]), clip(5, "v", 4, [0.0; 3])];
        assert!(build_graph(nodes, GraphConfig::default()).is_err());
    }
}
