//! Feature-based path retrieval.
//!
//! Each node is scored against step `t` of the target audio (frames
//! `[4t, 4t + 4)`) by combining per-frame low-level cosine similarity with
//! the high-level window cosine. The retrieved path maximizes
//! `sum_t score(n_t, t) - lambda * [edge into n_t is not original]` over all
//! walks of length `L = floor(audio frames / 4)`.
//!
//! Among equally scoring paths the one with the lexicographically smallest
//! step keys wins, where the first key is the start node id and later keys
//! are `(edge kind rank, node id)` with original < synthetic < bridge. With
//! `lambda = 0` this keeps playback on the source video whenever a jump
//! would not improve the score.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{cosine, FeatureTrack};
use crate::graph::{EdgeKind, GestureGraph, MotionClipNode, CLIP_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub w_low: f64,
    pub w_high: f64,
    /// Penalty per non-original transition.
    pub lambda: f64,
    /// 0 selects the exact DP search; otherwise the beam width.
    pub beam: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            w_low: 1.0,
            w_high: 1.0,
            lambda: 0.0,
            beam: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if ![self.w_low, self.w_high, self.lambda].iter().all(|v| v.is_finite()) || self.lambda < 0.0 {
            return Err(Error::Validation(format!(
                "search weights must be finite and lambda non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Motion feature tracks keyed by source video id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotionBank {
    tracks: BTreeMap<String, FeatureTrack>,
}

impl MotionBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, video_id: impl Into<String>, track: FeatureTrack) {
        self.tracks.insert(video_id.into(), track);
    }

    pub fn get(&self, video_id: &str) -> Option<&FeatureTrack> {
        self.tracks.get(video_id)
    }

    pub fn track_for(&self, node: &MotionClipNode) -> Result<&FeatureTrack> {
        self.get(&node.source_video).ok_or_else(|| {
            Error::Validation(format!("no motion features for video {:?}", node.source_video))
        })
    }

    pub fn scaled(&self, factor: f64) -> MotionBank {
        MotionBank {
            tracks: self.tracks.iter().map(|(k, v)| (k.clone(), v.scaled(factor))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPath {
    pub node_ids: Vec<usize>,
    pub per_step_scores: Vec<f64>,
    /// Kind of the edge entering step `t + 1`.
    pub transition_kinds: Vec<EdgeKind>,
    pub total_score: f64,
    /// Set when no walk of the requested length exists.
    pub terminated_early: bool,
}

/// Number of 4-frame steps covered by an audio track.
pub fn path_length(audio: &FeatureTrack) -> usize {
    audio.frames() / CLIP_FRAMES
}

pub fn check_compatible(audio: &FeatureTrack, motion: &FeatureTrack) -> Result<()> {
    if audio.low_dim() != motion.low_dim() || audio.high_dim() != motion.high_dim() {
        return Err(Error::Shape(format!(
            "audio embeddings are {}/{} wide (low/high), motion {}/{}",
            audio.low_dim(),
            audio.high_dim(),
            motion.low_dim(),
            motion.high_dim()
        )));
    }
    Ok(())
}

/// Similarity of `node` to audio step `step`.
pub fn node_score(
    node: &MotionClipNode,
    audio: &FeatureTrack,
    motion: &FeatureTrack,
    step: usize,
    config: &SearchConfig,
) -> Result<f64> {
    check_compatible(audio, motion)?;
    let a0 = step * CLIP_FRAMES;
    if a0 + CLIP_FRAMES > audio.frames() {
        return Err(Error::Shape(format!(
            "audio has {} frames, step {step} needs [{a0}, {})",
            audio.frames(),
            a0 + CLIP_FRAMES
        )));
    }
    let m0 = node.frame_start;
    if m0 + CLIP_FRAMES > motion.frames() {
        return Err(Error::Shape(format!(
            "motion features for {:?} have {} frames, node {} needs [{m0}, {})",
            node.source_video,
            motion.frames(),
            node.id,
            m0 + CLIP_FRAMES
        )));
    }
    let low: f64 = (0..CLIP_FRAMES)
        .map(|f| cosine(audio.low_row(a0 + f), motion.low_row(m0 + f)))
        .sum::<f64>()
        / CLIP_FRAMES as f64;
    let high = cosine(
        audio.high_row(audio.window_for_frame(a0)),
        motion.high_row(motion.window_for_frame(m0)),
    );
    Ok(config.w_low * low + config.w_high * high)
}

/// Row-major `L x N` score table.
pub fn score_table(
    graph: &GestureGraph,
    audio: &FeatureTrack,
    bank: &MotionBank,
    config: &SearchConfig,
) -> Result<Vec<f64>> {
    let steps = path_length(audio);
    if steps == 0 {
        return Err(Error::Validation(format!(
            "audio track has {} frames, need at least {CLIP_FRAMES}",
            audio.frames()
        )));
    }
    for node in &graph.nodes {
        check_compatible(audio, bank.track_for(node)?)?;
    }
    let rows: Vec<Vec<f64>> = (0..steps)
        .into_par_iter()
        .map(|t| {
            graph
                .nodes
                .iter()
                .map(|node| node_score(node, audio, bank.track_for(node)?, t, config))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

fn kind_rank(kind: EdgeKind) -> u8 {
    match kind {
        EdgeKind::Original => 0,
        EdgeKind::Synthetic => 1,
        EdgeKind::Bridge => 2,
    }
}

/// Outgoing transitions per node, one per destination (best kind kept),
/// sorted by `(kind rank, destination)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    succ: Vec<Vec<(usize, EdgeKind)>>,
}

impl Transitions {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize, EdgeKind)>) -> Result<Self> {
        let mut best: Vec<BTreeMap<usize, EdgeKind>> = vec![BTreeMap::new(); n];
        for (src, dst, kind) in edges {
            if src >= n || dst >= n {
                return Err(Error::Validation(format!("edge {src}->{dst} outside {n} nodes")));
            }
            let slot = best[src].entry(dst).or_insert(kind);
            if kind_rank(kind) < kind_rank(*slot) {
                *slot = kind;
            }
        }
        let succ = best
            .into_iter()
            .map(|m| {
                let mut v: Vec<_> = m.into_iter().collect();
                v.sort_by_key(|&(d, k)| (kind_rank(k), d));
                v
            })
            .collect();
        Ok(Transitions { succ })
    }

    pub fn from_graph(graph: &GestureGraph) -> Result<Self> {
        Self::new(graph.node_count(), graph.edges.iter().map(|e| (e.src, e.dst, e.kind)))
    }

    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    pub fn successors(&self, node: usize) -> &[(usize, EdgeKind)] {
        &self.succ[node]
    }

    /// Longest walk (in nodes) starting anywhere, capped at `cap`.
    fn longest_walk(&self, cap: usize) -> usize {
        let n = self.succ.len();
        let mut reach = vec![1usize; n];
        for _ in 1..cap {
            let next: Vec<usize> = (0..n)
                .map(|v| self.succ[v].iter().map(|&(m, _)| reach[m] + 1).max().unwrap_or(1).min(cap))
                .collect();
            if next == reach {
                break;
            }
            reach = next;
        }
        reach.into_iter().max().unwrap_or(0)
    }
}

fn penalty(kind: EdgeKind, lambda: f64) -> f64 {
    if kind == EdgeKind::Original {
        0.0
    } else {
        lambda
    }
}

fn check_table(scores: &[f64], steps: usize, trans: &Transitions) -> Result<()> {
    if trans.is_empty() {
        return Err(Error::Validation("graph has no nodes".into()));
    }
    if steps == 0 {
        return Err(Error::Validation("path length must be at least 1".into()));
    }
    if scores.len() != steps * trans.len() {
        return Err(Error::Shape(format!(
            "score table has {} entries, expected {steps} x {}",
            scores.len(),
            trans.len()
        )));
    }
    Ok(())
}

fn effective_length(steps: usize, trans: &Transitions) -> (usize, bool) {
    let longest = trans.longest_walk(steps);
    if longest < steps {
        log::warn!("no walk of {steps} steps exists; the longest is {longest} steps");
        (longest, true)
    } else {
        (steps, false)
    }
}

fn assemble(
    scores: &[f64],
    n: usize,
    nodes: Vec<usize>,
    kinds: Vec<EdgeKind>,
    lambda: f64,
    terminated_early: bool,
) -> RetrievedPath {
    let per_step_scores: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            let pen = if t == 0 { 0.0 } else { penalty(kinds[t - 1], lambda) };
            scores[t * n + v] - pen
        })
        .collect();
    RetrievedPath {
        total_score: per_step_scores.iter().sum(),
        node_ids: nodes,
        per_step_scores,
        transition_kinds: kinds,
        terminated_early,
    }
}

/// Exact search over a precomputed `steps x N` score table.
pub fn dp_over_scores(scores: &[f64], steps: usize, trans: &Transitions, lambda: f64) -> Result<RetrievedPath> {
    check_table(scores, steps, trans)?;
    let n = trans.len();
    let (len, early) = effective_length(steps, trans);

    // value[t][v]: best score of a suffix that occupies v at step t
    let mut value = vec![vec![f64::NEG_INFINITY; n]; len];
    value[len - 1].copy_from_slice(&scores[(len - 1) * n..len * n]);
    for t in (0..len - 1).rev() {
        let (head, tail) = value.split_at_mut(t + 1);
        let next = &tail[0];
        head[t].par_iter_mut().enumerate().for_each(|(v, slot)| {
            let best = trans.succ[v]
                .iter()
                .map(|&(m, k)| next[m] - penalty(k, lambda))
                .fold(f64::NEG_INFINITY, f64::max);
            *slot = scores[t * n + v] + best;
        });
    }

    let mut node = 0;
    for v in 1..n {
        if value[0][v] > value[0][node] {
            node = v;
        }
    }
    let mut nodes = vec![node];
    let mut kinds = Vec::with_capacity(len.saturating_sub(1));
    for t in 1..len {
        let mut best: Option<(usize, EdgeKind, f64)> = None;
        for &(m, k) in &trans.succ[node] {
            let v = value[t][m] - penalty(k, lambda);
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((m, k, v));
            }
        }
        let (m, k, _) = best.ok_or_else(|| Error::NoModel(format!("dead end at node {node}")))?;
        nodes.push(m);
        kinds.push(k);
        node = m;
    }
    Ok(assemble(scores, n, nodes, kinds, lambda, early))
}

#[derive(Clone)]
struct Hypothesis {
    score: f64,
    keys: Vec<(u8, usize)>,
    kinds: Vec<EdgeKind>,
}

impl Hypothesis {
    fn node(&self) -> usize {
        self.keys.last().unwrap().1
    }

    fn better_than(&self, other: &Hypothesis) -> bool {
        self.score > other.score || (self.score == other.score && self.keys < other.keys)
    }
}

/// Beam search with per-node recombination. A width of at least `N`
/// reproduces [`dp_over_scores`]; width 1 is the greedy walk.
pub fn beam_over_scores(
    scores: &[f64],
    steps: usize,
    trans: &Transitions,
    lambda: f64,
    width: usize,
) -> Result<RetrievedPath> {
    check_table(scores, steps, trans)?;
    if width == 0 {
        return Err(Error::Validation("beam width must be at least 1".into()));
    }
    let n = trans.len();
    let rank = |beam: &mut Vec<Hypothesis>| {
        beam.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.keys.cmp(&b.keys))
        });
        beam.truncate(width);
    };
    let mut beam: Vec<Hypothesis> = (0..n)
        .map(|v| Hypothesis {
            score: scores[v],
            keys: vec![(0, v)],
            kinds: Vec::new(),
        })
        .collect();
    rank(&mut beam);
    let mut early = false;
    for t in 1..steps {
        let mut best: Vec<Option<Hypothesis>> = vec![None; n];
        for h in &beam {
            for &(m, k) in &trans.succ[h.node()] {
                let mut cand = h.clone();
                cand.score += scores[t * n + m] - penalty(k, lambda);
                cand.keys.push((kind_rank(k), m));
                cand.kinds.push(k);
                if best[m].as_ref().is_none_or(|b| cand.better_than(b)) {
                    best[m] = Some(cand);
                }
            }
        }
        let mut next: Vec<Hypothesis> = best.into_iter().flatten().collect();
        if next.is_empty() {
            log::warn!("beam emptied at step {t} of {steps}");
            early = true;
            break;
        }
        rank(&mut next);
        beam = next;
    }
    let top = beam.swap_remove(0);
    let nodes = top.keys.iter().map(|&(_, v)| v).collect();
    Ok(assemble(scores, n, nodes, top.kinds, lambda, early))
}

pub fn dp_search(
    graph: &GestureGraph,
    audio: &FeatureTrack,
    bank: &MotionBank,
    config: &SearchConfig,
) -> Result<RetrievedPath> {
    config.validate()?;
    let scores = score_table(graph, audio, bank, config)?;
    dp_over_scores(&scores, path_length(audio), &Transitions::from_graph(graph)?, config.lambda)
}

pub fn beam_search(
    graph: &GestureGraph,
    audio: &FeatureTrack,
    bank: &MotionBank,
    beam_width: usize,
    config: &SearchConfig,
) -> Result<RetrievedPath> {
    config.validate()?;
    let scores = score_table(graph, audio, bank, config)?;
    beam_over_scores(
        &scores,
        path_length(audio),
        &Transitions::from_graph(graph)?,
        config.lambda,
        beam_width,
    )
}

/// Dispatches on `config.beam` (0 = exact).
pub fn search(
    graph: &GestureGraph,
    audio: &FeatureTrack,
    bank: &MotionBank,
    config: &SearchConfig,
) -> Result<RetrievedPath> {
    if config.beam == 0 {
        dp_search(graph, audio, bank, config)
    } else {
        beam_search(graph, audio, bank, config.beam, config)
    }
}
