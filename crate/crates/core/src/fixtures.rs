//! Synthetic inputs with known answers.
//!
//! Each kind writes its data files plus a `truth.json` sidecar describing
//! what a correct consumer should find.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::features::{FeatureTrack, Modality, DEFAULT_FPS};
use crate::geometry::{warp_point, PointMatch};
use crate::graph::{Edge, EdgeKind, EdgeListGraph, CLIP_FRAMES};
use crate::io;
use crate::mask::{BBox, RleMask};
use crate::motion::JointSequence;
use crate::pipeline::{PipelineConfig, SourceConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Homography,
    RandomFeatures,
    Graph,
    Pipeline,
}

impl std::str::FromStr for FixtureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homography" => Ok(FixtureKind::Homography),
            "random-features" => Ok(FixtureKind::RandomFeatures),
            "graph" => Ok(FixtureKind::Graph),
            "pipeline" => Ok(FixtureKind::Pipeline),
            other => Err(Error::Validation(format!(
                "unknown fixture kind {other:?} (expected homography|random-features|graph|pipeline)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomographyParams {
    pub matches: usize,
    pub outlier_fraction: f64,
    pub width: f64,
    pub height: f64,
    /// Outliers are redrawn until they land at least this far from the
    /// true mapping.
    pub outlier_margin: f64,
}

impl Default for HomographyParams {
    fn default() -> Self {
        HomographyParams {
            matches: 50,
            outlier_fraction: 0.3,
            width: 640.0,
            height: 480.0,
            outlier_margin: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub frames: usize,
    pub windows: usize,
    pub low_dim: usize,
    pub high_dim: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            frames: 4096,
            windows: 512,
            low_dim: 32,
            high_dim: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphParams {
    pub cycle: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { cycle: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineParams {
    pub frames: usize,
    pub joints: usize,
    pub width: u32,
    pub height: u32,
    pub dim: usize,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            frames: 24,
            joints: 3,
            width: 64,
            height: 48,
            dim: 16,
        }
    }
}

fn params<T: DeserializeOwned>(raw: &Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(raw.clone())).map_err(|e| Error::Validation(format!("fixture parameters: {e}")))
}

/// Writes fixture files of `kind` into `out` and returns their paths.
pub fn gen_fixtures(kind: FixtureKind, raw: &Map<String, Value>, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        FixtureKind::Homography => write_homography(&params(raw)?, &mut rng, out),
        FixtureKind::RandomFeatures => write_random_features(&params(raw)?, &mut rng, out),
        FixtureKind::Graph => write_two_cycles(&params(raw)?, out),
        FixtureKind::Pipeline => write_pipeline(&params(raw)?, &mut rng, out),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMatches {
    pub h: Matrix3<f64>,
    pub matches: Vec<PointMatch>,
    /// Sorted indices of matches that follow `h` exactly.
    pub inliers: Vec<usize>,
}

/// Mild random projective map of an image onto itself.
pub fn random_homography(rng: &mut impl Rng) -> Matrix3<f64> {
    let mut u = |r: f64| rng.random_range(-r..r);
    Matrix3::new(
        1.0 + u(0.1),
        u(0.1),
        u(20.0),
        u(0.1),
        1.0 + u(0.1),
        u(20.0),
        u(1e-4),
        u(1e-4),
        1.0,
    )
}

pub fn synthetic_matches(p: &HomographyParams, rng: &mut impl Rng) -> Result<SyntheticMatches> {
    if p.matches < 4 || !(0.0..1.0).contains(&p.outlier_fraction) || p.width <= 0.0 || p.height <= 0.0 {
        return Err(Error::Validation(
            "need >= 4 matches, outlier_fraction in [0, 1) and a positive image size".into(),
        ));
    }
    let h = random_homography(rng);
    let outliers = (p.matches as f64 * p.outlier_fraction).round() as usize;
    let outlier_set: Vec<usize> = rand::seq::index::sample(rng, p.matches, outliers).into_vec();
    let mut matches = Vec::with_capacity(p.matches);
    for i in 0..p.matches {
        let src = [rng.random_range(0.0..p.width), rng.random_range(0.0..p.height)];
        let truth = warp_point(&h, src).ok_or_else(|| Error::Degenerate("fixture map hit infinity".into()))?;
        let dst = if outlier_set.contains(&i) {
            loop {
                let d = [rng.random_range(0.0..p.width), rng.random_range(0.0..p.height)];
                if (d[0] - truth[0]).hypot(d[1] - truth[1]) >= p.outlier_margin {
                    break d;
                }
            }
        } else {
            truth
        };
        matches.push(PointMatch { src, dst });
    }
    let inliers = (0..p.matches).filter(|i| !outlier_set.contains(i)).collect();
    Ok(SyntheticMatches { h, matches, inliers })
}

fn matrix_rows(h: &Matrix3<f64>) -> Value {
    json!([
        [h[(0, 0)], h[(0, 1)], h[(0, 2)]],
        [h[(1, 0)], h[(1, 1)], h[(1, 2)]],
        [h[(2, 0)], h[(2, 1)], h[(2, 2)]]
    ])
}

fn write_homography(p: &HomographyParams, rng: &mut ChaCha8Rng, out: &Path) -> Result<Vec<PathBuf>> {
    let s = synthetic_matches(p, rng)?;
    let matches = out.join("matches.txt");
    io::write_matches(&matches, &s.matches)?;
    let truth = out.join("truth.json");
    io::write_json(&truth, &json!({ "h": matrix_rows(&s.h), "inliers": s.inliers }))?;
    Ok(vec![matches, truth])
}

/// `count` i.i.d. Gaussian vectors scaled to unit length, flattened.
pub fn random_unit_rows(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        out.extend(row.iter().map(|v| v / n));
    }
    out
}

pub fn random_track(rng: &mut impl Rng, modality: Modality, p: &FeatureParams) -> Result<FeatureTrack> {
    if p.windows == 0 || p.frames < p.windows {
        return Err(Error::Validation("need 0 < windows <= frames".into()));
    }
    let low = random_unit_rows(rng, p.frames, p.low_dim);
    let high = random_unit_rows(rng, p.windows, p.high_dim);
    FeatureTrack::new(modality, DEFAULT_FPS, p.low_dim, low, p.high_dim, high, p.frames / p.windows)
}

fn write_random_features(p: &FeatureParams, rng: &mut ChaCha8Rng, out: &Path) -> Result<Vec<PathBuf>> {
    let audio = random_track(rng, Modality::Audio, p)?;
    let motion = random_track(rng, Modality::Motion, p)?;
    let (a, m, t) = (out.join("audio.feat"), out.join("motion.feat"), out.join("truth.json"));
    io::write_features(&a, &audio)?;
    io::write_features(&m, &motion)?;
    io::write_json(&t, &json!({ "low_baseline": 8.0 / 32.0, "high_baseline": 1.0 / 256.0 }))?;
    Ok(vec![a, m, t])
}

/// Two directed cycles of `cycle` nodes, far apart on a line.
pub fn two_cycles(cycle: usize) -> Result<EdgeListGraph> {
    if cycle < 2 {
        return Err(Error::Validation("cycle length must be at least 2".into()));
    }
    let n = 2 * cycle;
    let pos = |i: usize| if i < cycle { i as f64 } else { 100.0 + (i - cycle) as f64 };
    let mut edges = Vec::new();
    for base in [0, cycle] {
        for k in 0..cycle {
            let (src, dst) = (base + k, base + (k + 1) % cycle);
            edges.push(Edge {
                src,
                dst,
                distance: (pos(src) - pos(dst)).abs(),
                kind: EdgeKind::Original,
            });
        }
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    let distances = (0..n * n).map(|k| (pos(k / n) - pos(k % n)).abs()).collect();
    Ok(EdgeListGraph { nodes: n, edges, distances })
}

fn write_two_cycles(p: &GraphParams, out: &Path) -> Result<Vec<PathBuf>> {
    let g = two_cycles(p.cycle)?;
    let (gp, t) = (out.join("graph.json"), out.join("truth.json"));
    io::write_json(&gp, &g)?;
    io::write_json(
        &t,
        &json!({ "components": 2, "bridge_pairs": 1, "bridge": [p.cycle - 1, p.cycle] }),
    )?;
    Ok(vec![gp, t])
}

/// Motion, masks and boxes shared by both fixture videos.
fn fixture_video(p: &PipelineParams, rng: &mut impl Rng) -> Result<(JointSequence, Vec<RleMask>, Vec<Vec<BBox>>)> {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut positions = Vec::new();
    let mut rotations = Vec::new();
    for t in 0..p.frames {
        let tf = t as f64;
        for j in 0..p.joints {
            let jf = j as f64;
            positions.push(Vector3::new(
                0.3 * jf + 0.2 * (0.3 * tf + jf + phase).sin(),
                0.5 * jf + 0.1 * (0.2 * tf + phase).cos(),
                0.05 * tf,
            ));
            rotations.push(Rotation3::from_axis_angle(&Vector3::z_axis(), 0.05 * tf + 0.3 * jf).into_inner());
        }
    }
    let seq = JointSequence::new(DEFAULT_FPS, p.joints, positions, rotations)?;
    let (w, h) = (p.width, p.height);
    let mut masks = Vec::new();
    let mut boxes = Vec::new();
    for t in 0..p.frames as u32 {
        let x0 = 8 + (t % 7);
        let bits: Vec<bool> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x0..x0 + w / 3).contains(&x) && (h / 4..h - 4).contains(&y)))
            .collect();
        masks.push(RleMask::from_bitmap(w, h, &bits)?);
        let bx = f64::from(x0 + w / 3);
        boxes.push(vec![BBox::new(bx, 10.0, bx + 6.0, 16.0)]);
    }
    Ok((seq, masks, boxes))
}

fn write_pipeline(p: &PipelineParams, rng: &mut ChaCha8Rng, out: &Path) -> Result<Vec<PathBuf>> {
    if p.frames % CLIP_FRAMES != 0 || p.frames < 4 * CLIP_FRAMES || p.joints == 0 || p.dim == 0 {
        return Err(Error::Validation(format!(
            "frames must be a multiple of {CLIP_FRAMES} and at least {}; joints and dim positive",
            4 * CLIP_FRAMES
        )));
    }
    let (seq, masks, boxes) = fixture_video(p, rng)?;
    let nodes_per_video = p.frames / CLIP_FRAMES;
    let split = nodes_per_video / 2;
    let feat = FeatureParams {
        frames: p.frames,
        windows: nodes_per_video,
        low_dim: p.dim,
        high_dim: p.dim,
    };
    let tracks = [
        random_track(rng, Modality::Motion, &feat)?,
        random_track(rng, Modality::Motion, &feat)?,
    ];

    let mut files = Vec::new();
    let mut sources = Vec::new();
    for (v, track) in tracks.iter().enumerate() {
        let id = format!("v{v}");
        let names = [
            format!("{id}.motion"),
            format!("{id}.masks.json"),
            format!("{id}.boxes.json"),
            format!("{id}.feat"),
        ];
        io::write_motion(&out.join(&names[0]), &seq)?;
        io::write_masks(&out.join(&names[1]), p.width, p.height, &masks)?;
        io::write_boxes(&out.join(&names[2]), &boxes)?;
        io::write_features(&out.join(&names[3]), track)?;
        files.extend(names.iter().map(|n| out.join(n)));
        sources.push(SourceConfig {
            video_id: id,
            motion: names[0].clone().into(),
            masks: names[1].clone().into(),
            boxes: names[2].clone().into(),
            motion_features: names[3].clone().into(),
            poses2d: None,
        });
    }

    // audio copies video 0 up to the split, then video 1
    let cut = split * CLIP_FRAMES;
    let d = p.dim;
    let mut low = tracks[0].low()[..cut * d].to_vec();
    low.extend_from_slice(&tracks[1].low()[cut * d..]);
    let mut high = tracks[0].high()[..split * d].to_vec();
    high.extend_from_slice(&tracks[1].high()[split * d..]);
    let audio = FeatureTrack::new(Modality::Audio, DEFAULT_FPS, d, low, d, high, CLIP_FRAMES)?;
    let audio_path = out.join("audio.feat");
    io::write_features(&audio_path, &audio)?;
    files.push(audio_path);

    let config = PipelineConfig {
        sources,
        audio_features: "audio.feat".into(),
        output_dir: "out".into(),
        ..PipelineConfig::default()
    };
    let config_path = out.join("config.toml");
    io::write_bytes(&config_path, config.to_toml()?.as_bytes())?;
    files.push(config_path);

    let planted: Vec<usize> = (0..split).chain(nodes_per_video + split..2 * nodes_per_video).collect();
    let truth = out.join("truth.json");
    io::write_json(
        &truth,
        &json!({
            "planted_path": planted,
            "transitions": [[split - 1, nodes_per_video + split]],
        }),
    )?;
    files.push(truth);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_kind() {
        assert!("mesh".parse::<FixtureKind>().is_err());
        assert_eq!("random-features".parse::<FixtureKind>().unwrap(), FixtureKind::RandomFeatures);
    }

    #[test]
    fn unknown_param_rejected() {
        let mut raw = Map::new();
        raw.insert("cycles".into(), json!(3));
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_fixtures(FixtureKind::Graph, &raw, 1, dir.path()).is_err());
    }

    #[test]
    fn planted_outliers_are_far() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HomographyParams::default();
        let s = synthetic_matches(&p, &mut rng).unwrap();
        assert_eq!(s.inliers.len(), 35);
        for (i, m) in s.matches.iter().enumerate() {
            let t = warp_point(&s.h, m.src).unwrap();
            let e = (t[0] - m.dst[0]).hypot(t[1] - m.dst[1]);
            if s.inliers.contains(&i) {
                assert_eq!(e, 0.0);
            } else {
                assert!(e >= 20.0);
            }
        }
    }

    #[test]
    fn two_cycles_shape() {
        let g = two_cycles(4).unwrap();
        assert_eq!(g.edges.len(), 8);
        let (pruned, bridges) = g.prune().unwrap();
        assert_eq!(bridges.len(), 1);
        assert_eq!((bridges[0].u, bridges[0].v), (3, 4));
        assert_eq!(pruned.edges.len(), 10);
    }
}
