//! Every on-disk format reads back what it writes, and rewriting what was
//! read reproduces the same bytes.

use std::path::Path;

use gvgraph::align::FrameWordAlignment;
use gvgraph::features::{FeatureTrack, Modality};
use gvgraph::fixtures::{gen_fixtures, FixtureKind};
use gvgraph::geometry::{background_flow, PointMatch, Pose2D};
use gvgraph::graph::doc::{load_nodes, read_graph, write_graph, GraphDocument};
use gvgraph::graph::{build_graph, prune_graph, EdgeListGraph, GraphConfig};
use gvgraph::io;
use gvgraph::mask::{BBox, RleMask};
use gvgraph::motion::JointSequence;
use gvgraph::pipeline::{run_pipeline, PipelineConfig, TransitionManifest};
use nalgebra::{Matrix3, Rotation3, Vector3};
use serde_json::Map;

fn rewrite_identical(path: &Path, rewrite: impl Fn(&Path, &Path)) {
    let again = path.with_extension("again");
    rewrite(path, &again);
    assert_eq!(
        std::fs::read(path).unwrap(),
        std::fs::read(&again).unwrap(),
        "{}",
        path.display()
    );
}

fn sequence() -> JointSequence {
    let (frames, joints) = (5, 2);
    let mut pos = Vec::new();
    let mut rot = Vec::new();
    for t in 0..frames {
        for j in 0..joints {
            pos.push(Vector3::new(0.5 * t as f64, -0.25 * j as f64, 0.125));
            rot.push(Rotation3::from_euler_angles(0.1 * t as f64, 0.2, -0.3 * j as f64).into_inner());
        }
    }
    JointSequence::new(30.0, joints, pos, rot).unwrap()
}

#[test]
fn motion_binary_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let seq = sequence();
    let bin = dir.path().join("a.motion");
    io::write_motion(&bin, &seq).unwrap();
    let back = io::read_motion(&bin).unwrap();
    assert_eq!((back.frames(), back.joints()), (5, 2));
    for (a, b) in back.positions().iter().zip(seq.positions()) {
        assert!((a - b).amax() < 1e-6);
    }
    rewrite_identical(&bin, |src, dst| io::write_motion(dst, &io::read_motion(src).unwrap()).unwrap());

    let text = dir.path().join("a.jsonl");
    io::write_motion_text(&text, &seq).unwrap();
    assert_eq!(io::read_motion(&text).unwrap(), seq);
    rewrite_identical(&text, |src, dst| io::write_motion_text(dst, &io::read_motion(src).unwrap()).unwrap());
}

#[test]
fn masks_boxes_matches_poses() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bits: Vec<bool> = (0..35).map(|i| i % 3 == 0 || i > 30).collect();
    let masks = vec![RleMask::from_bitmap(7, 5, &bits).unwrap(), RleMask::empty(7, 5)];
    io::write_masks(&d.join("m.json"), 7, 5, &masks).unwrap();
    assert_eq!(io::read_masks(&d.join("m.json")).unwrap(), (7, 5, masks));
    rewrite_identical(&d.join("m.json"), |s, t| {
        let (w, h, m) = io::read_masks(s).unwrap();
        io::write_masks(t, w, h, &m).unwrap();
    });

    let boxes = vec![vec![BBox::new(1.0, 2.0, 3.5, 4.0)], vec![]];
    io::write_boxes(&d.join("b.json"), &boxes).unwrap();
    assert_eq!(io::read_boxes(&d.join("b.json")).unwrap(), boxes);
    rewrite_identical(&d.join("b.json"), |s, t| io::write_boxes(t, &io::read_boxes(s).unwrap()).unwrap());

    let matches = vec![
        PointMatch { src: [1.5, 2.0], dst: [3.0, 4.25] },
        PointMatch { src: [0.1, 1e-7], dst: [123.456, 7.0] },
    ];
    io::write_matches(&d.join("x.txt"), &matches).unwrap();
    assert_eq!(io::read_matches(&d.join("x.txt")).unwrap(), matches);
    rewrite_identical(&d.join("x.txt"), |s, t| io::write_matches(t, &io::read_matches(s).unwrap()).unwrap());

    let poses = vec![Pose2D::new(vec![[0.1, 0.9], [0.3, 0.3]], vec![1.0, 0.5]).unwrap()];
    io::write_poses(&d.join("p.json"), &poses).unwrap();
    assert_eq!(io::read_poses(&d.join("p.json")).unwrap(), poses);
    rewrite_identical(&d.join("p.json"), |s, t| io::write_poses(t, &io::read_poses(s).unwrap()).unwrap());
}

#[test]
fn features_and_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let track = FeatureTrack::new(Modality::Motion, 30.0, 2, vec![0.5, -0.25, 1.0, 2.0], 1, vec![0.75], 2).unwrap();
    io::write_features(&d.join("f.feat"), &track).unwrap();
    assert_eq!(io::read_features(&d.join("f.feat")).unwrap(), track);
    rewrite_identical(&d.join("f.feat"), |s, t| io::write_features(t, &io::read_features(s).unwrap()).unwrap());

    let h = Matrix3::new(1.0, 0.0, 5.0, 0.0, 1.0, 3.0, 0.0, 0.0, 1.0);
    let flow = background_flow(&h, 6, 4, None).unwrap();
    io::write_flow(&d.join("f.flow"), &flow).unwrap();
    let (w, hh, offsets) = io::read_flow(&d.join("f.flow")).unwrap();
    assert_eq!((w, hh), (6, 4));
    assert_eq!(offsets, flow.offsets);
    let bytes = std::fs::read(d.join("f.flow")).unwrap();
    assert_eq!(bytes.len(), 8 + 6 * 4 * 8);
    assert_eq!(&bytes[..4], &6u32.to_le_bytes());
    assert_eq!(&bytes[8..12], &5f32.to_le_bytes());
}

#[test]
fn graph_documents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_fixtures(FixtureKind::Pipeline, &Map::new(), 2, d).unwrap();
    let cfg = PipelineConfig::load(&d.join("config.toml")).unwrap();
    let nodes = load_nodes(&cfg.source_refs(), cfg.audio_sample_rate).unwrap();
    let graph = prune_graph(&build_graph(nodes, GraphConfig::default()).unwrap()).unwrap();
    let doc = GraphDocument::from_graph(&graph, cfg.source_refs(), cfg.audio_sample_rate);
    let path = d.join("graph.json");
    write_graph(&path, &doc).unwrap();
    assert_eq!(read_graph(&path).unwrap(), graph);
    rewrite_identical(&path, |s, t| {
        let g = read_graph(s).unwrap();
        write_graph(t, &GraphDocument::from_graph(&g, cfg.source_refs(), cfg.audio_sample_rate)).unwrap();
    });

    gen_fixtures(FixtureKind::Graph, &Map::new(), 2, &d.join("el")).unwrap();
    let el_path = d.join("el/graph.json");
    let el: EdgeListGraph = io::read_json(&el_path).unwrap();
    rewrite_identical(&el_path, |s, t| io::write_json(t, &io::read_json::<EdgeListGraph>(s).unwrap()).unwrap());
    assert_eq!(el.nodes, 10);
}

#[test]
fn manifest_config_and_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    gen_fixtures(FixtureKind::Pipeline, &Map::new(), 5, d).unwrap();
    let cfg = PipelineConfig::load(&d.join("config.toml")).unwrap();
    let run = run_pipeline(&cfg).unwrap();
    let read: TransitionManifest = io::read_json(&run.manifest_path).unwrap();
    assert_eq!(read, run.manifest);
    rewrite_identical(&run.manifest_path, |s, t| {
        io::write_json(t, &io::read_json::<TransitionManifest>(s).unwrap()).unwrap()
    });

    let text = cfg.to_toml().unwrap();
    assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);

    let a = FrameWordAlignment {
        word_index: vec![1, 1, 2],
        filled: vec![true, false, false],
    };
    io::write_json(&d.join("a.json"), &a).unwrap();
    assert_eq!(io::read_json::<FrameWordAlignment>(&d.join("a.json")).unwrap(), a);
}

#[test]
fn malformed_inputs_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.feat"), b"GGFT\x01").unwrap();
    assert!(io::read_features(&d.join("bad.feat")).unwrap_err().is_validation());
    std::fs::write(d.join("bad.txt"), b"1 2 3\n").unwrap();
    assert!(io::read_matches(&d.join("bad.txt")).is_err());
    assert!(io::read_motion(&d.join("missing.motion")).unwrap_err().is_validation());
}
