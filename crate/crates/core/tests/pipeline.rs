use std::path::Path;

use gvgraph::features::{FeatureTrack, Modality};
use gvgraph::fixtures::{gen_fixtures, FixtureKind};
use gvgraph::graph::EdgeKind;
use gvgraph::io;
use gvgraph::mask::{BBox, RleMask};
use gvgraph::motion::JointSequence;
use gvgraph::pipeline::{run_pipeline, HomographySource, PipelineConfig, Segment, SourceConfig};
use nalgebra::{Matrix3, Vector3};
use serde_json::Map;

fn planted_fixture(dir: &Path) -> PipelineConfig {
    gen_fixtures(FixtureKind::Pipeline, &Map::new(), 11, dir).unwrap();
    PipelineConfig::load(&dir.join("config.toml")).unwrap()
}

fn retrieved(start: usize, node: usize, video: &str, from: usize) -> Segment {
    Segment::Retrieved {
        timeline_start: start,
        length: 4,
        node,
        video: video.into(),
        frames: [from, from + 4],
    }
}

#[test]
fn planted_path_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_fixture(dir.path());
    let run = run_pipeline(&cfg).unwrap();
    let m = &run.manifest;
    assert_eq!(m.node_ids, vec![0, 1, 2, 9, 10, 11]);
    assert_eq!(m.segments.len(), 7);
    assert_eq!(m.segments[0], retrieved(0, 0, "v0", 0));
    assert_eq!(m.segments[1], retrieved(4, 1, "v0", 4));
    assert_eq!(m.segments[2], retrieved(8, 2, "v0", 8));
    match &m.segments[3] {
        Segment::Interpolate {
            timeline_start,
            length,
            from_node,
            to_node,
            edge,
            start_video,
            start_frames,
            end_video,
            end_frames,
            poses,
            homography,
            homography_source,
            flow,
        } => {
            assert_eq!((*timeline_start, *length), (12, 8));
            assert_eq!((*from_node, *to_node), (2, 9));
            assert_ne!(*edge, EdgeKind::Original);
            assert_eq!((start_video.as_str(), *start_frames), ("v0", [8, 12]));
            assert_eq!((end_video.as_str(), *end_frames), ("v1", [12, 16]));
            assert_eq!(poses.len(), 8);
            assert_eq!(*homography_source, HomographySource::Identity);
            assert_eq!(*homography, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
            let (w, h, offsets) = io::read_flow(&cfg.output_dir.join(flow)).unwrap();
            assert_eq!((w, h), (64, 48));
            assert!(offsets.iter().all(|o| *o == [0.0, 0.0]));
        }
        other => panic!("expected interpolation, got {other:?}"),
    }
    assert_eq!(m.segments[4], retrieved(20, 9, "v1", 12));
    assert_eq!(m.segments[5], retrieved(24, 10, "v1", 16));
    assert_eq!(m.segments[6], retrieved(28, 11, "v1", 20));
    assert_eq!(m.total_frames, 24 + 8);
    assert!(m.tiles_timeline());
    assert!(!cfg.output_dir.join(".gvgraph.lock").exists());
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_fixture(dir.path());
    let files = ["manifest.json", "graph.json", "path.json"];
    run_pipeline(&cfg).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(cfg.output_dir.join(f)).unwrap()).collect();
    run_pipeline(&cfg).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(cfg.output_dir.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn estimated_homography_used_when_matches_exist() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_fixture(dir.path());
    let mdir = dir.path().join("matches");
    let shift = Matrix3::new(1.0, 0.0, 2.0, 0.0, 1.0, -1.0, 0.0, 0.0, 1.0);
    let pts = [[0.0, 0.0], [50.0, 3.0], [7.0, 40.0], [60.0, 45.0], [30.0, 20.0]];
    let matches: Vec<_> = pts
        .iter()
        .map(|&p| gvgraph::geometry::PointMatch {
            src: p,
            dst: gvgraph::geometry::warp_point(&shift, p).unwrap(),
        })
        .collect();
    io::write_matches(&mdir.join("2_9.txt"), &matches).unwrap();
    cfg.matches_dir = Some(mdir);
    let run = run_pipeline(&cfg).unwrap();
    let Segment::Interpolate { homography, homography_source, flow, .. } = &run.manifest.segments[3] else {
        panic!("expected interpolation");
    };
    assert_eq!(*homography_source, HomographySource::Estimated);
    assert!((homography[0][2] - 2.0).abs() < 1e-9 && (homography[1][2] + 1.0).abs() < 1e-9);
    let (_, _, offsets) = io::read_flow(&cfg.output_dir.join(flow)).unwrap();
    // pixel (0, 0) is background in the fixture
    assert!((offsets[0][0] - 2.0).abs() < 1e-6 && (offsets[0][1] + 1.0).abs() < 1e-6);
}

#[test]
fn identical_clips_use_original_edges_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let frames = 24;
    let seq = JointSequence::new(
        30.0,
        2,
        vec![Vector3::new(0.1, 0.2, 0.3); frames * 2],
        vec![Matrix3::identity(); frames * 2],
    )
    .unwrap();
    let mut bits = vec![false; 16 * 12];
    bits[20..30].iter_mut().for_each(|b| *b = true);
    let mask = RleMask::from_bitmap(16, 12, &bits).unwrap();
    io::write_motion(&d.join("a.motion"), &seq).unwrap();
    io::write_masks(&d.join("a.masks.json"), 16, 12, &vec![mask; frames]).unwrap();
    io::write_boxes(&d.join("a.boxes.json"), &vec![vec![BBox::new(1.0, 1.0, 3.0, 3.0)]; frames]).unwrap();
    let track = |n: usize| FeatureTrack::new(Modality::Motion, 30.0, 2, vec![0.5; n * 2], 2, vec![0.5; 2], 4).unwrap();
    io::write_features(&d.join("a.feat"), &track(frames)).unwrap();
    io::write_features(&d.join("audio.feat"), &track(16)).unwrap();
    let mut cfg = PipelineConfig {
        sources: vec![SourceConfig {
            video_id: "a".into(),
            motion: "a.motion".into(),
            masks: "a.masks.json".into(),
            boxes: "a.boxes.json".into(),
            motion_features: "a.feat".into(),
            poses2d: None,
        }],
        ..PipelineConfig::default()
    };
    cfg.resolve_paths(d);
    let run = run_pipeline(&cfg).unwrap();
    assert_eq!(run.manifest.node_ids, vec![0, 1, 2, 3]);
    assert!(run
        .manifest
        .segments
        .iter()
        .all(|s| matches!(s, Segment::Retrieved { .. })));
    assert_eq!(run.manifest.total_frames, 16);
}

#[test]
fn locked_output_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_fixture(dir.path());
    std::fs::create_dir_all(&cfg.output_dir).unwrap();
    std::fs::write(cfg.output_dir.join(".gvgraph.lock"), b"").unwrap();
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn dimension_mismatch_reported_as_load_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_fixture(dir.path());
    let bad = FeatureTrack::new(Modality::Audio, 30.0, 3, vec![0.1; 30], 3, vec![0.1; 3], 4).unwrap();
    io::write_features(&cfg.audio_features, &bad).unwrap();
    let err = run_pipeline(&cfg).unwrap_err().to_string();
    assert!(err.starts_with("load:"), "{err}");
}
