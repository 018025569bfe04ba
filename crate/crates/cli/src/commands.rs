use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gvgraph::align::{align_tokens, fill_gaps, parse_token_lines, AlignConfig};
use gvgraph::contrastive::{
    central_differences, global_infonce, local_frame_contrastive, max_relative_error, LocalWindowSpec,
};
use gvgraph::eval::{diversity, eval_retrieval};
use gvgraph::features::FeatureTrack;
use gvgraph::fixtures::{gen_fixtures, FixtureKind};
use gvgraph::geometry::{background_flow, blend_error, estimate_homography, linear_pose_blend};
use gvgraph::graph::doc::{load_nodes, read_graph, GraphDocument, SourceRef};
use gvgraph::graph::prune::dead_end_rate;
use gvgraph::graph::{adjacency, build_graph, prune_graph, scc_from_adjacency, Edge, EdgeKind, EdgeListGraph};
use gvgraph::io;
use gvgraph::pipeline::{run_pipeline, PipelineConfig};
use gvgraph::retrieval::{search, MotionBank};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{
    AlignArgs, BlendErrorArgs, BlendPosesArgs, BuildGraphArgs, Cli, Command, Common, DiversityArgs, EvalArgs,
    GenFixturesArgs, GraphStatsArgs, HomographyArgs, Level, LossCheckArgs, PruneGraphArgs, RunArgs, SearchArgs,
};

const DEFAULT_SEED: u64 = 7;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] gvgraph::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_validation() => 2,
            CliError::Usage(_) => 2,
            CliError::Lib(_) | CliError::CheckFailed(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::BuildGraph(a) => build(c, a),
        Command::PruneGraph(a) => prune(c, a),
        Command::GraphStats(a) => stats(c, a),
        Command::Search(a) => search_path(c, a),
        Command::EvalRetrieval(a) => eval(c, a),
        Command::LossCheck(a) => loss_check(c, a),
        Command::Align(a) => align(c, a),
        Command::Homography(a) => homography(c, a),
        Command::BlendPoses(a) => blend_poses(c, a),
        Command::BlendError(a) => blend_err(c, a),
        Command::Diversity(a) => div(c, a),
        Command::GenFixtures(a) => fixtures(c, a),
        Command::Run(a) => run(c, a),
    }
}

/// Pretty JSON to `--out`, or to stdout.
fn emit<T: Serialize + ?Sized>(common: &Common, value: &T) -> Result<()> {
    match &common.out {
        Some(path) => io::write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value).map_err(gvgraph::Error::from)?),
    }
    Ok(())
}

fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(gvgraph::Error::from)?);
    Ok(())
}

fn load_config(common: &Common) -> Result<Option<PipelineConfig>> {
    Ok(match &common.config {
        Some(p) => Some(PipelineConfig::load(p)?),
        None => None,
    })
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| CliError::Usage(format!("cannot resolve {}: {e}", p.display())))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = io::read_bytes(path)?;
    String::from_utf8(bytes).map_err(|e| CliError::Usage(format!("{} is not UTF-8: {e}", path.display())))
}

fn build(common: &Common, a: &BuildGraphArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let mut gc = cfg.as_ref().map(|c| c.graph).unwrap_or_default();
    if let Some(rule) = &a.edge_rule {
        gc.edge_rule = rule.parse()?;
    }
    if let Some(w) = a.w_body {
        gc.w_body = w;
    }
    if let Some(w) = a.w_hand {
        gc.w_hand = w;
    }
    let rate = a
        .audio_sample_rate
        .or(cfg.as_ref().map(|c| c.audio_sample_rate))
        .unwrap_or(gvgraph::graph::doc::DEFAULT_AUDIO_SAMPLE_RATE);

    let sources: Vec<SourceRef> = if a.motion.is_empty() {
        let Some(cfg) = &cfg else {
            return Err(CliError::Usage("build-graph needs --motion/--masks/--boxes or --config".into()));
        };
        cfg.source_refs()
    } else {
        if a.masks.len() != a.motion.len() || a.boxes.len() != a.motion.len() {
            return Err(CliError::Usage(format!(
                "{} --motion, {} --masks and {} --boxes given; counts must match",
                a.motion.len(),
                a.masks.len(),
                a.boxes.len()
            )));
        }
        if !a.video_id.is_empty() && a.video_id.len() != a.motion.len() {
            return Err(CliError::Usage("one --video-id per --motion".into()));
        }
        (0..a.motion.len())
            .map(|i| {
                Ok(SourceRef {
                    video_id: a.video_id.get(i).cloned().unwrap_or_else(|| format!("v{i}")),
                    motion: absolute(&a.motion[i])?,
                    masks: absolute(&a.masks[i])?,
                    boxes: absolute(&a.boxes[i])?,
                })
            })
            .collect::<Result<_>>()?
    };
    let graph = build_graph(load_nodes(&sources, rate)?, gc)?;
    log::info!("built {} nodes, {} edges", graph.node_count(), graph.edges.len());
    emit(common, &GraphDocument::from_graph(&graph, sources, rate))
}

fn from_value<T: serde::de::DeserializeOwned>(path: &Path, value: Value) -> Result<T> {
    serde_json::from_value(value).map_err(|e| {
        gvgraph::Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
        .into()
    })
}

enum AnyGraph {
    Document(GraphDocument),
    EdgeList(EdgeListGraph),
}

fn read_any_graph(path: &Path) -> Result<AnyGraph> {
    let value: Value = io::read_json(path)?;
    if value.get("sources").is_some() {
        Ok(AnyGraph::Document(from_value(path, value)?))
    } else {
        let g: EdgeListGraph = from_value(path, value)?;
        g.validate()?;
        Ok(AnyGraph::EdgeList(g))
    }
}

fn prune(common: &Common, a: &PruneGraphArgs) -> Result<()> {
    match read_any_graph(&a.input)? {
        AnyGraph::Document(doc) => {
            let base = a.input.parent().unwrap_or(Path::new(""));
            let sources = doc
                .sources
                .iter()
                .map(|s| {
                    let join = |p: &PathBuf| absolute(&base.join(p));
                    Ok(SourceRef {
                        video_id: s.video_id.clone(),
                        motion: join(&s.motion)?,
                        masks: join(&s.masks)?,
                        boxes: join(&s.boxes)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let rate = doc.audio_sample_rate;
            let pruned = prune_graph(&read_graph(&a.input)?)?;
            emit(common, &GraphDocument::from_graph(&pruned, sources, rate))
        }
        AnyGraph::EdgeList(g) => {
            let (pruned, bridges) = g.prune()?;
            log::info!("added {} bridge pairs", bridges.len());
            emit(common, &pruned)
        }
    }
}

#[derive(Serialize)]
struct GraphStats {
    nodes: usize,
    edges: usize,
    edges_by_kind: BTreeMap<EdgeKind, usize>,
    components: usize,
    largest_component: usize,
    strongly_connected: bool,
    dead_end_rate: BTreeMap<usize, f64>,
    dead_end_trials: usize,
}

fn stats(common: &Common, a: &GraphStatsArgs) -> Result<()> {
    let (n, edges): (usize, Vec<Edge>) = match read_any_graph(&a.input)? {
        AnyGraph::Document(doc) => (doc.nodes.len(), doc.edges),
        AnyGraph::EdgeList(g) => (g.nodes, g.edges),
    };
    if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n) {
        return Err(gvgraph::Error::Validation(format!("edge {} -> {} outside {n} nodes", e.src, e.dst)).into());
    }
    let mut by_kind = BTreeMap::new();
    for e in &edges {
        *by_kind.entry(e.kind).or_insert(0) += 1;
    }
    let adj = adjacency(n, &edges);
    let scc = scc_from_adjacency(&adj);
    let seed = common.seed.unwrap_or(DEFAULT_SEED);
    let stats = GraphStats {
        nodes: n,
        edges: edges.len(),
        edges_by_kind: by_kind,
        components: scc.len(),
        largest_component: scc.components.get(scc.largest).map_or(0, Vec::len),
        strongly_connected: scc.is_strongly_connected(),
        dead_end_rate: a.lengths.iter().map(|&l| (l, dead_end_rate(&adj, l, a.trials, seed))).collect(),
        dead_end_trials: a.trials,
    };
    emit(common, &stats)
}

fn search_path(common: &Common, a: &SearchArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let mut sc = cfg.as_ref().map(|c| c.search).unwrap_or_default();
    sc.w_low = a.w_low.unwrap_or(sc.w_low);
    sc.w_high = a.w_high.unwrap_or(sc.w_high);
    sc.lambda = a.lambda.unwrap_or(sc.lambda);
    sc.beam = a.beam.unwrap_or(sc.beam);

    let graph = read_graph(&a.graph)?;
    let audio = io::read_features(&a.audio_feat)?;
    let mut videos: Vec<&str> = graph.nodes.iter().map(|n| n.source_video.as_str()).collect();
    videos.dedup();
    let mut bank = MotionBank::new();
    for spec in &a.motion_feat {
        match spec.split_once('=') {
            Some((id, path)) => bank.insert(id, io::read_features(Path::new(path))?),
            None if videos.len() == 1 => bank.insert(videos[0], io::read_features(Path::new(spec))?),
            None => {
                return Err(CliError::Usage(format!(
                    "graph holds {} videos; pass --motion-feat VIDEO=PATH",
                    videos.len()
                )))
            }
        }
    }
    if a.motion_feat.is_empty() {
        let Some(cfg) = &cfg else {
            return Err(CliError::Usage("search needs --motion-feat or --config".into()));
        };
        for s in &cfg.sources {
            bank.insert(s.video_id.clone(), io::read_features(&s.motion_features)?);
        }
    }
    let path = search(&graph, &audio, &bank, &sc)?;
    if path.terminated_early {
        log::warn!("no walk covers the whole track; returned {} steps", path.node_ids.len());
    }
    emit(common, &path)
}

fn eval(common: &Common, a: &EvalArgs) -> Result<()> {
    let mut ec = load_config(common)?.map(|c| c.eval).unwrap_or_default();
    ec.low_trials = a.low_trials.unwrap_or(ec.low_trials);
    ec.high_trials = a.high_trials.unwrap_or(ec.high_trials);
    ec.seed = common.seed.unwrap_or(ec.seed);
    let audio = io::read_features(&a.audio)?;
    let motion = io::read_features(&a.motion)?;
    emit(common, &eval_retrieval(&audio, &motion, &ec)?)
}

struct Batch {
    audio_cls: DMatrix<f64>,
    motion_cls: DMatrix<f64>,
    audio_low: Vec<DMatrix<f64>>,
    motion_low: Vec<DMatrix<f64>>,
}

/// Consecutive `frames`-long stretches of each track, one per batch row.
fn batch_from_tracks(audio: &FeatureTrack, motion: &FeatureTrack, batch: usize, frames: usize) -> Result<Batch> {
    if audio.low_dim() != motion.low_dim() || audio.high_dim() != motion.high_dim() {
        return Err(gvgraph::Error::Shape("audio and motion embedding widths differ".into()).into());
    }
    let need = batch * frames;
    if audio.frames() < need || motion.frames() < need {
        return Err(gvgraph::Error::Validation(format!(
            "a batch of {batch} x {frames} frames needs {need} frames per track"
        ))
        .into());
    }
    let low = |t: &FeatureTrack, b: usize| {
        let d = t.low_dim();
        DMatrix::from_row_slice(frames, d, &t.low()[b * frames * d..(b + 1) * frames * d])
    };
    let cls = |t: &FeatureTrack| {
        let d = t.high_dim();
        let rows: Vec<f64> = (0..batch)
            .flat_map(|b| t.high_row(t.window_for_frame(b * frames)).to_vec())
            .collect();
        DMatrix::from_row_slice(batch, d, &rows)
    };
    Ok(Batch {
        audio_cls: cls(audio),
        motion_cls: cls(motion),
        audio_low: (0..batch).map(|b| low(audio, b)).collect(),
        motion_low: (0..batch).map(|b| low(motion, b)).collect(),
    })
}

fn random_batch(seed: u64, batch: usize, frames: usize, dim: usize) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    Batch {
        audio_cls: m(batch, dim),
        motion_cls: m(batch, dim),
        audio_low: (0..batch).map(|_| m(frames, dim)).collect(),
        motion_low: (0..batch).map(|_| m(frames, dim)).collect(),
    }
}

fn flatten(ms: &[&DMatrix<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

fn unflatten(x: &[f64], like: &[&DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut at = 0;
    like.iter()
        .map(|m| {
            let out = DMatrix::from_column_slice(m.nrows(), m.ncols(), &x[at..at + m.len()]);
            at += m.len();
            out
        })
        .collect()
}

#[derive(Serialize)]
struct LossReport {
    global_loss: f64,
    local_loss: f64,
    global_gradient_error: f64,
    local_gradient_error: f64,
    tolerance: f64,
    passed: bool,
}

fn loss_check(common: &Common, a: &LossCheckArgs) -> Result<()> {
    let spec = LocalWindowSpec { t: a.t, k: a.k };
    spec.validate()?;
    let frames = spec.min_frames();
    let b = match (&a.audio, &a.motion) {
        (Some(au), Some(mo)) => batch_from_tracks(&io::read_features(au)?, &io::read_features(mo)?, a.batch, frames)?,
        _ => random_batch(common.seed.unwrap_or(DEFAULT_SEED), a.batch, frames, a.dim),
    };
    let tau = a.tau;

    let g = global_infonce(&b.audio_cls, &b.motion_cls, tau)?;
    let cls = [&b.audio_cls, &b.motion_cls];
    let num = central_differences(
        |x| {
            let p = unflatten(x, &cls);
            global_infonce(&p[0], &p[1], tau).map_or(f64::NAN, |r| r.loss)
        },
        &flatten(&cls),
        a.step,
    );
    let global_err = max_relative_error(&flatten(&[&g.audio, &g.motion]), &num);

    let l = local_frame_contrastive(&b.audio_low, &b.motion_low, spec, tau)?;
    let low: Vec<&DMatrix<f64>> = b.audio_low.iter().chain(&b.motion_low).collect();
    let n = b.audio_low.len();
    let num = central_differences(
        |x| {
            let p = unflatten(x, &low);
            local_frame_contrastive(&p[..n], &p[n..], spec, tau).map_or(f64::NAN, |r| r.loss)
        },
        &flatten(&low),
        a.step,
    );
    let analytic: Vec<&DMatrix<f64>> = l.audio.iter().chain(&l.motion).collect();
    let local_err = max_relative_error(&flatten(&analytic), &num);

    let passed = global_err < a.tolerance && local_err < a.tolerance;
    emit(
        common,
        &LossReport {
            global_loss: g.loss,
            local_loss: l.loss,
            global_gradient_error: global_err,
            local_gradient_error: local_err,
            tolerance: a.tolerance,
            passed,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed: global {global_err:.3e}, local {local_err:.3e}, tolerance {:.1e}",
            a.tolerance
        )))
    }
}

fn align(common: &Common, a: &AlignArgs) -> Result<()> {
    let frames = parse_token_lines(&read_text(&a.frames)?);
    let words = parse_token_lines(&read_text(&a.words)?);
    let mut out = align_tokens(&frames, &words, &AlignConfig::default())?;
    if !a.no_fill {
        out = fill_gaps(&out)?;
    }
    emit(common, &out)
}

#[derive(Serialize)]
struct HomographyReport {
    h: [[f64; 3]; 3],
    inliers: Vec<usize>,
    iterations: usize,
    width: u32,
    height: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    flow: Option<PathBuf>,
}

fn homography(common: &Common, a: &HomographyArgs) -> Result<()> {
    let mut rc = load_config(common)?.map(|c| c.interp.ransac).unwrap_or_default();
    rc.seed = common.seed.unwrap_or(rc.seed);
    rc.inlier_px = a.inlier_px.unwrap_or(rc.inlier_px);
    let mask = a.mask.as_deref().map(io::read_single_mask).transpose()?;
    let (w, h) = match (&mask, a.width, a.height) {
        (_, Some(w), Some(h)) => (w, h),
        (Some(m), _, _) => (m.width, m.height),
        _ => return Err(CliError::Usage("give --mask or --width and --height".into())),
    };
    let matches = io::read_matches(&a.matches)?;
    let est = estimate_homography(&matches, &rc)?;
    let flow = background_flow(&est.h, w, h, mask.as_ref())?;
    if let Some(out) = &common.out {
        io::write_flow(out, &flow)?;
    }
    let row = |i: usize| [est.h[(i, 0)], est.h[(i, 1)], est.h[(i, 2)]];
    print_json(&HomographyReport {
        h: [row(0), row(1), row(2)],
        inliers: est.inliers,
        iterations: est.iterations,
        width: w,
        height: h,
        flow: common.out.clone(),
    })
}

fn blend_poses(common: &Common, a: &BlendPosesArgs) -> Result<()> {
    let start = io::read_poses(&a.start)?;
    let end = io::read_poses(&a.end)?;
    let (Some(s), Some(e)) = (start.last(), end.first()) else {
        return Err(gvgraph::Error::Validation("pose files must hold at least one pose".into()).into());
    };
    emit(common, &linear_pose_blend(s, e, a.n)?)
}

fn blend_err(common: &Common, a: &BlendErrorArgs) -> Result<()> {
    let check = blend_error(&io::read_poses(&a.blended)?, &io::read_poses(&a.gt)?, a.threshold)?;
    emit(common, &check)
}

#[derive(Serialize)]
struct DiversityReport {
    clips: usize,
    diversity: f64,
}

fn div(common: &Common, a: &DiversityArgs) -> Result<()> {
    let track = io::read_features(&a.clips)?;
    let rows: Vec<&[f64]> = match a.level {
        Level::High => (0..track.windows()).map(|i| track.high_row(i)).collect(),
        Level::Low => (0..track.frames()).map(|i| track.low_row(i)).collect(),
    };
    let value = diversity(&rows)?;
    emit(
        common,
        &DiversityReport {
            clips: rows.len(),
            diversity: value,
        },
    )
}

fn fixtures(common: &Common, a: &GenFixturesArgs) -> Result<()> {
    let kind: FixtureKind = a.kind.parse()?;
    let Some(out) = &common.out else {
        return Err(CliError::Usage("gen-fixtures needs --out DIR".into()));
    };
    let mut params = Map::new();
    for p in &a.params {
        let Some((k, v)) = p.split_once('=') else {
            return Err(CliError::Usage(format!("--param {p:?} is not KEY=VALUE")));
        };
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        params.insert(k.to_string(), value);
    }
    let written = gen_fixtures(kind, &params, common.seed.unwrap_or(DEFAULT_SEED), out)?;
    print_json(&written)
}

#[derive(Serialize)]
struct RunSummary {
    manifest: PathBuf,
    nodes: usize,
    edges: usize,
    path: Vec<usize>,
    interpolations: usize,
    total_frames: usize,
    terminated_early: bool,
}

fn run(common: &Common, a: &RunArgs) -> Result<()> {
    let Some(mut cfg) = load_config(common)? else {
        return Err(CliError::Usage("run needs --config".into()));
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if a.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let run = run_pipeline(&cfg)?;
    print_json(&RunSummary {
        manifest: run.manifest_path.clone(),
        nodes: run.graph.node_count(),
        edges: run.graph.edges.len(),
        path: run.manifest.node_ids.clone(),
        interpolations: run.manifest.interpolation_count(),
        total_frames: run.manifest.total_frames,
        terminated_early: run.path.terminated_early,
    })
}
