use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use flowseg_core::association::associate_sequence;
use flowseg_core::dataset::{
    count_candidate_frames, read_boxes, read_candidates, read_frame_masks, read_gt, read_tracks, write_boxes,
    write_candidates, write_frame_masks, write_gt, write_rgb_png, write_tracks,
};
use flowseg_core::evaluation::{
    default_sr_thresholds, evaluate_sequence, loss_flowi, loss_flowp, moca_sr, EvalReport, LossWeights, ProbMask,
    SequenceScores, SrReport,
};
use flowseg_core::flowio::{flow_path, flow_to_rgb, read_flo_file, write_flo_file, DirFlowSource, Normalization};
use flowseg_core::selection::{combine_predictions, select_frame};
use flowseg_core::synth::{gt_boxes, make_candidates, realize, SceneSpec};
use flowseg_core::Mask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::failure::Failure;

pub const ERRORS_FILE: &str = "errors.json";

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub exit_code: i32,
    pub message: String,
}

/// Runs `job` for every sequence on a pool of `cfg.workers` threads.
/// Results come back in sequence order. Failures are written to
/// `<out>/errors.json` and turned into the most severe exit code.
fn for_each_sequence<T: Send>(
    cfg: &PipelineConfig,
    names: &[String],
    job: impl Fn(&str) -> Result<T, Failure> + Sync,
) -> Result<Vec<(String, T)>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Failure::Internal(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<T, Failure>> = pool.install(|| names.par_iter().map(|n| job(n)).collect());

    let mut ok = Vec::new();
    let mut errors = BTreeMap::new();
    for (name, r) in names.iter().zip(results) {
        match r {
            Ok(v) => ok.push((name.clone(), v)),
            Err(e) => {
                log::error!("{name}: {e}");
                errors.insert(
                    name.clone(),
                    ErrorEntry {
                        exit_code: e.exit_code(),
                        message: e.message().to_string(),
                    },
                );
            }
        }
    }
    let manifest = cfg.out.join(ERRORS_FILE);
    if errors.is_empty() {
        if manifest.exists() {
            fs::remove_file(&manifest)?;
        }
        return Ok(ok);
    }
    write_text(&manifest, &to_json(&errors))?;
    let worst = errors.values().map(|e| e.exit_code).max().unwrap_or(2);
    let summary = format!(
        "{} of {} sequences failed; see {}",
        errors.len(),
        names.len(),
        manifest.display()
    );
    Err(if worst >= 3 {
        Failure::Internal(summary)
    } else {
        Failure::Input(summary)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SynthRecord {
    spec: SceneSpec,
    log: flowseg_core::synth::CorruptionLog,
}

/// Generates `num_sequences` scenes under `root` in the standard layout.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<Vec<String>, Failure> {
    let s = &cfg.synth;
    let names: Vec<String> = (0..s.num_sequences).map(|i| format!("seq{i:03}")).collect();
    fs::create_dir_all(&cfg.root)?;
    let done = for_each_sequence(cfg, &names, |name| {
        let i: u64 = name[3..].parse().expect("generated name");
        let mut spec = SceneSpec::generate(s.seed.wrapping_add(i), s.height, s.width, s.num_frames, s.num_objects)?;
        spec.corruption = s.corruption.clone();
        let r = realize(&spec, &cfg.gaps)?;
        let dir = cfg.root.join(name);
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        write_gt(&dir, &r.gt)?;
        for f in r.flows.fields.values() {
            write_flo_file(&flow_path(&dir, f.source_frame, f.gap), f)?;
        }
        write_boxes(&dir.join("boxes.csv"), &gt_boxes(&r.gt)?)?;
        let seed = spec.seed;
        for c in make_candidates(&r.predictions, s.corruption.duplicate_candidates, seed)? {
            write_candidates(&dir, &c)?;
        }
        write_text(&dir.join("synth.json"), &to_json(&SynthRecord { spec, log: r.log }))?;
        Ok(())
    })?;
    Ok(done.into_iter().map(|(n, _)| n).collect())
}

/// Candidates → per-frame selections in `<out>/<seq>/frames`.
pub fn cmd_select(cfg: &PipelineConfig) -> Result<Vec<String>, Failure> {
    cfg.require_root()?;
    let names = cfg.sequence_names()?;
    let done = for_each_sequence(cfg, &names, |name| {
        let seq = cfg.root.join(name);
        let n = count_candidate_frames(&seq)?;
        let frames = (0..n)
            .map(|t| select_frame(&read_candidates(&seq, t)?, &cfg.selection))
            .collect::<Result<Vec<_>, _>>()?;
        let out = cfg.out.join(name).join("frames");
        if out.exists() {
            fs::remove_dir_all(&out)?;
        }
        write_frame_masks(&out, &frames)?;
        Ok(())
    })?;
    Ok(done.into_iter().map(|(n, _)| n).collect())
}

/// Per-frame selections → tracks in `<out>/<seq>/tracks`.
pub fn cmd_associate(cfg: &PipelineConfig, input: &str) -> Result<Vec<String>, Failure> {
    cfg.require_root()?;
    let names = cfg.sequence_names()?;
    let done = for_each_sequence(cfg, &names, |name| {
        let frames = read_frame_masks(&cfg.out.join(name).join(input))?;
        let flows = DirFlowSource::new(cfg.root.join(name));
        let res = associate_sequence(&frames, &flows, &cfg.assoc)?;
        let out = cfg.out.join(name).join("tracks");
        if out.exists() {
            fs::remove_dir_all(&out)?;
        }
        write_tracks(&out, &res.tracks)?;
        write_text(&out.join("decisions.json"), &to_json(&res.decisions))?;
        Ok(())
    })?;
    Ok(done.into_iter().map(|(n, _)| n).collect())
}

/// Layers `back` under `front` per frame into `<out>/<seq>/combined`.
pub fn cmd_combine(cfg: &PipelineConfig, front: &str, back: &str) -> Result<Vec<String>, Failure> {
    let names = cfg.sequence_names()?;
    let done = for_each_sequence(cfg, &names, |name| {
        let dir = cfg.out.join(name);
        let f = read_frame_masks(&dir.join(front))?;
        let b = read_frame_masks(&dir.join(back))?;
        if f.len() != b.len() {
            return Err(flowseg_core::Error::FrameCount {
                expected: f.len(),
                found: b.len(),
            }
            .into());
        }
        let combined = f
            .iter()
            .zip(&b)
            .map(|(x, y)| combine_predictions(x, y))
            .collect::<Result<Vec<_>, _>>()?;
        write_frame_masks(&dir.join("combined"), &combined)?;
        Ok(())
    })?;
    Ok(done.into_iter().map(|(n, _)| n).collect())
}

fn load_predictions(dir: &Path) -> Result<Vec<Vec<Mask>>, Failure> {
    if dir.join("tracks.json").exists() {
        Ok(read_tracks(dir)?.frames)
    } else {
        Ok(read_frame_masks(dir)?.into_iter().map(|f| f.masks()).collect())
    }
}

/// Scores `<out>/<seq>/<input>` against `<root>/<seq>/gt` and writes
/// `report.json` and `report.csv` into `<out>`.
pub fn cmd_eval(cfg: &PipelineConfig, input: &str) -> Result<EvalReport, Failure> {
    cfg.require_root()?;
    let names = cfg.sequence_names()?;
    let done = for_each_sequence(cfg, &names, |name| -> Result<(SequenceScores, Option<SrReport>), Failure> {
        let seq = cfg.root.join(name);
        let gt = read_gt(&seq)?;
        let pred = load_predictions(&cfg.out.join(name).join(input))?;
        let scores = evaluate_sequence(&pred, &gt, cfg.protocol)?;
        let boxes = seq.join("boxes.csv");
        let sr = if boxes.exists() {
            Some(moca_sr(&pred, &read_boxes(&boxes)?, &default_sr_thresholds())?)
        } else {
            None
        };
        Ok((scores, sr))
    })?;
    let mut per = BTreeMap::new();
    let mut srs = BTreeMap::new();
    for (name, (scores, sr)) in done {
        if let Some(sr) = sr {
            srs.insert(name.clone(), sr);
        }
        per.insert(name, scores);
    }
    let mut report = EvalReport::new(cfg.protocol, per, srs);
    report.config_hash = Some(cfg.hash());
    write_text(&cfg.out.join("report.json"), &to_json(&report))?;
    write_text(&cfg.out.join("report.csv"), &report_csv(&report)?)?;
    Ok(report)
}

pub fn report_csv(r: &EvalReport) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Internal(e.to_string());
    w.write_record(["sequence", "J", "F", "J&F"]).map_err(err)?;
    for (name, s) in &r.per_sequence {
        w.write_record([name.clone(), s.j.to_string(), s.f.to_string(), s.jf.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Internal(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// select → associate → eval.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<EvalReport, Failure> {
    cmd_select(cfg)?;
    cmd_associate(cfg, "frames")?;
    cmd_eval(cfg, "tracks")
}

pub fn cmd_flow_vis(input: &Path, output: &Path, max_flow: Option<f64>) -> Result<(), Failure> {
    let f = read_flo_file(input)?;
    let norm = match max_flow {
        Some(m) => Normalization::Fixed(m),
        None => Normalization::PerFrameMax,
    };
    write_rgb_png(output, &flow_to_rgb(&f, norm)?)?;
    Ok(())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossItem {
    /// Row-major probability rows.
    pub pred: Vec<Vec<f64>>,
    /// Binary ground truth rows (nonzero is foreground).
    pub gt: Vec<Vec<u8>>,
    pub pred_fiou: f64,
    pub gt_fiou: f64,
    #[serde(default)]
    pub pred_mos: Option<f64>,
    #[serde(default)]
    pub gt_mos: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossInput {
    #[serde(default)]
    pub weights: Option<LossWeights>,
    pub items: Vec<LossItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossOutput {
    pub loss_flowi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_flowp: Option<f64>,
}

fn grid_dims<T>(rows: &[Vec<T>]) -> Result<(usize, usize), Failure> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if h == 0 || w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(Failure::Input("loss item grids must be nonempty and rectangular".into()));
    }
    Ok((h, w))
}

/// Reference losses for a JSON batch; weights default to the config's.
pub fn cmd_losses(cfg: &PipelineConfig, input: &Path) -> Result<LossOutput, Failure> {
    let text = fs::read_to_string(input).map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
    let data: LossInput =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
    let w = data.weights.unwrap_or(cfg.losses);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for item in &data.items {
        let (h, wd) = grid_dims(&item.pred)?;
        if grid_dims(&item.gt)? != (h, wd) {
            return Err(Failure::Input("prediction and ground truth sizes differ".into()));
        }
        preds.push(ProbMask::new(h, wd, item.pred.concat())?);
        gts.push(Mask::from_fn(h, wd, |x, y| item.gt[y][x] != 0)?);
    }
    let pf: Vec<f64> = data.items.iter().map(|i| i.pred_fiou).collect();
    let gf: Vec<f64> = data.items.iter().map(|i| i.gt_fiou).collect();
    let flowi = loss_flowi(&preds, &pf, &gts, &gf, &w)?;
    let pm: Option<Vec<f64>> = data.items.iter().map(|i| i.pred_mos).collect();
    let gm: Option<Vec<bool>> = data.items.iter().map(|i| i.gt_mos).collect();
    let flowp = match (pm, gm) {
        (Some(pm), Some(gm)) => Some(loss_flowp(&preds, &pf, &pm, &gts, &gf, &gm, &w)?),
        _ => None,
    };
    Ok(LossOutput {
        loss_flowi: flowi,
        loss_flowp: flowp,
    })
}
