//! Region (J) and boundary (F) accuracy, detection success rate, the two
//! identity-matching protocols, and reference loss calculators.
//!
//! Sequences are given as `frames[t][k]`, object `k` at frame `t`. A ground
//! truth object is absent at a frame when its mask is empty or missing;
//! absent objects contribute no term there. J and F are pooled means over
//! all (object, frame) terms of a sequence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assign::{solve_assignment, Objective};
use crate::bbox::{bbox_iou, tight_bbox, BBox};
use crate::error::{Error, Result};
use crate::mask::{iou, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Frame,
    Sequence,
}

/// `gt_to_pred[t][g]`: prediction index matched to GT object `g` at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMatch {
    pub gt_to_pred: Vec<Vec<Option<usize>>>,
}

fn num_objects(frames: &[Vec<Mask>]) -> usize {
    frames.iter().map(Vec::len).max().unwrap_or(0)
}

fn present(frames: &[Vec<Mask>], t: usize, k: usize) -> Option<&Mask> {
    frames[t].get(k).filter(|m| !m.is_empty())
}

fn check_pair(pred: &[Vec<Mask>], gt: &[Vec<Mask>]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::FrameCount {
            expected: gt.len(),
            found: pred.len(),
        });
    }
    let mut dims = None;
    for m in gt.iter().chain(pred).flatten() {
        match dims {
            None => dims = Some(m.dims()),
            Some(d) if d != m.dims() => {
                return Err(Error::Shape {
                    expected: d,
                    found: m.dims(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Matches predicted to ground-truth identities by maximum IoU.
///
/// `Frame` solves one assignment per frame. `Sequence` solves a single
/// assignment whose weight for a (GT, prediction) pair is the mean IoU over
/// the frames where that GT object is present.
pub fn hungarian_protocol_match(pred: &[Vec<Mask>], gt: &[Vec<Mask>], protocol: Protocol) -> Result<ProtocolMatch> {
    check_pair(pred, gt)?;
    let n_gt = num_objects(gt);
    let mut gt_to_pred = vec![vec![None; n_gt]; gt.len()];
    match protocol {
        Protocol::Frame => {
            for t in 0..gt.len() {
                let rows: Vec<usize> = (0..n_gt).filter(|&g| present(gt, t, g).is_some()).collect();
                let mut w = ndarray::Array2::<f64>::zeros((rows.len(), pred[t].len()));
                for (r, &g) in rows.iter().enumerate() {
                    for (p, pm) in pred[t].iter().enumerate() {
                        w[[r, p]] = iou(&gt[t][g], pm)?;
                    }
                }
                let a = solve_assignment(&w, Objective::Maximize)?;
                for (r, &g) in rows.iter().enumerate() {
                    gt_to_pred[t][g] = a.row_to_col[r];
                }
            }
        }
        Protocol::Sequence => {
            let n_pred = num_objects(pred);
            let mut w = ndarray::Array2::<f64>::zeros((n_gt, n_pred));
            for g in 0..n_gt {
                let mut count = 0usize;
                for t in 0..gt.len() {
                    let Some(gm) = present(gt, t, g) else { continue };
                    count += 1;
                    for p in 0..pred[t].len() {
                        w[[g, p]] += iou(gm, &pred[t][p])?;
                    }
                }
                if count > 0 {
                    w.row_mut(g).mapv_inplace(|x| x / count as f64);
                }
            }
            let a = solve_assignment(&w, Objective::Maximize)?;
            for row in &mut gt_to_pred {
                row.copy_from_slice(&a.row_to_col);
            }
        }
    }
    Ok(ProtocolMatch { gt_to_pred })
}

/// Pooled mean of `metric` over every present (GT object, frame) term.
fn pooled(
    pred: &[Vec<Mask>],
    gt: &[Vec<Mask>],
    matching: &ProtocolMatch,
    metric: impl Fn(&Mask, &Mask) -> Result<f64>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..gt.len() {
        for (g, slot) in matching.gt_to_pred[t].iter().enumerate() {
            let Some(gm) = present(gt, t, g) else { continue };
            let blank;
            let pm = match slot.and_then(|p| pred[t].get(p)) {
                Some(pm) => pm,
                None => {
                    blank = Mask::empty_like(gm);
                    &blank
                }
            };
            sum += metric(pm, gm)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("ground truth contains no objects".into()));
    }
    Ok(sum / count as f64)
}

/// Region similarity: mean IoU of matched pairs.
pub fn j_measure(pred: &[Vec<Mask>], gt: &[Vec<Mask>], protocol: Protocol) -> Result<f64> {
    let m = hungarian_protocol_match(pred, gt, protocol)?;
    pooled(pred, gt, &m, iou)
}

/// Boundary accuracy: mean boundary F-score of matched pairs.
pub fn f_measure(pred: &[Vec<Mask>], gt: &[Vec<Mask>], protocol: Protocol) -> Result<f64> {
    let m = hungarian_protocol_match(pred, gt, protocol)?;
    pooled(pred, gt, &m, boundary_f)
}

/// One-pixel boundary map: a pixel is on the boundary when it differs from
/// its right, lower or lower-right neighbour (outside the frame reads as 0).
pub fn seg2bmap(m: &Mask) -> Mask {
    let (h, w) = m.dims();
    let at = |x: usize, y: usize| x < w && y < h && m.get(x, y);
    Mask::from_fn(h, w, |x, y| {
        let c = m.get(x, y);
        let (e, s, se) = (at(x + 1, y), at(x, y + 1), at(x + 1, y + 1));
        let last_row = y + 1 == h;
        let last_col = x + 1 == w;
        match (last_row, last_col) {
            (true, true) => false,
            (true, false) => c != e,
            (false, true) => c != s,
            (false, false) => c != e || c != s || c != se,
        }
    })
    .expect("dimensions come from an existing mask")
}

/// Tolerance radius for boundary matching on an `h × w` frame.
pub fn boundary_radius(h: usize, w: usize) -> usize {
    (0.008 * ((h * h + w * w) as f64).sqrt()).ceil() as usize
}

/// Dilation by the discrete disk `{(dx, dy) : dx² + dy² ≤ r²}`.
pub fn dilate_disk(m: &Mask, r: usize) -> Mask {
    let (h, w) = m.dims();
    let r = r as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = Mask::empty_like(m);
    for (x, y) in m.iter_ones() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

/// Boundary F-score of one predicted mask against one GT mask.
pub fn boundary_f(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let r = boundary_radius(gt.height(), gt.width());
    let pb = seg2bmap(pred);
    let gb = seg2bmap(gt);
    let (n_p, n_g) = (pb.area(), gb.area());
    let (precision, recall) = match (n_p, n_g) {
        (0, 0) => (1.0, 1.0),
        (0, _) => (1.0, 0.0),
        (_, 0) => (0.0, 1.0),
        _ => {
            let p_hit = pb.intersection_area(&dilate_disk(&gb, r))?;
            let g_hit = gb.intersection_area(&dilate_disk(&pb, r))?;
            (p_hit as f64 / n_p as f64, g_hit as f64 / n_g as f64)
        }
    };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceScores {
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "JF")]
    pub jf: f64,
}

/// J, F and their mean under one shared matching.
pub fn evaluate_sequence(pred: &[Vec<Mask>], gt: &[Vec<Mask>], protocol: Protocol) -> Result<SequenceScores> {
    let m = hungarian_protocol_match(pred, gt, protocol)?;
    let j = pooled(pred, gt, &m, iou)?;
    let f = pooled(pred, gt, &m, boundary_f)?;
    Ok(SequenceScores { j, f, jf: (j + f) / 2.0 })
}

/// τ = 0.50, 0.55, …, 0.95.
pub fn default_sr_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrReport {
    pub thresholds: Vec<f64>,
    pub rates: Vec<f64>,
    pub mean: f64,
    pub frames_evaluated: usize,
}

/// Detection success rate: the box around the union of predicted masks must
/// reach IoU `τ` with the GT box. Frames lacking a GT box are skipped.
pub fn moca_sr(pred: &[Vec<Mask>], gt_boxes: &BTreeMap<usize, BBox>, thresholds: &[f64]) -> Result<SrReport> {
    if thresholds.is_empty() {
        return Err(Error::Parameter("no SR thresholds given".into()));
    }
    if let Some(&t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Parameter(format!("SR threshold {t} outside [0, 1]")));
    }
    if let Some((&f, _)) = gt_boxes.range(pred.len()..).next() {
        return Err(Error::InvalidInput(format!(
            "GT box for frame {f} but only {} predicted frames",
            pred.len()
        )));
    }
    let mut hits = vec![0usize; thresholds.len()];
    let mut evaluated = 0usize;
    for (t, masks) in pred.iter().enumerate() {
        let Some(gt_box) = gt_boxes.get(&t) else {
            log::warn!("no ground-truth box for frame {t}; skipped");
            continue;
        };
        evaluated += 1;
        let mut union: Option<Mask> = None;
        for m in masks {
            match &mut union {
                None => union = Some(m.clone()),
                Some(u) => u.union_assign(m)?,
            }
        }
        let Some(u) = union.filter(|u| !u.is_empty()) else { continue };
        let score = bbox_iou(&tight_bbox(&u)?, gt_box);
        for (k, &tau) in thresholds.iter().enumerate() {
            if score >= tau {
                hits[k] += 1;
            }
        }
    }
    let rates: Vec<f64> = hits
        .iter()
        .map(|&h| if evaluated == 0 { 0.0 } else { h as f64 / evaluated as f64 })
        .collect();
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(SrReport {
        thresholds: thresholds.to_vec(),
        rates,
        mean,
        frames_evaluated: evaluated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub per_sequence: BTreeMap<String, SequenceScores>,
    pub aggregate: SequenceScores,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sr: BTreeMap<String, SrReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_sr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvalReport {
    /// Aggregates are plain means over sequences.
    pub fn new(protocol: Protocol, per_sequence: BTreeMap<String, SequenceScores>, sr: BTreeMap<String, SrReport>) -> Self {
        let n = per_sequence.len().max(1) as f64;
        let j = per_sequence.values().map(|s| s.j).sum::<f64>() / n;
        let f = per_sequence.values().map(|s| s.f).sum::<f64>() / n;
        let mean_sr = (!sr.is_empty()).then(|| sr.values().map(|r| r.mean).sum::<f64>() / sr.len() as f64);
        EvalReport {
            protocol,
            per_sequence,
            aggregate: SequenceScores { j, f, jf: (j + f) / 2.0 },
            sr,
            mean_sr,
            config_hash: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_f: 0.01,
            lambda_m: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_f", self.lambda_f), ("lambda_m", self.lambda_m)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Parameter(format!("{name} = {v} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// Per-pixel foreground probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ProbMask {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Length {
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(ProbMask { height, width, data })
    }

    pub fn uniform(height: usize, width: usize, p: f64) -> Self {
        ProbMask {
            height,
            width,
            data: vec![p; height * width],
        }
    }

    /// 1 on set pixels, 0 elsewhere.
    pub fn from_mask(m: &Mask) -> Self {
        let mut data = vec![0.0; m.height() * m.width()];
        for (x, y) in m.iter_ones() {
            data[y * m.width() + x] = 1.0;
        }
        ProbMask {
            height: m.height(),
            width: m.width(),
            data,
        }
    }
}

pub const BCE_EPS: f64 = 1e-7;

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Binary cross-entropy; the log argument is floored at `BCE_EPS`.
pub fn bce(p: f64, target: bool) -> Result<f64> {
    check_prob(p)?;
    let q = if target { p } else { 1.0 - p };
    Ok(-q.max(BCE_EPS).ln())
}

fn mask_bce(pred: &ProbMask, gt: &Mask) -> Result<f64> {
    if (pred.height, pred.width) != gt.dims() {
        return Err(Error::Shape {
            expected: gt.dims(),
            found: (pred.height, pred.width),
        });
    }
    let mut sum = 0.0;
    for (i, &p) in pred.data.iter().enumerate() {
        sum += bce(p, gt.get(i % pred.width, i / pred.width))?;
    }
    Ok(sum / pred.data.len() as f64)
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Length { expected, found });
    }
    Ok(())
}

fn flowi_terms(
    pred_masks: &[ProbMask],
    pred_fious: &[f64],
    gt_masks: &[Mask],
    gt_fious: &[f64],
    w: &LossWeights,
) -> Result<Vec<f64>> {
    w.validate()?;
    let n = pred_masks.len();
    if n == 0 {
        return Err(Error::InvalidInput("loss needs at least one prediction".into()));
    }
    check_len(n, pred_fious.len())?;
    check_len(n, gt_masks.len())?;
    check_len(n, gt_fious.len())?;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        check_prob(pred_fious[i])?;
        check_prob(gt_fious[i])?;
        let d = pred_fious[i] - gt_fious[i];
        terms.push(mask_bce(&pred_masks[i], &gt_masks[i])? + w.lambda_f * d * d);
    }
    Ok(terms)
}

/// Mask BCE plus `lambda_f`-weighted squared fIoU error, averaged over items.
pub fn loss_flowi(
    pred_masks: &[ProbMask],
    pred_fious: &[f64],
    gt_masks: &[Mask],
    gt_fious: &[f64],
    w: &LossWeights,
) -> Result<f64> {
    let terms = flowi_terms(pred_masks, pred_fious, gt_masks, gt_fious, w)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// [`loss_flowi`] plus `lambda_m`-weighted BCE on the moving-object score.
#[allow(clippy::too_many_arguments)]
pub fn loss_flowp(
    pred_masks: &[ProbMask],
    pred_fious: &[f64],
    pred_mos: &[f64],
    gt_masks: &[Mask],
    gt_fious: &[f64],
    gt_mos: &[bool],
    w: &LossWeights,
) -> Result<f64> {
    let mut terms = flowi_terms(pred_masks, pred_fious, gt_masks, gt_fious, w)?;
    check_len(terms.len(), pred_mos.len())?;
    check_len(terms.len(), gt_mos.len())?;
    for (i, t) in terms.iter_mut().enumerate() {
        *t += w.lambda_m * bce(pred_mos[i], gt_mos[i])?;
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}
