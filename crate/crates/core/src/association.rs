//! Sequence-level association.
//!
//! Tracks start from the first frame's selection. At every later frame each
//! object either takes its Hungarian-matched frame-level mask ("update") or
//! the previous sequence mask warped forward by flow ("propagate"). The
//! choice is driven by a transitivity check: the warped masks, the current
//! predictions and each flow-aligned neighbouring prediction are matched
//! pairwise, and object `i` counts as consistent for a neighbour when the
//! direct match and the match routed through the neighbour agree. Objects
//! consistent for at least half of the available neighbours are updated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assign::{solve_assignment, Objective};
use crate::error::{Error, Result};
use crate::flowio::{warp_mask, FlowField, FlowSource};
use crate::frame::FrameMasks;
use crate::mask::{iou_matrix, layer_masks, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssocMode {
    TemporalConsistency,
    HungarianOnly,
    PropagationOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssocConfig {
    /// Neighbour offsets checked for consistency.
    pub deltas: Vec<i32>,
    pub mode: AssocMode,
    /// Forces every consistency flag to this value (ablation hook).
    pub flag_override: Option<bool>,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            deltas: vec![1, 2, -1, -2],
            mode: AssocMode::TemporalConsistency,
            flag_override: None,
        }
    }
}

impl AssocConfig {
    pub fn with_mode(mode: AssocMode) -> Self {
        AssocConfig {
            mode,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &d) in self.deltas.iter().enumerate() {
            if d == 0 {
                return Err(Error::Parameter("association delta 0 is not allowed".into()));
            }
            if self.deltas[..i].contains(&d) {
                return Err(Error::Parameter(format!("duplicate association delta {d}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Update,
    Propagate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub object: usize,
    pub per_delta: BTreeMap<i32, bool>,
    pub mean: f64,
    pub decision: Decision,
}

/// Identity-consistent masks: `frames[t][i]` is object `i` at frame `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTracks {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<Mask>>,
    /// `layer_order[i]` is object `i`'s depth rank, 0 in front.
    pub layer_order: Vec<usize>,
}

impl SequenceTracks {
    pub fn num_objects(&self) -> usize {
        self.layer_order.len()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Object indices from front to back.
    pub fn draw_order(&self) -> Vec<usize> {
        draw_order(&self.layer_order)
    }
}

fn draw_order(layer_order: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..layer_order.len()).collect();
    idx.sort_by_key(|&i| (layer_order[i], i));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub masks: Vec<Mask>,
    pub records: Vec<ConsistencyRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub tracks: SequenceTracks,
    /// `decisions[t]` holds one record per object; empty for frame 0.
    pub decisions: Vec<Vec<ConsistencyRecord>>,
}

fn check_all_dims<'a>(lists: impl IntoIterator<Item = &'a [Mask]>) -> Result<Option<(usize, usize)>> {
    let mut dims = None;
    for list in lists {
        for m in list {
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
    }
    Ok(dims)
}

fn max_iou_matching(a: &[Mask], b: &[Mask]) -> Result<Vec<Option<usize>>> {
    Ok(solve_assignment(&iou_matrix(a, b)?, Objective::Maximize)?.row_to_col)
}

/// Three pairwise max-IoU matchings over `m1`, `m2`, `m3`.
///
/// `m3` is first aligned to `m2`'s indices (an `m2` entry left without a
/// partner gets an empty placeholder). Returns `m2` reordered to `m1`'s
/// indices and, per `m1` entry, whether matching it to `m2` directly agrees
/// with matching it through the aligned `m3`. `m1` entries without an `m2`
/// partner get an empty mask and flag `false`.
pub fn threeway_hungarian(m1: &[Mask], m2: &[Mask], m3: &[Mask]) -> Result<(Vec<Mask>, Vec<bool>)> {
    let Some((h, w)) = check_all_dims([m1, m2, m3])? else {
        return Ok((Vec::new(), Vec::new()));
    };
    let blank = Mask::empty(h, w)?;

    let idx_23 = max_iou_matching(m2, m3)?;
    let m3_aligned: Vec<Mask> = idx_23
        .iter()
        .map(|c| c.map_or_else(|| blank.clone(), |c| m3[c].clone()))
        .collect();
    let idx_13 = max_iou_matching(m1, &m3_aligned)?;
    let idx_12 = max_iou_matching(m1, m2)?;

    let aligned = idx_12
        .iter()
        .map(|c| c.map_or_else(|| blank.clone(), |c| m2[c].clone()))
        .collect();
    let flags = idx_12
        .iter()
        .zip(&idx_13)
        .map(|(a, b)| a.is_some() && a == b)
        .collect();
    Ok((aligned, flags))
}

/// Warps every object of `pred_at` through a chain of flow fields ending at
/// `target_frame`. Scores and ranks are carried over unchanged.
pub fn neighbor_align(pred_at: &FrameMasks, flows: &[FlowField], target_frame: usize) -> Result<FrameMasks> {
    if flows.is_empty() {
        return Err(Error::missing(
            format!("flow chain {} -> {}", pred_at.frame_index, target_frame),
            "no flow fields supplied",
        ));
    }
    let mut at = pred_at.frame_index as i64;
    for f in flows {
        if f.source_frame as i64 != at {
            return Err(Error::InvalidInput(format!(
                "flow chain broken: field starts at frame {}, expected {at}",
                f.source_frame
            )));
        }
        at = f.target_frame();
    }
    if at != target_frame as i64 {
        return Err(Error::InvalidInput(format!(
            "flow chain ends at frame {at}, expected {target_frame}"
        )));
    }
    let mut out = pred_at.clone();
    out.frame_index = target_frame;
    for o in &mut out.objects {
        for f in flows {
            o.mask = warp_mask(&o.mask, f)?;
        }
    }
    Ok(out)
}

/// One autoregressive step from frame `t - 1` to `t`.
///
/// `prev` are the sequence masks at `t - 1`, `flow` the gap +1 field at
/// `t - 1`, `neighbors` frame-level predictions already aligned to `t`,
/// keyed by offset. `layer_order` decides who owns overlapping pixels.
pub fn temporal_consistency_step(
    prev: &[Mask],
    flow: Option<&FlowField>,
    current: &FrameMasks,
    neighbors: &BTreeMap<i32, FrameMasks>,
    layer_order: &[usize],
    cfg: &AssocConfig,
) -> Result<StepOutput> {
    cfg.validate()?;
    if layer_order.len() != prev.len() {
        return Err(Error::InvalidInput(format!(
            "{} layer ranks for {} objects",
            layer_order.len(),
            prev.len()
        )));
    }
    if prev.is_empty() {
        return Ok(StepOutput {
            masks: Vec::new(),
            records: Vec::new(),
        });
    }
    let current_masks = current.masks();
    check_all_dims([prev, current_masks.as_slice()])?;

    let warped: Vec<Mask> = match flow {
        Some(f) => {
            if f.gap != 1 {
                return Err(Error::Parameter(format!(
                    "propagation needs the gap +1 flow, got gap {}",
                    f.gap
                )));
            }
            prev.iter().map(|m| warp_mask(m, f)).collect::<Result<_>>()?
        }
        None if cfg.mode == AssocMode::HungarianOnly => prev.to_vec(),
        None => {
            return Err(Error::missing(
                format!(
                    "flow/gap_1/{:05}.flo",
                    current.frame_index.saturating_sub(1)
                ),
                "propagation requires forward flow",
            ))
        }
    };

    let (matched, _) = threeway_hungarian(&warped, &current_masks, &[])?;
    let n = prev.len();
    let mut per_delta: Vec<BTreeMap<i32, bool>> = vec![BTreeMap::new(); n];
    let means: Vec<f64> = match cfg.mode {
        AssocMode::PropagationOnly => vec![0.0; n],
        AssocMode::HungarianOnly => vec![1.0; n],
        AssocMode::TemporalConsistency => {
            let mut votes = vec![0usize; n];
            let mut available = 0usize;
            for &d in &cfg.deltas {
                let Some(nb) = neighbors.get(&d) else { continue };
                available += 1;
                let (_, flags) = threeway_hungarian(&warped, &current_masks, &nb.masks())?;
                for (i, &c) in flags.iter().enumerate() {
                    let c = cfg.flag_override.unwrap_or(c);
                    per_delta[i].insert(d, c);
                    votes[i] += c as usize;
                }
            }
            match cfg.flag_override {
                Some(forced) => vec![if forced { 1.0 } else { 0.0 }; n],
                // no neighbour evidence at all: keep identity by propagating
                None if available == 0 => vec![0.0; n],
                None => votes.iter().map(|&v| v as f64 / available as f64).collect(),
            }
        }
    };

    let mut masks = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let decision = if means[i] >= 0.5 {
            Decision::Update
        } else {
            Decision::Propagate
        };
        masks.push(match decision {
            Decision::Update => matched[i].clone(),
            Decision::Propagate => warped[i].clone(),
        });
        records.push(ConsistencyRecord {
            object: i,
            per_delta: std::mem::take(&mut per_delta[i]),
            mean: means[i],
            decision,
        });
    }
    layer_masks(&mut masks, &draw_order(layer_order))?;
    Ok(StepOutput { masks, records })
}

/// Fields carrying frame `from` to frame `to`: the direct field when
/// present, else a chain of unit-gap fields.
fn flow_chain(flows: &dyn FlowSource, from: usize, to: usize) -> Result<Vec<FlowField>> {
    let gap = to as i64 - from as i64;
    if let Some(f) = flows.flow(from, gap as i32)? {
        return Ok(vec![f]);
    }
    let step = gap.signum();
    let mut chain = Vec::new();
    let mut at = from as i64;
    while at != to as i64 {
        match flows.flow(at as usize, step as i32)? {
            Some(f) => chain.push(f),
            None => {
                return Err(Error::missing(
                    flows.describe(from, gap as i32),
                    "no direct or chained flow available",
                ))
            }
        }
        at += step;
    }
    Ok(chain)
}

/// Links frame-level predictions into tracks.
///
/// The object count is fixed by the first frame. Offsets pointing outside
/// the sequence are skipped and the consistency mean is taken over the rest.
pub fn associate_sequence(frames: &[FrameMasks], flows: &dyn FlowSource, cfg: &AssocConfig) -> Result<AssociationResult> {
    cfg.validate()?;
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot associate an empty sequence".into()))?;
    let dims = first.dims();
    for f in frames {
        if f.dims() != dims {
            return Err(Error::Shape {
                expected: dims,
                found: f.dims(),
            });
        }
    }
    let n = first.len();
    if n == 0 {
        log::warn!("first frame has no objects; tracks will be empty");
    }
    let layer_order: Vec<usize> = (0..n).collect();
    let mut tracks = SequenceTracks {
        height: dims.0,
        width: dims.1,
        frames: vec![first.masks()],
        layer_order,
    };
    let mut decisions = vec![Vec::new()];
    let num_frames = frames.len();

    for t in 1..num_frames {
        let mut current = frames[t].clone();
        current.frame_index = t;
        if n == 0 {
            tracks.frames.push(Vec::new());
            decisions.push(Vec::new());
            continue;
        }
        let flow = flows.flow(t - 1, 1)?;
        if flow.is_none() && cfg.mode != AssocMode::HungarianOnly {
            return Err(Error::missing(flows.describe(t - 1, 1), "propagation requires forward flow"));
        }

        let mut neighbors = BTreeMap::new();
        if cfg.mode == AssocMode::TemporalConsistency {
            for &d in &cfg.deltas {
                let s = t as i64 + d as i64;
                if s < 0 || s >= num_frames as i64 {
                    continue;
                }
                let s = s as usize;
                let chain = flow_chain(flows, s, t)?;
                let mut at = frames[s].clone();
                at.frame_index = s;
                neighbors.insert(d, neighbor_align(&at, &chain, t)?);
            }
        }

        let step = temporal_consistency_step(
            tracks.frames.last().expect("frame 0 is always present"),
            flow.as_ref(),
            &current,
            &neighbors,
            &tracks.layer_order,
            cfg,
        )?;
        tracks.frames.push(step.masks);
        decisions.push(step.records);
    }
    Ok(AssociationResult { tracks, decisions })
}
