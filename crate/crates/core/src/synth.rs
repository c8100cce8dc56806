//! Seeded synthetic scenes: moving shapes with exact flow, plus controlled
//! prediction corruptions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::SequenceTracks;
use crate::bbox::{tight_bbox, BBox};
use crate::error::{Error, Result};
use crate::flowio::{FlowField, FlowGapSet, FlowStore};
use crate::frame::{FrameMasks, ScoredMask};
use crate::mask::{iou, layer_masks, Mask};
use crate::selection::CandidateSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// (height, width) of the bounding box.
    pub size: (usize, usize),
    /// Top-left corner (x, y) at frame 0.
    pub origin: (i64, i64),
    /// Pixels per frame, (x, y).
    pub velocity: (i32, i32),
    /// Smaller is nearer the camera.
    pub depth: u32,
}

impl ObjectSpec {
    fn covers(&self, t: usize, x: i64, y: i64) -> bool {
        let (h, w) = (self.size.0 as i64, self.size.1 as i64);
        let ox = self.origin.0 + self.velocity.0 as i64 * t as i64;
        let oy = self.origin.1 + self.velocity.1 as i64 * t as i64;
        let (lx, ly) = (x - ox, y - oy);
        if lx < 0 || ly < 0 || lx >= w || ly >= h {
            return false;
        }
        match self.shape {
            Shape::Rect => true,
            Shape::Ellipse => {
                // integer form of ((2lx+1-w)/w)^2 + ((2ly+1-h)/h)^2 <= 1
                let dx = 2 * lx + 1 - w;
                let dy = 2 * ly + 1 - h;
                dx * dx * h * h + dy * dy * w * w <= w * w * h * h
            }
        }
    }

    /// The unoccluded shape at frame `t`, clipped to the frame.
    pub fn raster(&self, t: usize, height: usize, width: usize) -> Result<Mask> {
        Mask::from_fn(height, width, |x, y| self.covers(t, x as i64, y as i64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub id_permute_prob: f64,
    pub dropout_prob: f64,
    pub jitter_px: u32,
    /// Probability that a flow field receives a wrong-displacement patch.
    pub flow_outlier_prob: f64,
    pub flow_outlier_radius: u32,
    /// Extra shifted copies per predicted mask, with lower scores.
    pub duplicate_candidates: usize,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            id_permute_prob: 0.0,
            dropout_prob: 0.0,
            jitter_px: 0,
            flow_outlier_prob: 0.0,
            flow_outlier_radius: 4,
            duplicate_candidates: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("id_permute_prob", self.id_permute_prob),
            ("dropout_prob", self.dropout_prob),
            ("flow_outlier_prob", self.flow_outlier_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Parameter(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub num_frames: usize,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub background_velocity: (i32, i32),
    #[serde(default)]
    pub corruption: CorruptionSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec::generate(0, 64, 96, 12, 3).expect("default scene parameters are valid")
    }
}

impl SceneSpec {
    /// Random scene whose objects each move inside a horizontal lane, so
    /// they never touch and never leave the frame.
    pub fn generate(seed: u64, height: usize, width: usize, num_frames: usize, num_objects: usize) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::Parameter("scene needs at least one frame".into()));
        }
        if num_objects > 0 && (height / num_objects < 3 || width < 8) {
            return Err(Error::Parameter(format!(
                "{height}x{width} frame too small for {num_objects} objects"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut depths: Vec<u32> = (0..num_objects as u32).collect();
        depths.shuffle(&mut rng);
        let mut objects = Vec::with_capacity(num_objects);
        for (k, &depth) in depths.iter().enumerate() {
            let lane_h = height / num_objects;
            let oh = rng.random_range((lane_h / 2).max(2)..lane_h);
            let ow = rng.random_range((width / 8).max(2)..=(width / 4).max(2));
            let oy = (k * lane_h + rng.random_range(0..=lane_h - 1 - oh)) as i64;
            let room = (width - ow) as i64;
            let max_v = if num_frames > 1 { (room / (num_frames as i64 - 1)).min(3) } else { 0 };
            let vx = rng.random_range(-max_v..=max_v);
            let span = vx.abs() * (num_frames as i64 - 1);
            let start = rng.random_range(0..=room - span);
            let ox = if vx >= 0 { start } else { start + span };
            objects.push(ObjectSpec {
                shape: if rng.random_bool(0.5) { Shape::Rect } else { Shape::Ellipse },
                size: (oh, ow),
                origin: (ox, oy),
                velocity: (vx as i32, 0),
                depth,
            });
        }
        Ok(SceneSpec {
            seed,
            height,
            width,
            num_frames,
            objects,
            background_velocity: (0, 0),
            corruption: CorruptionSpec::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.num_frames == 0 {
            return Err(Error::Parameter("scene dimensions and frame count must be positive".into()));
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.size.0 == 0 || o.size.1 == 0 {
                return Err(Error::Parameter(format!("object {k} has zero size")));
            }
        }
        if self.objects.len() > 255 {
            return Err(Error::Parameter("at most 255 objects fit a palette mask".into()));
        }
        self.corruption.validate()
    }

    /// Object indices front to back.
    pub fn depth_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.objects.len()).collect();
        idx.sort_by_key(|&k| (self.objects[k].depth, k));
        idx
    }

    fn layer_ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.objects.len()];
        for (r, k) in self.depth_order().into_iter().enumerate() {
            ranks[k] = r;
        }
        ranks
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub gt: SequenceTracks,
    pub flows: FlowStore,
}

fn raw_frames(spec: &SceneSpec) -> Result<Vec<Vec<Mask>>> {
    (0..spec.num_frames)
        .map(|t| {
            spec.objects
                .iter()
                .map(|o| o.raster(t, spec.height, spec.width))
                .collect()
        })
        .collect()
}

/// Ground-truth masks with depth occlusion and the exact flow for every
/// gap in `gaps` whose target frame exists.
pub fn render(spec: &SceneSpec, gaps: &FlowGapSet) -> Result<Rendered> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let order = spec.depth_order();
    let raw = raw_frames(spec)?;
    let mut frames = Vec::with_capacity(spec.num_frames);
    for (t, mut masks) in raw.into_iter().enumerate() {
        for (k, m) in masks.iter().enumerate() {
            if m.area() < spec.objects[k].raster_area_unclipped(t) {
                log::warn!("object {k} is clipped by the frame border at frame {t}");
            }
        }
        layer_masks(&mut masks, &order)?;
        frames.push(masks);
    }

    let mut flows = FlowStore::default();
    for t in 0..spec.num_frames {
        let owner = owner_map(&frames[t], h, w);
        for &g in gaps.gaps() {
            let target = t as i64 + g as i64;
            if target < 0 || target >= spec.num_frames as i64 {
                continue;
            }
            let field = FlowField::from_fn(h, w, g, t, |x, y| {
                let v = match owner[y * w + x] {
                    Some(k) => spec.objects[k].velocity,
                    None => spec.background_velocity,
                };
                ((v.0 * g) as f32, (v.1 * g) as f32)
            })?;
            flows.insert(field);
        }
    }
    Ok(Rendered {
        gt: SequenceTracks {
            height: h,
            width: w,
            frames,
            layer_order: spec.layer_ranks(),
        },
        flows,
    })
}

impl ObjectSpec {
    /// Area of the shape ignoring the frame border.
    fn raster_area_unclipped(&self, t: usize) -> usize {
        let (h, w) = self.size;
        let ox = self.origin.0 + self.velocity.0 as i64 * t as i64;
        let oy = self.origin.1 + self.velocity.1 as i64 * t as i64;
        let mut n = 0;
        for y in oy..oy + h as i64 {
            for x in ox..ox + w as i64 {
                n += self.covers(t, x, y) as usize;
            }
        }
        n
    }
}

fn owner_map(masks: &[Mask], h: usize, w: usize) -> Vec<Option<usize>> {
    let mut owner = vec![None; h * w];
    for (k, m) in masks.iter().enumerate() {
        for (x, y) in m.iter_ones() {
            owner[y * w + x] = Some(k);
        }
    }
    owner
}

/// Pixels where a gap +1 warp of object `k` from `t` may legitimately
/// differ from its mask at `t + 1`: the source pixel lies outside the frame
/// or is hidden at `t`, or the pixel is hidden at `t + 1`.
pub fn occlusion_affected(spec: &SceneSpec, gt: &SequenceTracks, t: usize, k: usize) -> Result<Mask> {
    if t + 1 >= gt.frames.len() || k >= spec.objects.len() {
        return Err(Error::InvalidInput(format!("no transition {t} -> {} for object {k}", t + 1)));
    }
    let o = &spec.objects[k];
    let (h, w) = (spec.height, spec.width);
    let now = &gt.frames[t][k];
    let next = &gt.frames[t + 1][k];
    let raw_next = o.raster(t + 1, h, w)?;
    let (vx, vy) = (o.velocity.0 as i64, o.velocity.1 as i64);
    Mask::from_fn(h, w, |x, y| {
        if !raw_next.get(x, y) {
            return false;
        }
        let hidden_next = !next.get(x, y);
        let (sx, sy) = (x as i64 - vx, y as i64 - vy);
        let src_outside = sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64;
        let hidden_now = !src_outside && !now.get(sx as usize, sy as usize);
        hidden_next || src_outside || hidden_now
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameCorruption {
    pub dropped: Vec<usize>,
    /// (object, dx, dy) for every nonzero shift.
    pub jitter: Vec<(usize, i64, i64)>,
    /// GT object shown at each output position.
    pub order: Vec<usize>,
    pub permuted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorruptionLog {
    pub frames: Vec<FrameCorruption>,
    /// (frame, gap) of every field that received an outlier patch.
    pub flow_outliers: Vec<(usize, i32)>,
}

/// Frame-level predictions derived from GT by dropout, translation jitter
/// and per-frame identity shuffling. Scores are the true IoU with GT.
pub fn corrupt(gt: &SequenceTracks, c: &CorruptionSpec, seed: u64) -> Result<(Vec<FrameMasks>, CorruptionLog)> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = c.jitter_px as i64;
    let draw_order = gt.draw_order();
    let mut out = Vec::with_capacity(gt.frames.len());
    let mut log = CorruptionLog::default();
    for (t, masks) in gt.frames.iter().enumerate() {
        let mut rec = FrameCorruption::default();
        let mut kept: Vec<Option<Mask>> = vec![None; masks.len()];
        for (k, m) in masks.iter().enumerate() {
            let drop = rng.random::<f64>() < c.dropout_prob;
            let (dx, dy) = (rng.random_range(-j..=j), rng.random_range(-j..=j));
            if m.is_empty() {
                continue;
            }
            if drop {
                rec.dropped.push(k);
                continue;
            }
            if dx != 0 || dy != 0 {
                rec.jitter.push((k, dx, dy));
            }
            kept[k] = Some(m.translate(dx, dy));
        }
        let ids: Vec<usize> = draw_order.iter().copied().filter(|&k| kept[k].is_some()).collect();
        let mut layered: Vec<Mask> = ids.iter().map(|&k| kept[k].take().unwrap()).collect();
        let front_first: Vec<usize> = (0..layered.len()).collect();
        layer_masks(&mut layered, &front_first)?;

        let mut entries: Vec<(usize, Mask)> = ids.into_iter().zip(layered).filter(|(_, m)| !m.is_empty()).collect();
        entries.sort_by_key(|(k, _)| *k);
        if rng.random::<f64>() < c.id_permute_prob {
            entries.shuffle(&mut rng);
            rec.permuted = true;
        }
        let mut fm = FrameMasks::new(t, gt.height, gt.width);
        for (k, m) in entries {
            let fiou = iou(&m, &masks[k])?;
            fm.objects.push(ScoredMask::new(m, fiou, None)?);
            rec.order.push(k);
        }
        fm.rerank();
        out.push(fm);
        log.frames.push(rec);
    }
    Ok((out, log))
}

/// Adds square patches of wrong displacement to randomly chosen fields.
pub fn perturb_flows(flows: &FlowStore, c: &CorruptionSpec, seed: u64) -> Result<(FlowStore, Vec<(usize, i32)>)> {
    c.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = c.flow_outlier_radius as i64;
    let mut out = FlowStore::default();
    let mut hit = Vec::new();
    for (&(frame, gap), f) in &flows.fields {
        let roll = rng.random::<f64>();
        let (cx, cy) = (rng.random_range(0..f.width()), rng.random_range(0..f.height()));
        let (ou, ov) = (rng.random_range(-4i32..=4), rng.random_range(-4i32..=4));
        if roll >= c.flow_outlier_prob || (ou == 0 && ov == 0) {
            out.insert(f.clone());
            continue;
        }
        hit.push((frame, gap));
        let (cx, cy) = (cx as i64, cy as i64);
        let patched = FlowField::from_fn(f.height(), f.width(), gap, frame, |x, y| {
            let (u, v) = f.at(x, y);
            if (x as i64 - cx).abs() <= r && (y as i64 - cy).abs() <= r {
                (u + ou as f32, v + ov as f32)
            } else {
                (u, v)
            }
        })?;
        out.insert(patched);
    }
    Ok((out, hit))
}

/// Candidate sets built from frame predictions: each mask plus
/// `duplicates` one-pixel-shifted copies scored slightly lower.
pub fn make_candidates(frames: &[FrameMasks], duplicates: usize, seed: u64) -> Result<Vec<CandidateSet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const SHIFTS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
    let mut out = Vec::with_capacity(frames.len());
    for fm in frames {
        let mut cands = Vec::new();
        for o in &fm.objects {
            cands.push(ScoredMask::new(o.mask.clone(), o.fiou, o.mos)?);
            for d in 0..duplicates {
                let (dx, dy) = SHIFTS[rng.random_range(0..SHIFTS.len())];
                let score = o.fiou * 0.9f64.powi(d as i32 + 1);
                cands.push(ScoredMask::new(o.mask.translate(dx, dy), score, o.mos)?);
            }
        }
        out.push(CandidateSet::new(fm.frame_index, fm.height, fm.width, 0, cands)?);
    }
    Ok(out)
}

/// Tight box around the union of GT objects per frame; frames where
/// nothing is visible get no box.
pub fn gt_boxes(gt: &SequenceTracks) -> Result<Vec<Option<BBox>>> {
    gt.frames
        .iter()
        .map(|masks| {
            let mut u = Mask::empty(gt.height, gt.width)?;
            for m in masks {
                u.union_assign(m)?;
            }
            if u.is_empty() {
                Ok(None)
            } else {
                tight_bbox(&u).map(Some)
            }
        })
        .collect()
}

/// A rendered scene together with its corrupted predictions and flows.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub gt: SequenceTracks,
    pub clean_flows: FlowStore,
    pub flows: FlowStore,
    pub predictions: Vec<FrameMasks>,
    pub log: CorruptionLog,
}

/// Renders `spec` and applies its corruption, seeding both prediction and
/// flow corruption from `spec.seed`.
pub fn realize(spec: &SceneSpec, gaps: &FlowGapSet) -> Result<Realized> {
    let Rendered { gt, flows: clean_flows } = render(spec, gaps)?;
    let (predictions, mut log) = corrupt(&gt, &spec.corruption, spec.seed)?;
    let (flows, hit) = perturb_flows(&clean_flows, &spec.corruption, spec.seed)?;
    log.flow_outliers = hit;
    Ok(Realized {
        gt,
        clean_flows,
        flows,
        predictions,
        log,
    })
}

/// Seeded scenes with identity shuffles, dropouts, jitter and flow
/// outliers, used to compare association modes.
pub fn ablation_benchmark() -> Vec<SceneSpec> {
    (0..8u64)
        .map(|i| {
            let mut s = SceneSpec::generate(1000 + i, 60, 80, 20, 3 + (i as usize % 2))
                .expect("benchmark scene parameters are valid");
            s.corruption = CorruptionSpec {
                id_permute_prob: 0.5,
                dropout_prob: 0.1,
                jitter_px: 0,
                flow_outlier_prob: 0.5,
                flow_outlier_radius: 16,
                duplicate_candidates: 0,
            };
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowio::warp_mask;

    fn rect_obj(size: (usize, usize), origin: (i64, i64), velocity: (i32, i32), depth: u32) -> ObjectSpec {
        ObjectSpec {
            shape: Shape::Rect,
            size,
            origin,
            velocity,
            depth,
        }
    }

    fn scene(objects: Vec<ObjectSpec>, frames: usize) -> SceneSpec {
        SceneSpec {
            seed: 1,
            height: 20,
            width: 30,
            num_frames: frames,
            objects,
            background_velocity: (0, 0),
            corruption: CorruptionSpec::default(),
        }
    }

    #[test]
    fn static_scene() {
        let s = scene(vec![rect_obj((4, 5), (3, 3), (0, 0), 0)], 4);
        let r = render(&s, &FlowGapSet::default()).unwrap();
        for t in 1..4 {
            assert_eq!(r.gt.frames[t], r.gt.frames[0]);
        }
        for f in r.flows.fields.values() {
            assert!(f.u().iter().chain(f.v()).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn moving_rect_warps_exactly() {
        let s = scene(vec![rect_obj((4, 5), (1, 3), (2, 0), 0)], 6);
        let r = render(&s, &FlowGapSet::default()).unwrap();
        for t in 0..5 {
            let f = r.flows.get(t, 1).unwrap();
            assert_eq!(warp_mask(&r.gt.frames[t][0], f).unwrap(), r.gt.frames[t + 1][0]);
        }
        let g2 = r.flows.get(3, -2).unwrap();
        assert_eq!(warp_mask(&r.gt.frames[3][0], g2).unwrap(), r.gt.frames[1][0]);
        assert!(r.flows.get(0, -1).is_none());
    }

    #[test]
    fn crossing_objects_respect_depth() {
        let s = scene(
            vec![rect_obj((6, 6), (0, 5), (3, 0), 1), rect_obj((6, 6), (20, 6), (-3, 0), 0)],
            8,
        );
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let mut overlapped = false;
        for (t, masks) in r.gt.frames.iter().enumerate() {
            assert!(masks[0].is_disjoint(&masks[1]).unwrap());
            let raw0 = s.objects[0].raster(t, 20, 30).unwrap();
            let raw1 = s.objects[1].raster(t, 20, 30).unwrap();
            let both = raw0.intersection(&raw1).unwrap();
            overlapped |= !both.is_empty();
            for (x, y) in both.iter_ones() {
                assert!(masks[1].get(x, y) && !masks[0].get(x, y));
            }
        }
        assert!(overlapped);
        assert_eq!(r.gt.layer_order, vec![1, 0]);
    }

    #[test]
    fn warp_matches_outside_occlusion() {
        let mut s = scene(
            vec![
                rect_obj((6, 6), (0, 5), (3, 0), 1),
                ObjectSpec {
                    shape: Shape::Ellipse,
                    size: (7, 9),
                    origin: (22, 4),
                    velocity: (-3, 1),
                    depth: 0,
                },
            ],
            8,
        );
        s.background_velocity = (1, 0);
        let r = render(&s, &FlowGapSet::default()).unwrap();
        for t in 0..7 {
            let f = r.flows.get(t, 1).unwrap();
            for k in 0..2 {
                let warped = warp_mask(&r.gt.frames[t][k], f).unwrap();
                let skip = occlusion_affected(&s, &r.gt, t, k).unwrap();
                let diff = warped
                    .difference(&r.gt.frames[t + 1][k])
                    .unwrap()
                    .union(&r.gt.frames[t + 1][k].difference(&warped).unwrap())
                    .unwrap();
                assert!(diff.difference(&skip).unwrap().is_empty(), "t={t} k={k}");
            }
        }
    }

    #[test]
    fn ellipse_is_symmetric() {
        let o = ObjectSpec {
            shape: Shape::Ellipse,
            size: (7, 9),
            origin: (0, 0),
            velocity: (0, 0),
            depth: 0,
        };
        let m = o.raster(0, 7, 9).unwrap();
        for (x, y) in m.iter_ones() {
            assert!(m.get(8 - x, y) && m.get(x, 6 - y));
        }
        assert!(m.get(4, 0) && !m.get(0, 0));
    }

    #[test]
    fn generated_scenes_stay_inside() {
        for seed in 0..20 {
            let s = SceneSpec::generate(seed, 48, 64, 15, 4).unwrap();
            let r = render(&s, &FlowGapSet::default()).unwrap();
            for masks in &r.gt.frames {
                for (k, m) in masks.iter().enumerate() {
                    assert_eq!(m.area(), s.objects[k].raster_area_unclipped(0));
                }
            }
        }
    }

    #[test]
    fn generate_is_deterministic() {
        assert_eq!(SceneSpec::generate(7, 48, 64, 10, 3).unwrap(), SceneSpec::generate(7, 48, 64, 10, 3).unwrap());
        assert_ne!(SceneSpec::generate(7, 48, 64, 10, 3).unwrap(), SceneSpec::generate(8, 48, 64, 10, 3).unwrap());
        assert!(SceneSpec::generate(0, 5, 64, 10, 3).is_err());
    }

    #[test]
    fn zero_corruption_is_identity() {
        let s = SceneSpec::generate(3, 48, 64, 6, 3).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let (frames, log) = corrupt(&r.gt, &CorruptionSpec::default(), 9).unwrap();
        for (t, fm) in frames.iter().enumerate() {
            assert_eq!(fm.masks(), r.gt.frames[t]);
            assert!(fm.objects.iter().all(|o| o.fiou == 1.0));
            assert_eq!(log.frames[t].order, vec![0, 1, 2]);
        }
    }

    #[test]
    fn permute_only_scrambles_order() {
        let s = SceneSpec::generate(3, 48, 64, 10, 4).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let c = CorruptionSpec {
            id_permute_prob: 1.0,
            ..Default::default()
        };
        let (frames, log) = corrupt(&r.gt, &c, 5).unwrap();
        let mut scrambled = 0;
        for (t, fm) in frames.iter().enumerate() {
            let order = &log.frames[t].order;
            for (i, &k) in order.iter().enumerate() {
                assert_eq!(fm.objects[i].mask, r.gt.frames[t][k]);
            }
            scrambled += (order != &vec![0, 1, 2, 3]) as usize;
        }
        assert!(scrambled >= 5);
    }

    #[test]
    fn dropout_is_logged() {
        let s = SceneSpec::generate(3, 48, 64, 10, 3).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let c = CorruptionSpec {
            dropout_prob: 0.2,
            ..Default::default()
        };
        let (frames, log) = corrupt(&r.gt, &c, 11).unwrap();
        let (again, _) = corrupt(&r.gt, &c, 11).unwrap();
        assert_eq!(frames, again);
        assert!(log.frames.iter().any(|f| !f.dropped.is_empty()));
        for (t, fm) in frames.iter().enumerate() {
            let rec = &log.frames[t];
            assert_eq!(fm.len() + rec.dropped.len(), 3);
            for (i, &k) in rec.order.iter().enumerate() {
                assert!(!rec.dropped.contains(&k));
                assert_eq!(fm.objects[i].mask, r.gt.frames[t][k]);
            }
        }
    }

    #[test]
    fn jitter_bounded_and_scored() {
        let s = SceneSpec::generate(4, 48, 64, 5, 3).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let c = CorruptionSpec {
            jitter_px: 2,
            ..Default::default()
        };
        let (frames, log) = corrupt(&r.gt, &c, 1).unwrap();
        for (t, rec) in log.frames.iter().enumerate() {
            for &(_, dx, dy) in &rec.jitter {
                assert!(dx.abs() <= 2 && dy.abs() <= 2);
            }
            for (i, &k) in rec.order.iter().enumerate() {
                let o = &frames[t].objects[i];
                assert_eq!(o.fiou, iou(&o.mask, &r.gt.frames[t][k]).unwrap());
            }
        }
    }

    #[test]
    fn flow_outliers_change_logged_fields_only() {
        let s = SceneSpec::generate(4, 48, 64, 6, 3).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let c = CorruptionSpec {
            flow_outlier_prob: 0.5,
            ..Default::default()
        };
        let (noisy, hit) = perturb_flows(&r.flows, &c, 2).unwrap();
        assert!(!hit.is_empty());
        for (key, f) in &r.flows.fields {
            assert_eq!(f == &noisy.fields[key], !hit.contains(key));
        }
    }

    #[test]
    fn duplicates_have_lower_scores() {
        let s = SceneSpec::generate(4, 48, 64, 2, 2).unwrap();
        let r = render(&s, &FlowGapSet::default()).unwrap();
        let (frames, _) = corrupt(&r.gt, &CorruptionSpec::default(), 0).unwrap();
        let sets = make_candidates(&frames, 2, 0).unwrap();
        assert_eq!(sets[0].candidates.len(), 6);
        assert!(sets[0].candidates[1].fiou < sets[0].candidates[0].fiou);
    }

    #[test]
    fn boxes_cover_union() {
        let s = scene(vec![rect_obj((2, 2), (1, 1), (0, 0), 0), rect_obj((3, 3), (10, 10), (0, 0), 1)], 1);
        let r = render(&s, &FlowGapSet::default()).unwrap();
        assert_eq!(gt_boxes(&r.gt).unwrap()[0], Some(BBox::new(1, 1, 13, 13).unwrap()));
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let s = ablation_benchmark().remove(0);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&j).unwrap(), s);
    }
}
