//! Frame-level mask selection: score-guided NMS, top-n retention and
//! front-to-back layering of candidate masks, plus combination of two
//! predictors and the per-prompt training targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameMasks, ScoredMask};
use crate::mask::{iou, Mask};

/// A point prompt in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

/// Raw per-prompt candidates for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub candidates: Vec<ScoredMask>,
    /// Prompts per grid side that produced the candidates (10 or 20 usually).
    pub grid_side: usize,
}

impl CandidateSet {
    pub fn new(frame_index: usize, height: usize, width: usize, grid_side: usize, candidates: Vec<ScoredMask>) -> Result<Self> {
        for c in &candidates {
            if c.mask.dims() != (height, width) {
                return Err(Error::Shape {
                    expected: (height, width),
                    found: c.mask.dims(),
                });
            }
        }
        Ok(CandidateSet {
            frame_index,
            height,
            width,
            candidates,
            grid_side,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Rank by predicted fIoU alone.
    Fiou,
    /// Rank by `(mos + fiou) / 2`, falling back to fIoU when MOS is absent.
    MeanFiouMos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub nms_iou_threshold: f64,
    pub top_n: usize,
    pub score_mode: ScoreMode,
    /// Candidates scoring strictly below this are dropped before NMS.
    pub score_floor: f64,
}

impl SelectionConfig {
    /// Flow-only predictor: top 5 by fIoU.
    pub fn flow_only() -> Self {
        SelectionConfig {
            nms_iou_threshold: 0.5,
            top_n: 5,
            score_mode: ScoreMode::Fiou,
            score_floor: 0.0,
        }
    }

    /// RGB predictor with flow prompts: top 10 by mean of fIoU and MOS.
    pub fn rgb_flow_prompt() -> Self {
        SelectionConfig {
            top_n: 10,
            score_mode: ScoreMode::MeanFiouMos,
            ..Self::flow_only()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold <= 1.0) {
            return Err(Error::Parameter(format!(
                "nms_iou_threshold {} outside (0, 1]",
                self.nms_iou_threshold
            )));
        }
        if self.top_n == 0 {
            return Err(Error::Parameter("top_n must be positive".into()));
        }
        Ok(())
    }

    pub fn score(&self, m: &ScoredMask) -> f64 {
        match self.score_mode {
            ScoreMode::Fiou => m.fiou,
            ScoreMode::MeanFiouMos => m.combined_score(),
        }
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self::flow_only()
    }
}

/// Greedy NMS. Output is in descending score order (ties by candidate index).
pub fn nms(c: &CandidateSet, cfg: &SelectionConfig) -> Result<Vec<ScoredMask>> {
    cfg.validate()?;
    let mut order: Vec<(usize, f64)> = c
        .candidates
        .iter()
        .enumerate()
        .map(|(i, m)| (i, cfg.score(m)))
        .filter(|&(i, s)| !c.candidates[i].mask.is_empty() && s >= cfg.score_floor)
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut kept: Vec<ScoredMask> = Vec::new();
    for (i, _) in order {
        let cand = &c.candidates[i];
        let mut keep = true;
        for k in &kept {
            if iou(&cand.mask, &k.mask)? >= cfg.nms_iou_threshold {
                keep = false;
                break;
            }
        }
        if keep {
            kept.push(cand.clone());
        }
    }
    Ok(kept)
}

/// NMS, top-n cut, then layering with the highest score in front.
///
/// Masks fully hidden behind higher-ranked ones are dropped, so every
/// returned object is nonempty.
pub fn select_frame(c: &CandidateSet, cfg: &SelectionConfig) -> Result<FrameMasks> {
    let mut kept = nms(c, cfg)?;
    kept.truncate(cfg.top_n);
    let mut out = FrameMasks::new(c.frame_index, c.height, c.width);
    let mut occupied = Mask::empty(c.height, c.width)?;
    for mut m in kept {
        m.mask.subtract_assign(&occupied)?;
        if m.mask.is_empty() {
            continue;
        }
        occupied.union_assign(&m.mask)?;
        out.objects.push(m);
    }
    out.rerank();
    Ok(out)
}

/// Layers `back` behind `front`: front objects are untouched, back objects
/// lose every pixel a front object owns and vanish if nothing remains.
pub fn combine_predictions(front: &FrameMasks, back: &FrameMasks) -> Result<FrameMasks> {
    if front.dims() != back.dims() {
        return Err(Error::Shape {
            expected: front.dims(),
            found: back.dims(),
        });
    }
    let mut out = front.clone();
    let mut occupied = Mask::empty(front.height, front.width)?;
    for o in &front.objects {
        occupied.union_assign(&o.mask)?;
    }
    for o in &back.objects {
        let mut m = o.clone();
        m.mask.subtract_assign(&occupied)?;
        if m.mask.is_empty() {
            continue;
        }
        occupied.union_assign(&m.mask)?;
        out.objects.push(m);
    }
    out.rerank();
    Ok(out)
}

fn check_prompt(prompt: Pixel, gt: &FrameMasks) -> Result<()> {
    if prompt.x >= gt.width || prompt.y >= gt.height {
        return Err(Error::Parameter(format!(
            "prompt ({}, {}) outside {}x{} frame",
            prompt.x, prompt.y, gt.height, gt.width
        )));
    }
    Ok(())
}

fn object_at(prompt: Pixel, gt: &FrameMasks) -> Option<&Mask> {
    gt.objects
        .iter()
        .map(|o| &o.mask)
        .find(|m| m.get(prompt.x, prompt.y))
}

/// 0 for a background prompt, otherwise IoU against the prompted GT object.
pub fn fiou_target(pred: &Mask, prompt: Pixel, gt: &FrameMasks) -> Result<f64> {
    check_prompt(prompt, gt)?;
    gt.check_dims(pred)?;
    match object_at(prompt, gt) {
        Some(obj) => iou(pred, obj),
        None => Ok(0.0),
    }
}

/// 1 iff the prompt lies on any GT object.
pub fn mos_target(prompt: Pixel, gt: &FrameMasks) -> Result<u8> {
    check_prompt(prompt, gt)?;
    Ok(object_at(prompt, gt).is_some() as u8)
}

/// `side x side` cell centres of a uniform partition, row by row.
///
/// Points are distinct whenever `side <= min(h, w)`.
pub fn grid_prompts(h: usize, w: usize, side: usize) -> Vec<Pixel> {
    let center = |i: usize, extent: usize| ((2 * i + 1) * extent) / (2 * side);
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            out.push(Pixel {
                x: center(c, w),
                y: center(r, h),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(h: usize, w: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(h, w, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1).unwrap()
    }

    fn cand(m: Mask, s: f64) -> ScoredMask {
        ScoredMask::new(m, s, None).unwrap()
    }

    fn set(cands: Vec<ScoredMask>) -> CandidateSet {
        let (h, w) = cands[0].mask.dims();
        CandidateSet::new(0, h, w, 10, cands).unwrap()
    }

    #[test]
    fn nms_drops_duplicate() {
        let m = rect(8, 8, 1, 1, 4, 4);
        let kept = nms(&set(vec![cand(m.clone(), 0.8), cand(m.clone(), 0.9)]), &SelectionConfig::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].fiou, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let cs = vec![
            cand(rect(8, 8, 0, 0, 2, 2), 0.1),
            cand(rect(8, 8, 3, 3, 5, 5), 0.9),
            cand(rect(8, 8, 6, 6, 8, 8), 0.5),
        ];
        assert_eq!(nms(&set(cs), &SelectionConfig::default()).unwrap().len(), 3);
    }

    #[test]
    fn nms_chain() {
        // A~B and B~C overlap above the threshold, A~C below it.
        let strip = |x0: usize, x1: usize| rect(1, 20, x0, 0, x1, 1);
        let (a, b, c) = (strip(0, 10), strip(3, 13), strip(6, 16));
        assert!(iou(&a, &b).unwrap() > 0.5 && iou(&b, &c).unwrap() > 0.5);
        assert!(iou(&a, &c).unwrap() < 0.5);
        let kept = nms(
            &set(vec![cand(c.clone(), 0.7), cand(a.clone(), 0.9), cand(b, 0.8)]),
            &SelectionConfig::default(),
        )
        .unwrap();
        let masks: Vec<_> = kept.into_iter().map(|k| k.mask).collect();
        assert_eq!(masks, vec![a, c]);
    }

    #[test]
    fn nms_drops_empty_and_below_floor() {
        let cfg = SelectionConfig {
            score_floor: 0.3,
            ..Default::default()
        };
        let cs = vec![
            cand(Mask::empty(4, 4).unwrap(), 0.9),
            cand(rect(4, 4, 0, 0, 1, 1), 0.2),
            cand(rect(4, 4, 2, 2, 3, 3), 0.3),
        ];
        let kept = nms(&set(cs), &cfg).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].fiou, 0.3);
    }

    #[test]
    fn select_single() {
        let m = rect(6, 6, 1, 1, 3, 3);
        let fm = select_frame(&set(vec![cand(m.clone(), 0.4)]), &SelectionConfig::default()).unwrap();
        assert_eq!(fm.objects.len(), 1);
        assert_eq!(fm.objects[0].mask, m);
        assert_eq!(fm.objects[0].layer_rank, 0);
    }

    #[test]
    fn select_back_loses_intersection() {
        let front = rect(10, 10, 0, 0, 6, 6);
        let back = rect(10, 10, 4, 4, 10, 10);
        let fm = select_frame(&set(vec![cand(back.clone(), 0.7), cand(front.clone(), 0.9)]), &SelectionConfig::default()).unwrap();
        assert_eq!(fm.objects[0].mask, front);
        assert_eq!(fm.objects[1].mask, back.difference(&front).unwrap());
        assert_eq!(fm.objects[1].mask.area(), back.area() - 4);
    }

    #[test]
    fn select_top_n_cut() {
        let cs: Vec<_> = (0..12).map(|i| cand(rect(4, 12, i, 0, i + 1, 4), i as f64 / 20.0)).collect();
        let cfg = SelectionConfig::rgb_flow_prompt();
        let fm = select_frame(&set(cs), &cfg).unwrap();
        assert_eq!(fm.objects.len(), 10);
        let scores: Vec<f64> = fm.objects.iter().map(|o| o.fiou).collect();
        let expected: Vec<f64> = (2..12).rev().map(|i| i as f64 / 20.0).collect();
        assert_eq!(scores, expected);
    }

    #[test]
    fn select_no_survivors() {
        let fm = select_frame(&set(vec![cand(Mask::empty(3, 3).unwrap(), 0.9)]), &SelectionConfig::default()).unwrap();
        assert!(fm.is_empty());
    }

    #[test]
    fn mean_mode_uses_mos() {
        let a = ScoredMask::new(rect(4, 4, 0, 0, 2, 2), 0.9, Some(0.0)).unwrap();
        let b = ScoredMask::new(rect(4, 4, 1, 1, 3, 3), 0.6, Some(1.0)).unwrap();
        let cfg = SelectionConfig {
            nms_iou_threshold: 0.1,
            ..SelectionConfig::rgb_flow_prompt()
        };
        let kept = nms(&set(vec![a, b.clone()]), &cfg).unwrap();
        assert_eq!(kept, vec![b]);
    }

    #[test]
    fn combine_cases() {
        let f = FrameMasks::from_masks(0, 8, 8, vec![rect(8, 8, 0, 0, 4, 8)]).unwrap();
        let empty = FrameMasks::new(0, 8, 8);
        assert_eq!(combine_predictions(&f, &empty).unwrap(), f);

        let covered = FrameMasks::from_masks(0, 8, 8, vec![rect(8, 8, 1, 1, 3, 3)]).unwrap();
        assert_eq!(combine_predictions(&f, &covered).unwrap().objects.len(), 1);

        let wrong = FrameMasks::new(0, 8, 9);
        assert!(combine_predictions(&f, &wrong).is_err());
    }

    #[test]
    fn combine_recovers_missed_object() {
        let (h, w) = (12, 20);
        let gt_a = rect(h, w, 1, 2, 7, 9);
        let gt_b = rect(h, w, 12, 3, 18, 10);
        // front only found A; back grouped both objects into one coarse blob
        let front = FrameMasks::from_masks(0, h, w, vec![gt_a.clone()]).unwrap();
        let blob = rect(h, w, 0, 1, 19, 11);
        let back = FrameMasks::from_masks(0, h, w, vec![blob.clone()]).unwrap();
        let out = combine_predictions(&front, &back).unwrap();
        assert_eq!(out.objects.len(), 2);
        assert_eq!(out.objects[0].mask, gt_a);
        assert_eq!(out.objects[1].layer_rank, 1);
        let cover = out.objects[0].mask.union(&out.objects[1].mask).unwrap();
        assert_eq!(gt_a.union(&gt_b).unwrap().difference(&cover).unwrap().area(), 0);
        assert!(out.objects[1].mask.is_disjoint(&gt_a).unwrap());
        assert_eq!(out.objects[1].mask.intersection(&gt_b).unwrap(), gt_b);
    }

    #[test]
    fn targets() {
        let obj = rect(10, 10, 2, 2, 6, 6);
        let gt = FrameMasks::from_masks(0, 10, 10, vec![obj.clone()]).unwrap();
        let bg = Pixel { x: 8, y: 8 };
        let inside = Pixel { x: 3, y: 3 };
        assert_eq!(fiou_target(&obj, bg, &gt).unwrap(), 0.0);
        assert_eq!(fiou_target(&obj, inside, &gt).unwrap(), 1.0);
        let half = rect(10, 10, 2, 2, 4, 6);
        assert_eq!(fiou_target(&half, inside, &gt).unwrap(), 0.5);
        assert_eq!(mos_target(inside, &gt).unwrap(), 1);
        assert_eq!(mos_target(bg, &gt).unwrap(), 0);
        assert!(fiou_target(&obj, Pixel { x: 10, y: 0 }, &gt).is_err());
        assert!(mos_target(Pixel { x: 0, y: 10 }, &gt).is_err());
        let empty = FrameMasks::new(0, 10, 10);
        for p in grid_prompts(10, 10, 4) {
            assert_eq!(mos_target(p, &empty).unwrap(), 0);
        }
    }

    #[test]
    fn grid_cases() {
        assert_eq!(grid_prompts(100, 100, 1), vec![Pixel { x: 50, y: 50 }]);
        let pts: Vec<_> = grid_prompts(4, 4, 2).into_iter().map(|p| (p.y, p.x)).collect();
        assert_eq!(pts, vec![(1, 1), (1, 3), (3, 1), (3, 3)]);
        let g = grid_prompts(480, 854, 10);
        assert_eq!(g.len(), 100);
        assert!(g.iter().all(|p| p.x < 854 && p.y < 480));
    }

    proptest! {
        #[test]
        fn grid_distinct_in_bounds(h in 1usize..60, w in 1usize..60, side in 1usize..25) {
            prop_assume!(side <= h.min(w));
            let g = grid_prompts(h, w, side);
            prop_assert_eq!(g.len(), side * side);
            let uniq: std::collections::BTreeSet<_> = g.iter().collect();
            prop_assert_eq!(uniq.len(), side * side);
            prop_assert!(g.iter().all(|p| p.x < w && p.y < h));
        }

        #[test]
        fn fiou_bounded_and_gated(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let obj = rect(12, 12, rng.random_range(0..5), rng.random_range(0..5), rng.random_range(6..12), rng.random_range(6..12));
            let gt = FrameMasks::from_masks(0, 12, 12, vec![obj.clone()]).unwrap();
            let pred = Mask::from_fn(12, 12, |_, _| rng.random_bool(0.3)).unwrap();
            let p = Pixel { x: rng.random_range(0..12), y: rng.random_range(0..12) };
            let f = fiou_target(&pred, p, &gt).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let indicator = mos_target(p, &gt).unwrap();
            if indicator == 0 {
                prop_assert_eq!(f, 0.0);
            } else if pred.intersection_area(&obj).unwrap() > 0 {
                prop_assert!(f > 0.0);
            }
        }
    }
}
