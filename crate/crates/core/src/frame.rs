use crate::error::{Error, Result};
use crate::mask::Mask;

/// A per-frame object mask with its predicted quality scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub mask: Mask,
    /// Predicted foreground-object IoU, in `[0, 1]`.
    pub fiou: f64,
    /// Moving-object score, when the predictor emits one.
    pub mos: Option<f64>,
    /// 0 is frontmost.
    pub layer_rank: usize,
}

impl ScoredMask {
    pub fn new(mask: Mask, fiou: f64, mos: Option<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&fiou) {
            return Err(Error::Parameter(format!("fiou {fiou} outside [0, 1]")));
        }
        if let Some(m) = mos {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::Parameter(format!("mos {m} outside [0, 1]")));
            }
        }
        Ok(ScoredMask {
            mask,
            fiou,
            mos,
            layer_rank: 0,
        })
    }

    /// `(mos + fiou) / 2` when a moving-object score exists, otherwise `fiou`.
    pub fn combined_score(&self) -> f64 {
        match self.mos {
            Some(m) => (m + self.fiou) / 2.0,
            None => self.fiou,
        }
    }
}

/// The objects predicted at one frame, ordered front to back.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMasks {
    pub frame_index: usize,
    pub height: usize,
    pub width: usize,
    pub objects: Vec<ScoredMask>,
}

impl FrameMasks {
    pub fn new(frame_index: usize, height: usize, width: usize) -> Self {
        FrameMasks {
            frame_index,
            height,
            width,
            objects: Vec::new(),
        }
    }

    /// Wraps plain masks, ranked in the given order with unit scores.
    pub fn from_masks(frame_index: usize, height: usize, width: usize, masks: Vec<Mask>) -> Result<Self> {
        let mut out = Self::new(frame_index, height, width);
        for m in masks {
            out.check_dims(&m)?;
            let mut sm = ScoredMask::new(m, 1.0, None)?;
            sm.layer_rank = out.objects.len();
            out.objects.push(sm);
        }
        Ok(out)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn check_dims(&self, m: &Mask) -> Result<()> {
        if m.dims() != self.dims() {
            return Err(Error::Shape {
                expected: self.dims(),
                found: m.dims(),
            });
        }
        Ok(())
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.objects.iter().map(|o| o.mask.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Renumbers `layer_rank` to match list position.
    pub fn rerank(&mut self) {
        for (i, o) in self.objects.iter_mut().enumerate() {
            o.layer_rank = i;
        }
    }

    pub fn is_disjoint(&self) -> bool {
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if a.mask.intersection_area(&b.mask).map_or(true, |n| n > 0) {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combined_score_rules() {
        let m = Mask::empty(2, 2).unwrap();
        let a = ScoredMask::new(m.clone(), 0.6, None).unwrap();
        assert_eq!(a.combined_score(), 0.6);
        let b = ScoredMask::new(m.clone(), 0.6, Some(1.0)).unwrap();
        assert_eq!(b.combined_score(), 0.8);
        assert!(ScoredMask::new(m.clone(), 1.2, None).is_err());
        assert!(ScoredMask::new(m, 0.5, Some(-0.1)).is_err());
    }
}
