//! Binary masks stored as packed row-major bitsets.
//!
//! Every set operation works a word at a time. Bits past `height * width`
//! in the last word are always zero, so popcounts never need masking.

use ndarray::Array2;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A binary `height x width` occupancy grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("area", &self.area())
            .finish()
    }
}

fn word_count(height: usize, width: usize) -> usize {
    (height * width).div_ceil(WORD_BITS)
}

impl Mask {
    /// An all-background mask.
    pub fn empty(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter(format!(
                "mask dimensions must be at least 1x1, got {height}x{width}"
            )));
        }
        Ok(Mask {
            height,
            width,
            words: vec![0; word_count(height, width)],
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::from_fn(height, width, |_, _| true)
    }

    /// Same dimensions as `self`, no pixels set.
    pub fn empty_like(&self) -> Self {
        Mask {
            height: self.height,
            width: self.width,
            words: vec![0; self.words.len()],
        }
    }

    /// Builds a mask from a predicate over `(x, y)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::empty(height, width)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    /// Row-major booleans, `bits.len() == height * width`.
    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Length {
                expected: height * width,
                found: bits.len(),
            });
        }
        Self::from_fn(height, width, |x, y| bits[y * width + x])
    }

    pub fn from_pixels(height: usize, width: usize, pixels: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(height, width)?;
        for &(x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::Parameter(format!(
                    "pixel ({x}, {y}) outside {height}x{width} frame"
                )));
            }
            m.set(x, y, true);
        }
        Ok(m)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let i = y * self.width + x;
        self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        assert!(x < self.width && y < self.height, "pixel out of bounds");
        let i = y * self.width + x;
        let bit = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= bit;
        } else {
            self.words[i / WORD_BITS] &= !bit;
        }
    }

    /// Signed-coordinate lookup; anything outside the frame reads as unset.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn check_same_shape(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn intersection_area(&self, other: &Mask) -> Result<usize> {
        self.check_same_shape(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum())
    }

    pub fn union_area(&self, other: &Mask) -> Result<usize> {
        self.check_same_shape(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum())
    }

    fn zip_with(&self, other: &Mask, op: impl Fn(u64, u64) -> u64) -> Result<Mask> {
        self.check_same_shape(other)?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a | b)
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a & !b)
    }

    pub fn union_assign(&mut self, other: &Mask) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    pub fn subtract_assign(&mut self, other: &Mask) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
        Ok(())
    }

    pub fn is_disjoint(&self, other: &Mask) -> Result<bool> {
        Ok(self.intersection_area(other)? == 0)
    }

    /// Set pixels as `(x, y)`, in row-major order.
    pub fn iter_ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.width;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * WORD_BITS + bit;
                Some((i % width, i / width))
            })
        })
    }

    /// Shifts by an integer offset; pixels leaving the frame are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Mask {
        let mut out = self.empty_like();
        for (x, y) in self.iter_ones() {
            let (tx, ty) = (x as i64 + dx, y as i64 + dy);
            if tx >= 0 && ty >= 0 && (tx as usize) < self.width && (ty as usize) < self.height {
                out.set(tx as usize, ty as usize, true);
            }
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        let mut out = vec![false; self.height * self.width];
        for (x, y) in self.iter_ones() {
            out[y * self.width + x] = true;
        }
        out
    }
}

/// Intersection over union; two empty masks score 0.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let union = a.union_area(b)?;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection_area(b)? as f64 / union as f64)
}

/// Pairwise IoU, shape `a.len() x b.len()`.
pub fn iou_matrix(a: &[Mask], b: &[Mask]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, ma) in a.iter().enumerate() {
        for (j, mb) in b.iter().enumerate() {
            out[[i, j]] = iou(ma, mb)?;
        }
    }
    Ok(out)
}

/// Removes overlaps by layer: masks earlier in `order` own contested pixels.
///
/// `order[k]` is the index of the mask drawn k-th from the front. Indices
/// absent from `order` are left untouched.
pub fn layer_masks(masks: &mut [Mask], order: &[usize]) -> Result<()> {
    let Some(first) = masks.first() else {
        return Ok(());
    };
    let mut occupied = first.empty_like();
    for &i in order {
        let m = &mut masks[i];
        m.subtract_assign(&occupied)?;
        occupied.union_assign(m)?;
    }
    Ok(())
}
