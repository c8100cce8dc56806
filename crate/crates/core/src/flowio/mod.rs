//! Optical-flow fields: `.flo` I/O, color-wheel rendering, multi-gap
//! loading and forward mask warping.

mod color;
mod flo;
mod gaps;
mod warp;

pub use color::{color_wheel, flow_to_rgb, Normalization, RgbImage};
pub use flo::{read_flo, read_flo_file, write_flo, write_flo_file, FLO_MAGIC};
pub use gaps::{flow_path, load_gap_flows, DirFlowSource, FlowGapSet, FlowSource, FlowStore, GapFlows};
pub use warp::warp_mask;

use crate::error::{Error, Result};

/// Dense displacement field from frame `source_frame` to `source_frame + gap`.
///
/// `u` points right (+x), `v` points down (+y), both in pixels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f32>,
    v: Vec<f32>,
    pub gap: i32,
    pub source_frame: usize,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f32>, v: Vec<f32>, gap: i32, source_frame: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Parameter(format!("flow dimensions {height}x{width}")));
        }
        let n = height * width;
        if u.len() != n || v.len() != n {
            return Err(Error::Length {
                expected: n,
                found: u.len().min(v.len()),
            });
        }
        if gap == 0 {
            return Err(Error::Parameter("flow gap must be nonzero".into()));
        }
        if let Some(bad) = u.iter().chain(&v).find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite flow value {bad}")));
        }
        Ok(FlowField {
            height,
            width,
            u,
            v,
            gap,
            source_frame,
        })
    }

    pub fn zeros(height: usize, width: usize, gap: i32, source_frame: usize) -> Result<Self> {
        let n = height * width;
        Self::new(height, width, vec![0.0; n], vec![0.0; n], gap, source_frame)
    }

    /// The same displacement at every pixel.
    pub fn constant(height: usize, width: usize, du: f32, dv: f32, gap: i32, source_frame: usize) -> Result<Self> {
        let n = height * width;
        Self::new(height, width, vec![du; n], vec![dv; n], gap, source_frame)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        gap: i32,
        source_frame: usize,
        mut f: impl FnMut(usize, usize) -> (f32, f32),
    ) -> Result<Self> {
        let n = height * width;
        let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        Self::new(height, width, u, v, gap, source_frame)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    /// Frame this field points to.
    pub fn target_frame(&self) -> i64 {
        self.source_frame as i64 + self.gap as i64
    }

    pub fn with_meta(mut self, source_frame: usize, gap: i32) -> Result<Self> {
        if gap == 0 {
            return Err(Error::Parameter("flow gap must be nonzero".into()));
        }
        self.source_frame = source_frame;
        self.gap = gap;
        Ok(self)
    }

    /// Multiplies every displacement by `s`.
    pub fn scaled(&self, s: f32) -> Result<Self> {
        Self::new(
            self.height,
            self.width,
            self.u.iter().map(|x| x * s).collect(),
            self.v.iter().map(|x| x * s).collect(),
            self.gap,
            self.source_frame,
        )
    }
}
