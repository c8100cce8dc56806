//! Middlebury color coding of flow fields.

use super::FlowField;
use crate::error::{Error, Result};

const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;
const NCOLS: usize = RY + YG + GC + CB + BM + MR;

/// The 55-entry hue wheel: red -> yellow -> green -> cyan -> blue -> magenta.
pub fn color_wheel() -> [[u8; 3]; NCOLS] {
    let ramp = |i: usize, n: usize| (255 * i / n) as u8;
    let mut wheel = [[0u8; 3]; NCOLS];
    let mut col = 0;
    for i in 0..RY {
        wheel[col] = [255, ramp(i, RY), 0];
        col += 1;
    }
    for i in 0..YG {
        wheel[col] = [255 - ramp(i, YG), 255, 0];
        col += 1;
    }
    for i in 0..GC {
        wheel[col] = [0, 255, ramp(i, GC)];
        col += 1;
    }
    for i in 0..CB {
        wheel[col] = [0, 255 - ramp(i, CB), 255];
        col += 1;
    }
    for i in 0..BM {
        wheel[col] = [ramp(i, BM), 0, 255];
        col += 1;
    }
    for i in 0..MR {
        wheel[col] = [255, 0, 255 - ramp(i, MR)];
        col += 1;
    }
    wheel
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Divide by the largest magnitude in the field.
    PerFrameMax,
    /// Divide by a fixed radius, comparable across frames.
    Fixed(f64),
}

/// 8-bit interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn flow_to_rgb(f: &FlowField, normalization: Normalization) -> Result<RgbImage> {
    let norm = match normalization {
        Normalization::Fixed(r) if !(r > 0.0 && r.is_finite()) => {
            return Err(Error::Parameter(format!("color-wheel normalizer must be positive, got {r}")));
        }
        Normalization::Fixed(r) => r,
        Normalization::PerFrameMax => f
            .u()
            .iter()
            .zip(f.v())
            .map(|(&u, &v)| {
                let (u, v) = (u as f64, v as f64);
                (u * u + v * v).sqrt()
            })
            .fold(0.0, f64::max),
    };
    let wheel = color_wheel();
    let mut data = Vec::with_capacity(3 * f.u().len());
    for (&u, &v) in f.u().iter().zip(f.v()) {
        let (u, v) = if norm > 0.0 {
            (u as f64 / norm, v as f64 / norm)
        } else {
            (0.0, 0.0)
        };
        data.extend_from_slice(&encode(u, v, &wheel));
    }
    Ok(RgbImage {
        width: f.width(),
        height: f.height(),
        data,
    })
}

fn encode(u: f64, v: f64, wheel: &[[u8; 3]; NCOLS]) -> [u8; 3] {
    let rad = (u * u + v * v).sqrt();
    let a = (-v).atan2(-u) / std::f64::consts::PI;
    let fk = (a + 1.0) / 2.0 * (NCOLS - 1) as f64;
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == NCOLS { 0 } else { k0 + 1 };
    let frac = fk - k0 as f64;
    let mut out = [0u8; 3];
    for (i, o) in out.iter_mut().enumerate() {
        let c0 = wheel[k0][i] as f64 / 255.0;
        let c1 = wheel[k1][i] as f64 / 255.0;
        let mut col = (1.0 - frac) * c0 + frac * c1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        *o = (255.0 * col).floor() as u8;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independently written table of the same wheel, segment by segment.
    fn reference_wheel() -> Vec<[u8; 3]> {
        let mut t = Vec::new();
        let segs: [(usize, fn(f64) -> [f64; 3]); 6] = [
            (15, |r| [255.0, r, 0.0]),
            (6, |r| [255.0 - r, 255.0, 0.0]),
            (4, |r| [0.0, 255.0, r]),
            (11, |r| [0.0, 255.0 - r, 255.0]),
            (13, |r| [r, 0.0, 255.0]),
            (6, |r| [255.0, 0.0, 255.0 - r]),
        ];
        for (n, f) in segs {
            for i in 0..n {
                let r = (255.0 * i as f64 / n as f64).floor();
                let c = f(r);
                t.push([c[0] as u8, c[1] as u8, c[2] as u8]);
            }
        }
        t
    }

    #[test]
    fn wheel_matches_reference() {
        assert_eq!(color_wheel().to_vec(), reference_wheel());
        assert_eq!(NCOLS, 55);
    }

    #[test]
    fn zero_flow_is_white() {
        let f = FlowField::zeros(4, 6, 1, 0).unwrap();
        for norm in [Normalization::PerFrameMax, Normalization::Fixed(3.0)] {
            let img = flow_to_rgb(&f, norm).unwrap();
            assert!(img.data.iter().all(|&c| c >= 254));
        }
    }

    #[test]
    fn unit_rightward_is_wheel_origin() {
        let f = FlowField::constant(1, 1, 1.0, 0.0, 1, 0).unwrap();
        let img = flow_to_rgb(&f, Normalization::Fixed(1.0)).unwrap();
        assert_eq!(img.pixel(0, 0), reference_wheel()[0]);
    }

    #[test]
    fn scale_invariant_under_per_frame_max() {
        let f = FlowField::from_fn(6, 9, 1, 0, |x, y| (x as f32 * 0.37 - 1.2, y as f32 * -0.81 + 2.0)).unwrap();
        let base = flow_to_rgb(&f, Normalization::PerFrameMax).unwrap();
        for s in [2.0, 0.5, 8.0] {
            let scaled = flow_to_rgb(&f.scaled(s).unwrap(), Normalization::PerFrameMax).unwrap();
            assert_eq!(base, scaled);
        }
    }

    #[test]
    fn rejects_nonpositive_normalizer() {
        let f = FlowField::zeros(1, 1, 1, 0).unwrap();
        assert!(flow_to_rgb(&f, Normalization::Fixed(0.0)).is_err());
        assert!(flow_to_rgb(&f, Normalization::Fixed(-1.0)).is_err());
    }

    #[test]
    fn saturated_pixels_are_dimmed() {
        let f = FlowField::constant(1, 1, 0.0, 4.0, 1, 0).unwrap();
        let img = flow_to_rgb(&f, Normalization::Fixed(1.0)).unwrap();
        assert!(img.pixel(0, 0).iter().all(|&c| c <= 191));
    }
}
