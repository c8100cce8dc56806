use super::FlowField;
use crate::error::{Error, Result};
use crate::mask::Mask;

/// Forward nearest-neighbour splat of `m` along `f`.
///
/// Each set pixel `p` lands on `round(p + f(p))`, rounding half away from
/// zero. Targets outside the frame are dropped and holes are not filled.
pub fn warp_mask(m: &Mask, f: &FlowField) -> Result<Mask> {
    if m.dims() != f.dims() {
        return Err(Error::Shape {
            expected: m.dims(),
            found: f.dims(),
        });
    }
    let mut out = m.empty_like();
    let (h, w) = (m.height() as f64, m.width() as f64);
    for (x, y) in m.iter_ones() {
        let (du, dv) = f.at(x, y);
        let tx = (x as f64 + du as f64).round();
        let ty = (y as f64 + dv as f64).round();
        if tx >= 0.0 && ty >= 0.0 && tx < w && ty < h {
            out.set(tx as usize, ty as usize, true);
        }
    }
    Ok(out)
}
