//! Bilinear resampling of the last two axes with half-pixel centers
//! (the `align_corners = false` convention).

use super::{Function, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Interpolation taps along one axis: for each output position the two
/// source indices and the weight of the second one.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

struct BilinearResize {
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
    src: (usize, usize),
}

impl Function for BilinearResize {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (sh, sw) = self.src;
        let (dh, dw) = (self.rows.len(), self.cols.len());
        let maps = out.numel() / (dh * dw);
        let mut gx = vec![0.0; inputs[0].numel()];
        for m in 0..maps {
            let src = &mut gx[m * sh * sw..(m + 1) * sh * sw];
            let g = &grad.data()[m * dh * dw..(m + 1) * dh * dw];
            for (oy, &(y0, y1, wy)) in self.rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in self.cols.iter().enumerate() {
                    let v = g[oy * dw + ox];
                    src[y0 * sw + x0] += v * (1.0 - wy) * (1.0 - wx);
                    src[y0 * sw + x1] += v * (1.0 - wy) * wx;
                    src[y1 * sw + x0] += v * wy * (1.0 - wx);
                    src[y1 * sw + x1] += v * wy * wx;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), gx).unwrap())]
    }
}

impl Tape {
    /// Resize the trailing `[H, W]` axes to `(h, w)`; leading axes are
    /// treated as independent maps. Equal sizes pass through unchanged.
    pub fn bilinear_resize(&mut self, x: Var, target: (usize, usize)) -> Result<Var> {
        let xv = self.value(x);
        let (dh, dw) = target;
        if xv.rank() < 2 || dh == 0 || dw == 0 {
            return Err(Error::shape(format!(
                "bilinear_resize: input {:?} to {dh}x{dw}",
                xv.shape()
            )));
        }
        let r = xv.rank();
        let (sh, sw) = (xv.shape()[r - 2], xv.shape()[r - 1]);
        if (sh, sw) == target {
            return Ok(x);
        }
        let rows = axis_taps(sh, dh);
        let cols = axis_taps(sw, dw);
        let maps = xv.numel() / (sh * sw);
        let mut out = Vec::with_capacity(maps * dh * dw);
        for m in 0..maps {
            let src = &xv.data()[m * sh * sw..(m + 1) * sh * sw];
            for &(y0, y1, wy) in &rows {
                for &(x0, x1, wx) in &cols {
                    let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
                    let bottom = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
                    out.push(top * (1.0 - wy) + bottom * wy);
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape[r - 2] = dh;
        shape[r - 1] = dw;
        let value = Tensor::new(shape, out)?;
        let flops = 7 * value.numel() as u64;
        Ok(self.push_op(
            value,
            &[x],
            Box::new(BilinearResize {
                rows,
                cols,
                src: (sh, sw),
            }),
            flops,
        ))
    }
}
