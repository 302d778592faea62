//! 2-D cross-correlation over `N,H,W,C` inputs with `kh,kw,C,F` kernels.

use super::{Function, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, zero padding split with the
    /// extra row/column on the bottom/right.
    Same,
    /// No padding; output `(in - k) / stride + 1`.
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    f: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if x.len() != 4 || k.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects N,H,W,C input and kh,kw,C,F kernel, got {x:?} and {k:?}"
            )));
        }
        if x[3] != k[2] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                x[3], k[2]
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be >= 1"));
        }
        let (h, w, kh, kw) = (x[1], x[2], k[0], k[1]);
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape(format!(
                        "conv2d valid padding: kernel {kh}x{kw} larger than input {h}x{w}"
                    )));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Geometry {
            n: x[0],
            h,
            w,
            c: x[3],
            kh,
            kw,
            f: k[3],
            stride,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky).checked_sub(self.pad_top).filter(|&r| r < self.h)
    }

    #[inline]
    fn in_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx).checked_sub(self.pad_left).filter(|&c| c < self.w)
    }

    fn flops(&self) -> u64 {
        2 * (self.n * self.oh * self.ow * self.f * self.kh * self.kw * self.c) as u64
    }
}

struct Conv2d {
    geo: Geometry,
}

impl Function for Conv2d {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let g = self.geo;
        let (x, k) = (inputs[0].data(), inputs[1].data());
        let gy = grad.data();
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut gk = vec![0.0; k.len()];

        for b in 0..g.n {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let out_base = ((b * g.oh + oy) * g.ow + ox) * g.f;
                    let go = &gy[out_base..out_base + g.f];
                    for ky in 0..g.kh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        for kx in 0..g.kw {
                            let Some(ix) = g.in_col(ox, kx) else { continue };
                            let in_base = ((b * g.h + iy) * g.w + ix) * g.c;
                            let k_base = (ky * g.kw + kx) * g.c * g.f;
                            for ch in 0..g.c {
                                let kr = k_base + ch * g.f;
                                let xv = x[in_base + ch];
                                let krow = &k[kr..kr + g.f];
                                let gkrow = &mut gk[kr..kr + g.f];
                                let mut acc = 0.0;
                                for f in 0..g.f {
                                    gkrow[f] += xv * go[f];
                                    acc += krow[f] * go[f];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[in_base + ch] += acc;
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![
            gx.map(|d| Tensor::new(inputs[0].shape().to_vec(), d).unwrap()),
            Some(Tensor::new(inputs[1].shape().to_vec(), gk).unwrap()),
        ]
    }
}

impl Tape {
    /// Cross-correlation (no kernel flip), no bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: Padding) -> Result<Var> {
        let geo = Geometry::new(self.shape(x), self.shape(kernel), stride, padding)?;
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        let g = geo;
        let mut out = vec![0.0; g.n * g.oh * g.ow * g.f];
        for b in 0..g.n {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let out_base = ((b * g.oh + oy) * g.ow + ox) * g.f;
                    let acc = &mut out[out_base..out_base + g.f];
                    for ky in 0..g.kh {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        for kx in 0..g.kw {
                            let Some(ix) = g.in_col(ox, kx) else { continue };
                            let in_base = ((b * g.h + iy) * g.w + ix) * g.c;
                            let k_base = (ky * g.kw + kx) * g.c * g.f;
                            for ch in 0..g.c {
                                let xv = xd[in_base + ch];
                                let kr = k_base + ch * g.f;
                                for (a, kv) in acc.iter_mut().zip(&kd[kr..kr + g.f]) {
                                    *a += xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![g.n, g.oh, g.ow, g.f], out)?;
        Ok(self.push_op(value, &[x, kernel], Box::new(Conv2d { geo }), geo.flops()))
    }
}
