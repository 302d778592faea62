//! Elementwise, reduction and indexing ops.

use super::{Function, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct Relu;

impl Function for Relu {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let data = x
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).unwrap())]
    }
}

struct Add;

impl Function for Add {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct Scale(f64);

impl Function for Scale {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut g = grad.clone();
        g.data_mut().iter_mut().for_each(|v| *v *= self.0);
        vec![Some(g)]
    }
}

struct Sum;

impl Function for Sum {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(Tensor::full(inputs[0].shape().to_vec(), grad.item()))]
    }
}

/// Multiply by a constant array, broadcast over leading axes.
struct MulConst {
    factor: Vec<f64>,
}

impl Function for MulConst {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let n = self.factor.len();
        let data = grad
            .data()
            .iter()
            .enumerate()
            .map(|(i, g)| g * self.factor[i % n])
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).unwrap())]
    }
}

struct Concat {
    axis: usize,
}

impl Function for Concat {
    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let outer: usize = out.shape()[..self.axis].iter().product();
        let out_row: usize = out.shape()[self.axis..].iter().product();
        let mut offset = 0;
        inputs
            .iter()
            .map(|x| {
                let row: usize = x.shape()[self.axis..].iter().product();
                let mut data = Vec::with_capacity(x.numel());
                for o in 0..outer {
                    let start = o * out_row + offset;
                    data.extend_from_slice(&grad.data()[start..start + row]);
                }
                offset += row;
                Some(Tensor::new(x.shape().to_vec(), data).unwrap())
            })
            .collect()
    }
}

struct SelectLast {
    indices: Vec<usize>,
}

impl Function for SelectLast {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let d = x.last_dim();
        let k = self.indices.len();
        let mut out = Tensor::zeros(x.shape().to_vec());
        let gx = out.data_mut();
        for (row, g) in grad.data().chunks(k).enumerate() {
            for (&j, &v) in self.indices.iter().zip(g) {
                gx[row * d + j] += v;
            }
        }
        vec![Some(out)]
    }
}

struct ChannelMean;

impl Function for ChannelMean {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let c = x.last_dim();
        let inv = 1.0 / c as f64;
        let data = (0..x.numel()).map(|i| grad.data()[i / c] * inv).collect();
        vec![Some(Tensor::new(x.shape().to_vec(), data).unwrap())]
    }
}

struct GlobalAvgPool;

impl Function for GlobalAvgPool {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let inv = 1.0 / (h * w) as f64;
        let mut out = Tensor::zeros(x.shape().to_vec());
        let gx = out.data_mut();
        for b in 0..n {
            let g = &grad.data()[b * c..(b + 1) * c];
            for p in 0..h * w {
                let base = (b * h * w + p) * c;
                for ch in 0..c {
                    gx[base + ch] = g[ch] * inv;
                }
            }
        }
        vec![Some(out)]
    }
}

impl Tape {
    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let flops = out.numel() as u64;
        self.push_op(out, &[x], Box::new(Relu), flops)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "add: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data).unwrap();
        let flops = out.numel() as u64;
        Ok(self.push_op(out, &[a, b], Box::new(Add), flops))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let flops = out.numel() as u64;
        self.push_op(out, &[x], Box::new(Scale(factor)), flops)
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let total = xv.data().iter().sum();
        let flops = xv.numel() as u64;
        self.push_op(Tensor::scalar(total), &[x], Box::new(Sum), flops)
    }

    /// Elementwise product with a constant array whose shape is a suffix of
    /// `x`'s shape (broadcast over the leading axes).
    pub fn mul_const(&mut self, x: Var, factor: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        let suffix = &xv.shape()[xv.rank().saturating_sub(factor.rank())..];
        if factor.rank() > xv.rank() || suffix != factor.shape() {
            return Err(Error::shape(format!(
                "mul_const: {:?} does not broadcast over {:?}",
                factor.shape(),
                xv.shape()
            )));
        }
        let f = factor.data();
        let n = f.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * f[i % n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        let flops = out.numel() as u64;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(MulConst {
                factor: f.to_vec(),
            }),
            flops,
        ))
    }

    /// Multiply the last axis by a constant non-trainable mask, broadcast over
    /// all leading axes. Masked entries pass no gradient.
    pub fn scale_mask(&mut self, x: Var, mask: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if xv.last_dim() != mask.len() || xv.rank() == 0 {
            return Err(Error::shape(format!(
                "scale_mask: mask of length {} against shape {:?}",
                mask.len(),
                xv.shape()
            )));
        }
        let n = mask.len();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * mask[i % n])
            .collect();
        let out = Tensor::new(xv.shape().to_vec(), data).unwrap();
        Ok(self.push_op(
            out,
            &[x],
            Box::new(MulConst {
                factor: mask.to_vec(),
            }),
            0,
        ))
    }

    /// Concatenate along `axis`. All other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .map(|&v| self.value(v).shape().to_vec())
            .ok_or_else(|| Error::shape("concat of an empty list"))?;
        if axis >= first.len() {
            return Err(Error::shape(format!(
                "concat axis {axis} out of range for rank {}",
                first.len()
            )));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(format!(
                    "concat: {s:?} incompatible with {first:?} along axis {axis}"
                )));
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let x = self.value(v);
                let row: usize = x.shape()[axis..].iter().product();
                data.extend_from_slice(&x.data()[o * row..(o + 1) * row]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push_op(out, xs, Box::new(Concat { axis }), 0))
    }

    /// Gather the given positions of the last axis, in the given order.
    pub fn select_last(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.rank() == 0 || indices.is_empty() || indices.iter().any(|&j| j >= d) {
            return Err(Error::shape(format!(
                "select_last: indices out of range for shape {:?}",
                xv.shape()
            )));
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = indices.len();
        let data = xv
            .data()
            .chunks(d)
            .flat_map(|row| indices.iter().map(move |&j| row[j]))
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(SelectLast {
                indices: indices.to_vec(),
            }),
            0,
        ))
    }

    /// Mean over the last axis; drops that axis.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() < 2 {
            return Err(Error::shape(format!(
                "channel_mean needs rank >= 2, got {:?}",
                xv.shape()
            )));
        }
        let c = xv.last_dim();
        let data = xv
            .data()
            .chunks(c)
            .map(|row| row.iter().sum::<f64>() / c as f64)
            .collect();
        let shape = xv.shape()[..xv.rank() - 1].to_vec();
        let flops = xv.numel() as u64;
        let out = Tensor::new(shape, data)?;
        Ok(self.push_op(out, &[x], Box::new(ChannelMean), flops))
    }

    /// `[N,H,W,C] -> [N,C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 4 {
            return Err(Error::shape(format!(
                "global_avg_pool expects N,H,W,C, got {:?}",
                xv.shape()
            )));
        }
        let (n, h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let mut data = vec![0.0; n * c];
        for b in 0..n {
            let acc = &mut data[b * c..(b + 1) * c];
            for p in 0..h * w {
                let base = (b * h * w + p) * c;
                for ch in 0..c {
                    acc[ch] += xv.data()[base + ch];
                }
            }
            let inv = (h * w) as f64;
            acc.iter_mut().for_each(|v| *v /= inv);
        }
        let flops = xv.numel() as u64;
        let out = Tensor::new(vec![n, c], data)?;
        Ok(self.push_op(out, &[x], Box::new(GlobalAvgPool), flops))
    }
}
