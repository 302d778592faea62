use super::{Function, Tape, Tensor, Var};
use crate::error::{Error, Result};

struct Dense {
    n: usize,
    d: usize,
    u: usize,
}

impl Function for Dense {
    fn backward(
        &self,
        inputs: &[&Tensor],
        _: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (n, d, u) = (self.n, self.d, self.u);
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let gy = grad.data();

        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; n * d];
            for r in 0..n {
                let grow = &gy[r * u..(r + 1) * u];
                for i in 0..d {
                    gx[r * d + i] = w[i * u..(i + 1) * u]
                        .iter()
                        .zip(grow)
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            Tensor::new(vec![n, d], gx).unwrap()
        });

        let mut gw = vec![0.0; d * u];
        let mut gb = vec![0.0; u];
        for r in 0..n {
            let grow = &gy[r * u..(r + 1) * u];
            for i in 0..d {
                let xv = x[r * d + i];
                for (acc, g) in gw[i * u..(i + 1) * u].iter_mut().zip(grow) {
                    *acc += xv * g;
                }
            }
            for (acc, g) in gb.iter_mut().zip(grow) {
                *acc += g;
            }
        }
        vec![
            gx,
            Some(Tensor::new(vec![d, u], gw).unwrap()),
            Some(Tensor::new(vec![u], gb).unwrap()),
        ]
    }
}

impl Tape {
    /// Affine map `x·W + b` for `x: [N,D]`, `W: [D,U]`, `b: [U]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(weight), self.shape(bias));
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::shape(format!(
                "dense: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let (n, d, u) = (xs[0], xs[1], ws[1]);
        let (xd, wd, bd) = (
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; n * u];
        // weight-row outer loop: each row of W is read once per batch
        for i in 0..d {
            let wrow = &wd[i * u..(i + 1) * u];
            for (r, row) in out.chunks_mut(u).enumerate() {
                let xv = xd[r * d + i];
                for (o, wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        for row in out.chunks_mut(u) {
            for (o, b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        let flops = (2 * n * d * u + n * u) as u64;
        let value = Tensor::new(vec![n, u], out)?;
        Ok(self.push_op(value, &[x, weight, bias], Box::new(Dense { n, d, u }), flops))
    }
}
