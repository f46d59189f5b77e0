use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Geometry of a stride-1, zero "same"-padded 2-D cross-correlation.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    r1: usize,
    r2: usize,
}

impl ConvGeom {
    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn taps(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Spatial offset of tap `(i, j)` relative to the output position.
    fn offset(&self, i: usize, j: usize) -> (isize, isize) {
        let ch = (self.kh / 2) as isize;
        let cw = (self.kw / 2) as isize;
        (
            self.r1 as isize * (i as isize - ch),
            self.r2 as isize * (j as isize - cw),
        )
    }

    /// Valid output column range for a horizontal tap offset.
    fn col_range(&self, dq: isize) -> (usize, usize) {
        let lo = (-dq).max(0) as usize;
        let hi = (self.w as isize - dq).clamp(0, self.w as isize) as usize;
        (lo.min(hi), hi)
    }

    /// Lays the receptive fields of one sample (`C·H·W` values) out as a
    /// `(C·kh·kw) × (H·W)` matrix, overwriting every entry of `cols`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.hw();
        for c in 0..self.c {
            let plane = &x[c * hw..(c + 1) * hw];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let (dm, dq) = self.offset(i, j);
                    let (q0, q1) = self.col_range(dq);
                    for m in 0..self.h {
                        let dst = &mut cols[row * hw + m * self.w..row * hw + (m + 1) * self.w];
                        let sm = m as isize + dm;
                        if sm < 0 || sm >= self.h as isize || q0 >= q1 {
                            dst.fill(0.0);
                            continue;
                        }
                        let s0 = (sm * self.w as isize + q0 as isize + dq) as usize;
                        dst[..q0].fill(0.0);
                        dst[q0..q1].copy_from_slice(&plane[s0..s0 + (q1 - q0)]);
                        dst[q1..].fill(0.0);
                    }
                }
            }
        }
    }

    /// Scatter-adds one sample's column matrix onto its `C·H·W` input gradient.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let hw = self.hw();
        for c in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = (c * self.kh + i) * self.kw + j;
                    let (dm, dq) = self.offset(i, j);
                    let (q0, q1) = self.col_range(dq);
                    for m in 0..self.h {
                        let sm = m as isize + dm;
                        if sm < 0 || sm >= self.h as isize || q0 >= q1 {
                            continue;
                        }
                        let src = row * hw + m * self.w;
                        let d0 = (c * hw) as isize + sm * self.w as isize + q0 as isize + dq;
                        let d0 = d0 as usize;
                        for (d, s) in x[d0..d0 + (q1 - q0)]
                            .iter_mut()
                            .zip(&cols[src + q0..src + q1])
                        {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Dilated 2-D cross-correlation with zero "same" padding and stride 1.
    ///
    /// `self` is `(N, C, H, W)` or `(C, H, W)`, `weight` is `(K, C, kh, kw)` with odd
    /// kernel extents, `bias` (if any) has `K` elements. Output position `(m, n)` reads
    /// input `(m + r1·(i − kh/2), n + r2·(j − kw/2))` for tap `(i, j)`.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        dilation: (usize, usize),
    ) -> Result<Tensor> {
        let batched = self.rank() == 4;
        let xs = match self.rank() {
            4 => self.shape().to_vec(),
            3 => [&[1], self.shape()].concat(),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape().to_vec(),
                    rhs: weight.shape().to_vec(),
                })
            }
        };
        let ws = weight.shape();
        if ws.len() != 4 || ws[1] != xs[1] {
            return Err(Error::ChannelMismatch {
                layer: "conv2d".into(),
                expected: ws.get(1).copied().unwrap_or(0),
                got: xs[1],
            });
        }
        if ws[2].is_multiple_of(2) || ws[3].is_multiple_of(2) || dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::Layer(format!(
                "conv2d needs odd kernel extents and positive dilation, got kernel {:?} dilation {:?}",
                &ws[2..],
                dilation
            )));
        }
        let k = ws[0];
        if let Some(b) = bias {
            if b.numel() != k {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![k],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let g = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            kh: ws[2],
            kw: ws[3],
            r1: dilation.0,
            r2: dilation.1,
        };
        let (hw, taps) = (g.hw(), g.taps());
        let (xin, xout) = (g.c * hw, k * hw);
        let mut cols = vec![0.0; taps * hw];
        let mut out = vec![0.0; g.n * xout];
        for n in 0..g.n {
            g.im2col(&self.data()[n * xin..(n + 1) * xin], &mut cols);
            let y = &mut out[n * xout..(n + 1) * xout];
            gemm(k, taps, hw, weight.data(), false, &cols, false, y, false);
            if let Some(b) = bias {
                for (row, b) in y.chunks_exact_mut(hw).zip(b.data()) {
                    row.iter_mut().for_each(|v| *v += b);
                }
            }
        }
        let shape = if batched {
            vec![g.n, k, g.h, g.w]
        } else {
            vec![k, g.h, g.w]
        };
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(shape, out, parents, move |ctx| {
            let (x, w) = (&ctx.parents[0], &ctx.parents[1]);
            let mut dx = x.requires_grad().then(|| vec![0.0; g.n * xin]);
            let mut dw = w.requires_grad().then(|| vec![0.0; k * taps]);
            let mut buf = vec![0.0; taps * hw];
            for n in 0..g.n {
                let gy = &ctx.grad[n * xout..(n + 1) * xout];
                if let Some(dw) = dw.as_mut() {
                    g.im2col(&x.data()[n * xin..(n + 1) * xin], &mut buf);
                    gemm(k, hw, taps, gy, false, &buf, true, dw, true);
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(taps, k, hw, w.data(), true, gy, false, &mut buf, false);
                    g.col2im(&buf, &mut dx[n * xin..(n + 1) * xin]);
                }
            }
            let mut grads = vec![dx, dw];
            if ctx.parents.len() == 3 {
                let mut db = vec![0.0; k];
                for (i, v) in ctx.grad.iter().enumerate() {
                    db[i / hw % k] += v;
                }
                grads.push(Some(db));
            }
            grads
        }))
    }

    /// 2×2 max pooling with stride 2 over the last two axes of a `(N, C, H, W)` tensor.
    /// Odd trailing rows/columns are dropped; ties go to the first element in row-major
    /// window order.
    pub fn max_pool2d(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "max_pool2d",
                lhs: s.to_vec(),
                rhs: vec![0, 0, 2, 2],
            });
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        if h < 2 || w < 2 {
            return Err(Error::OutOfBounds {
                op: "max_pool2d",
                detail: format!("spatial extent {h}x{w} smaller than the 2x2 window"),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut arg = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for m in 0..ho {
                for q in 0..wo {
                    let mut best = p * h * w + 2 * m * w + 2 * q;
                    for (dm, dq) in [(0, 1), (1, 0), (1, 1)] {
                        let i = p * h * w + (2 * m + dm) * w + 2 * q + dq;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            vec![s[0], s[1], ho, wo],
            out,
            vec![self.clone()],
            move |ctx| {
                let mut gx = vec![0.0; total];
                for (&i, &g) in arg.iter().zip(ctx.grad) {
                    gx[i] += g;
                }
                vec![Some(gx)]
            },
        ))
    }
}
