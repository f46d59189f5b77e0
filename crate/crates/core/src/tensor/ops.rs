use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// How a tensor shaped `b` lines up with one shaped `a` under broadcasting: the extents
/// of `a` with runs of equal broadcast behaviour merged, each paired with its stride in `b`
/// (0 where `b` repeats).
#[derive(Clone, Debug)]
struct Broadcast {
    dims: Vec<(usize, usize)>,
}

impl Broadcast {
    /// `None` when the shapes are identical.
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Option<Broadcast>> {
        if a == b {
            return Ok(None);
        }
        if numel(b) == 1 {
            return Ok(Some(Broadcast {
                dims: vec![(numel(a), 0)],
            }));
        }
        if a.len() != b.len() || a.iter().zip(b).any(|(&x, &y)| y != x && y != 1) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        let mut dims: Vec<(usize, usize)> = Vec::new();
        let mut stride = 1;
        for d in (0..a.len()).rev() {
            let repeats = b[d] == 1 && a[d] != 1;
            let s = if repeats { 0 } else { stride };
            match dims.last_mut() {
                // a run continues if it repeats too, or if it is contiguous with this axis
                Some((len, st))
                    if (repeats && *st == 0) || (!repeats && *st != 0 && *st * *len == s) =>
                {
                    *len *= a[d]
                }
                _ if a[d] == 1 => {}
                _ => dims.push((a[d], s)),
            }
            stride *= b[d];
        }
        dims.reverse();
        if dims.is_empty() {
            dims.push((1, 0));
        }
        Ok(Some(Broadcast { dims }))
    }

    /// [`Broadcast::for_each`], or `f(i, i)` over `0..n` when the shapes match.
    fn visit(plan: &Option<Broadcast>, n: usize, mut f: impl FnMut(usize, usize)) {
        match plan {
            None => (0..n).for_each(|i| f(i, i)),
            Some(p) => p.for_each(f),
        }
    }

    /// Calls `f(i, j)` for every flat index `i` of `a`, in order, with the index `j` of
    /// the `b` element it pairs with.
    fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        let (&(len, step), outer) = self.dims.split_last().expect("at least one extent");
        let mut idx = vec![0usize; outer.len()];
        let mut base = 0usize;
        let mut i = 0usize;
        loop {
            for t in 0..len {
                f(i, base + t * step);
                i += 1;
            }
            let mut d = outer.len();
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                base += outer[d].1;
                if idx[d] < outer[d].0 {
                    break;
                }
                base -= outer[d].1 * outer[d].0;
                idx[d] = 0;
            }
        }
    }
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl Tensor {
    fn binary(&self, other: &Tensor, kind: BinaryKind) -> Result<Tensor> {
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let plan = Broadcast::new(name, self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let f = move |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let out: Vec<f64> = match &plan {
            None => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            Some(p) => {
                let mut out = Vec::with_capacity(a.len());
                p.for_each(|i, j| out.push(f(a[i], b[j])));
                out
            }
        };
        let b_len = other.numel();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            move |ctx| {
                let (pa, pb) = (&ctx.parents[0], &ctx.parents[1]);
                let (a, b, g) = (pa.data(), pb.data(), ctx.grad);
                let ga = pa.requires_grad().then(|| match kind {
                    BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                    BinaryKind::Mul | BinaryKind::Div => {
                        let mut ga = Vec::with_capacity(g.len());
                        let div = matches!(kind, BinaryKind::Div);
                        Broadcast::visit(&plan, g.len(), |i, j| {
                            ga.push(if div { g[i] / b[j] } else { g[i] * b[j] })
                        });
                        ga
                    }
                });
                let gb = pb.requires_grad().then(|| {
                    let mut gb = vec![0.0; b_len];
                    Broadcast::visit(&plan, g.len(), |i, j| {
                        gb[j] += match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * a[i],
                            BinaryKind::Div => -g[i] * a[i] / (b[j] * b[j]),
                        }
                    });
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Element-wise sum. `other` must match `self`'s shape or broadcast onto it
    /// (same rank with unit extents, or a single element).
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, BinaryKind::Div)
    }

    /// Applies `f` element-wise; `df(x, y)` is the derivative given input and output.
    fn unary<F, D>(&self, f: F, df: D) -> Tensor
    where
        F: Fn(f64) -> f64,
        D: Fn(f64, f64) -> f64 + 'static,
    {
        let out = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x)
                .zip(ctx.out)
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(g)]
        })
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary(move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary(move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(&self) -> Tensor {
        self.unary(f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn exp(&self) -> Tensor {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Tensor {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn relu(&self) -> Tensor {
        self.unary(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// `max(slope·x, x)` for `0 < slope < 1`.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |t: usize| (o * len + t) * inner + i;
                let max = (0..len).map(|t| x[at(t)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for t in 0..len {
                    let e = (x[at(t)] - max).exp();
                    out[at(t)] = e;
                    total += e;
                }
                for t in 0..len {
                    out[at(t)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |ctx| {
                let (y, g) = (ctx.out, ctx.grad);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |t: usize| (o * len + t) * inner + i;
                        let dot: f64 = (0..len).map(|t| g[at(t)] * y[at(t)]).sum();
                        for t in 0..len {
                            gx[at(t)] = y[at(t)] * (g[at(t)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Flips the order of elements along `axis`.
    pub fn reverse(&self, axis: usize) -> Result<Tensor> {
        check_axis("reverse", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let flip = move |src: &[f64]| {
            let mut dst = vec![0.0; src.len()];
            for o in 0..outer {
                for t in 0..len {
                    let s = (o * len + t) * inner;
                    let d = (o * len + len - 1 - t) * inner;
                    dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
                }
            }
            dst
        };
        let out = flip(self.data());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |ctx| vec![Some(flip(ctx.grad))],
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if start >= end || end > len {
            return Err(Error::OutOfBounds {
                op: "slice",
                detail: format!("range {start}..{end} on axis {axis} of extent {len}"),
            });
        }
        let width = (end - start) * inner;
        let mut out = Vec::with_capacity(outer * width);
        let x = self.data();
        for o in 0..outer {
            let s = (o * len + start) * inner;
            out.extend_from_slice(&x[s..s + width]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        Ok(Tensor::from_window(shape, out, self, len, inner, start))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::OutOfBounds {
            op: "concat",
            detail: "no tensors to concatenate".into(),
        })?;
        check_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let compatible = p.rank() == first.rank()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = parts.iter().map(|p| p.shape()[axis]).sum();
        Ok(Tensor::from_op(shape, out, parts.to_vec(), move |ctx| {
            let mut grads: Vec<Vec<f64>> = widths
                .iter()
                .map(|&w| Vec::with_capacity(outer * w))
                .collect();
            for o in 0..outer {
                let mut off = o * row;
                for (g, &w) in grads.iter_mut().zip(&widths) {
                    g.extend_from_slice(&ctx.grad[off..off + w]);
                    off += w;
                }
            }
            grads
                .into_iter()
                .zip(ctx.parents)
                .map(|(g, p)| p.requires_grad().then_some(g))
                .collect()
        }))
    }

    fn reduced_shape(&self, axis: usize, keepdim: bool) -> Vec<usize> {
        let mut shape = self.shape().to_vec();
        if keepdim || shape.len() == 1 {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        shape
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        self.linear_reduce("sum_axis", axis, keepdim, 1.0)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("mean_axis", self.shape(), axis)?;
        let len = self.shape()[axis] as f64;
        self.linear_reduce("mean_axis", axis, keepdim, 1.0 / len)
    }

    fn linear_reduce(
        &self,
        op: &'static str,
        axis: usize,
        keepdim: bool,
        factor: f64,
    ) -> Result<Tensor> {
        check_axis(op, self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                let src = &x[(o * len + t) * inner..(o * len + t + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= factor);
        let total = self.numel();
        Ok(Tensor::from_op(
            self.reduced_shape(axis, keepdim),
            out,
            vec![self.clone()],
            move |ctx| {
                let mut gx = vec![0.0; total];
                for o in 0..outer {
                    for t in 0..len {
                        let dst = &mut gx[(o * len + t) * inner..(o * len + t + 1) * inner];
                        for (d, g) in dst.iter_mut().zip(&ctx.grad[o * inner..(o + 1) * inner]) {
                            *d = g * factor;
                        }
                    }
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Maximum along `axis`. The gradient goes to the first maximal element.
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        check_axis("max_axis", self.shape(), axis)?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for t in 0..len {
                for i in 0..inner {
                    let src = (o * len + t) * inner + i;
                    let dst = o * inner + i;
                    if t == 0 || x[src] > out[dst] {
                        out[dst] = x[src];
                        arg[dst] = src;
                    }
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            self.reduced_shape(axis, keepdim),
            out,
            vec![self.clone()],
            move |ctx| {
                let mut gx = vec![0.0; total];
                for (&src, &g) in arg.iter().zip(ctx.grad) {
                    gx[src] += g;
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// `(N, C, H, W) -> (N, C)` spatial average.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool",
                lhs: s.to_vec(),
                rhs: vec![0, 0, 0, 0],
            });
        }
        self.reshape(&[s[0], s[1], s[2] * s[3]])?
            .mean_axis(2, false)
    }

    /// Per-channel normalisation over every axis but 1, then `gamma·x̂ + beta`.
    ///
    /// With `stats = None` the batch mean and biased variance are used and returned;
    /// otherwise `x̂` uses the given `(mean, var)` and those are returned unchanged.
    pub fn batch_norm(
        &self,
        gamma: &Tensor,
        beta: &Tensor,
        stats: Option<(&[f64], &[f64])>,
        epsilon: f64,
    ) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let s = self.shape();
        let c = s.get(1).copied().unwrap_or(0);
        if s.len() < 2 || gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                lhs: s.to_vec(),
                rhs: gamma.shape().to_vec(),
            });
        }
        let (outer, inner) = (s[0], s[2..].iter().product::<usize>());
        let n = (outer * inner) as f64;
        let x = self.data();
        let rows = move |ch: usize| {
            (0..outer).map(move |o| (o * c + ch) * inner..(o * c + ch + 1) * inner)
        };
        let batch = stats.is_none();
        let (mean, var) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mean: Vec<f64> = (0..c)
                    .map(|ch| rows(ch).map(|r| x[r].iter().sum::<f64>()).sum::<f64>() / n)
                    .collect();
                let var = (0..c)
                    .map(|ch| {
                        rows(ch)
                            .map(|r| x[r].iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>())
                            .sum::<f64>()
                            / n
                    })
                    .collect();
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let (g_, b_) = (gamma.data(), beta.data());
        for ch in 0..c {
            for r in rows(ch) {
                for i in r {
                    xhat[i] = (x[i] - mean[ch]) * inv_std[ch];
                    out[i] = g_[ch] * xhat[i] + b_[ch];
                }
            }
        }
        let y = Tensor::from_op(
            s.to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |ctx| {
                let g = ctx.grad;
                let gamma = ctx.parents[1].data();
                let mut gx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    for r in rows(ch) {
                        for i in r {
                            dbeta[ch] += g[i];
                            dgamma[ch] += g[i] * xhat[i];
                        }
                    }
                    let scale = gamma[ch] * inv_std[ch];
                    let (mg, mgx) = if batch {
                        (dbeta[ch] / n, dgamma[ch] / n)
                    } else {
                        (0.0, 0.0)
                    };
                    for r in rows(ch) {
                        for i in r {
                            gx[i] = scale * (g[i] - mg - xhat[i] * mgx);
                        }
                    }
                }
                vec![Some(gx), Some(dgamma), Some(dbeta)]
            },
        );
        Ok((y, mean, var))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
