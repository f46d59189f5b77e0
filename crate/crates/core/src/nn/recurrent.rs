use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Ctx, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// GRU with the reset gate applied to the hidden state before the candidate's
/// recurrent product:
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// h̃  = tanh(Wh·x + Uh·(r ⊗ h) + bh)
/// h' = (1 − z) ⊗ h + z ⊗ h̃
/// ```
///
/// The three gates are stacked column-wise as `[z | r | h]`: `w_input` is `D × 3H`,
/// `w_hidden` is `H × 3H`, `bias` is `3H`.
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let gates = 3 * hidden;
        GruLayer {
            w_input: store.param(
                format!("{prefix}.w_input"),
                &[input_size, gates],
                Init::Glorot {
                    fan_in: input_size,
                    fan_out: gates,
                },
                rng,
            ),
            w_hidden: store.param(
                format!("{prefix}.w_hidden"),
                &[hidden, gates],
                Init::Glorot {
                    fan_in: hidden,
                    fan_out: gates,
                },
                rng,
            ),
            bias: store.param(format!("{prefix}.bias"), &[gates], Init::Zeros, rng),
            input_size,
            hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        3 * (self.input_size * self.hidden + self.hidden * self.hidden + self.hidden)
    }

    /// `3·(2·D·H + 2·H² + 3·H)` per time step.
    pub fn flops_per_step(&self) -> usize {
        let (d, h) = (self.input_size, self.hidden);
        3 * (2 * d * h + 2 * h * h + 3 * h)
    }

    /// One step given the pre-computed input projection `x·W + b` of shape `(N, 3H)`.
    fn step(&self, projected: &Tensor, h: &Tensor, u_zr: &Tensor, u_h: &Tensor) -> Result<Tensor> {
        let hd = self.hidden;
        let recurrent = h.matmul(u_zr)?;
        let z = projected
            .slice(1, 0, hd)?
            .add(&recurrent.slice(1, 0, hd)?)?
            .sigmoid();
        let r = projected
            .slice(1, hd, 2 * hd)?
            .add(&recurrent.slice(1, hd, 2 * hd)?)?
            .sigmoid();
        let candidate = projected
            .slice(1, 2 * hd, 3 * hd)?
            .add(&r.mul(h)?.matmul(u_h)?)?
            .tanh();
        let keep = z.neg().add_scalar(1.0).mul(h)?;
        keep.add(&z.mul(&candidate)?)
    }

    fn split_hidden(&self, ctx: &Ctx<'_>) -> Result<(Tensor, Tensor)> {
        let u = ctx.param(self.w_hidden);
        Ok((
            u.slice(1, 0, 2 * self.hidden)?,
            u.slice(1, 2 * self.hidden, 3 * self.hidden)?,
        ))
    }

    /// Single cell update: `x` is `(N, D)`, `h` is `(N, H)`.
    pub fn cell(&self, ctx: &Ctx<'_>, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        if x.rank() != 2
            || x.shape()[1] != self.input_size
            || h.shape() != [x.shape()[0], self.hidden]
        {
            return Err(Error::ShapeMismatch {
                op: "gru_cell",
                lhs: x.shape().to_vec(),
                rhs: h.shape().to_vec(),
            });
        }
        let gates = 3 * self.hidden;
        let projected = x
            .matmul(ctx.param(self.w_input))?
            .add(&ctx.param(self.bias).reshape(&[1, gates])?)?;
        let (u_zr, u_h) = self.split_hidden(ctx)?;
        self.step(&projected, h, &u_zr, &u_h)
    }

    /// Runs the cell over a `(N, m, D)` sequence from a zero state. The output is
    /// time-aligned with the input; in reverse, row `t` is the state after consuming
    /// rows `m−1, …, t`.
    pub fn forward(&self, ctx: &Ctx<'_>, x: &Tensor, direction: Direction) -> Result<Tensor> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.input_size {
            return Err(Error::ShapeMismatch {
                op: "gru_layer",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.input_size],
            });
        }
        let (n, m, d) = (s[0], s[1], s[2]);
        if m == 0 {
            return Err(Error::EmptySequence("gru_layer"));
        }
        let gates = 3 * self.hidden;
        let projected = x
            .reshape(&[n * m, d])?
            .matmul(ctx.param(self.w_input))?
            .add(&ctx.param(self.bias).reshape(&[1, gates])?)?
            .reshape(&[n, m, gates])?;
        let (u_zr, u_h) = self.split_hidden(ctx)?;
        let mut h = Tensor::zeros(&[n, self.hidden]);
        let mut outputs: Vec<Option<Tensor>> = vec![None; m];
        let order: Box<dyn Iterator<Item = usize>> = match direction {
            Direction::Forward => Box::new(0..m),
            Direction::Reverse => Box::new((0..m).rev()),
        };
        for t in order {
            let xt = projected.slice(1, t, t + 1)?.reshape(&[n, gates])?;
            h = self.step(&xt, &h, &u_zr, &u_h)?;
            outputs[t] = Some(h.reshape(&[n, 1, self.hidden])?);
        }
        let outputs: Vec<Tensor> = outputs
            .into_iter()
            .map(|o| o.expect("every step visited"))
            .collect();
        Tensor::concat(&outputs, 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecurrentKind {
    /// Reverse GRU, concatenate with the input, then a forward GRU.
    Ugru,
    /// Forward and reverse GRUs over the same input, outputs summed.
    Bigru,
    /// A single forward GRU.
    Gru,
}

/// One recurrent block mapping `(N, m, D)` to `(N, m, H)`.
#[derive(Clone, Debug)]
pub enum RecurrentBlock {
    Ugru {
        reverse: GruLayer,
        forward: GruLayer,
    },
    Bigru {
        forward: GruLayer,
        reverse: GruLayer,
    },
    Gru(GruLayer),
}

impl RecurrentBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        kind: RecurrentKind,
        input_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            RecurrentKind::Ugru => {
                let reverse =
                    GruLayer::new(store, &format!("{prefix}.reverse"), input_size, hidden, rng);
                let forward = GruLayer::new(
                    store,
                    &format!("{prefix}.forward"),
                    hidden + input_size,
                    hidden,
                    rng,
                );
                RecurrentBlock::Ugru { reverse, forward }
            }
            RecurrentKind::Bigru => RecurrentBlock::Bigru {
                forward: GruLayer::new(
                    store,
                    &format!("{prefix}.forward"),
                    input_size,
                    hidden,
                    rng,
                ),
                reverse: GruLayer::new(
                    store,
                    &format!("{prefix}.reverse"),
                    input_size,
                    hidden,
                    rng,
                ),
            },
            RecurrentKind::Gru => RecurrentBlock::Gru(GruLayer::new(
                store,
                &format!("{prefix}.forward"),
                input_size,
                hidden,
                rng,
            )),
        }
    }

    pub fn layers(&self) -> Vec<&GruLayer> {
        match self {
            RecurrentBlock::Ugru { reverse, forward } => vec![reverse, forward],
            RecurrentBlock::Bigru { forward, reverse } => vec![forward, reverse],
            RecurrentBlock::Gru(layer) => vec![layer],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Recurrent FLOPs plus one per element for the BiGRU merge.
    pub fn flops(&self, steps: usize) -> usize {
        let cells: usize = self
            .layers()
            .iter()
            .map(|l| l.flops_per_step() * steps)
            .sum();
        match self {
            RecurrentBlock::Bigru { forward, .. } => cells + steps * forward.hidden,
            _ => cells,
        }
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Tensor) -> Result<Tensor> {
        match self {
            RecurrentBlock::Ugru { reverse, forward } => {
                let backward_pass = reverse.forward(ctx, x, Direction::Reverse)?;
                let joined = Tensor::concat(&[backward_pass, x.clone()], 2)?;
                forward.forward(ctx, &joined, Direction::Forward)
            }
            RecurrentBlock::Bigru { forward, reverse } => forward
                .forward(ctx, x, Direction::Forward)?
                .add(&reverse.forward(ctx, x, Direction::Reverse)?),
            RecurrentBlock::Gru(layer) => layer.forward(ctx, x, Direction::Forward),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn scalar_cell_hand_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, "g", 1, 1, &mut rng);
        store.get_mut(gru.w_input).data.fill(0.5);
        store.get_mut(gru.w_hidden).data.fill(0.5);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let h = Tensor::zeros(&[1, 1]);
        let next = gru.cell(&ctx, &x, &h).unwrap().item().unwrap();
        // z = σ(0.5) = 0.62246, h̃ = tanh(0.5) = 0.46212, h' = z·h̃ = 0.287649
        let z = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((next - z * 0.5f64.tanh()).abs() < 1e-15, "{next}");
        assert!((next - 0.28765).abs() < 1e-5, "{next}");
    }

    #[test]
    fn zero_weights_halve_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, "g", 3, 2, &mut rng);
        for e in store.entries_mut() {
            e.data.fill(0.0);
        }
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = random(&[1, 3], &mut rng);
        let h = Tensor::new(&[1, 2], vec![0.8, -0.4]).unwrap();
        assert_eq!(gru.cell(&ctx, &x, &h).unwrap().data(), &[0.4, -0.2]);
    }

    #[test]
    fn single_step_directions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, "g", 4, 3, &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = random(&[2, 1, 4], &mut rng);
        let f = gru.forward(&ctx, &x, Direction::Forward).unwrap();
        let r = gru.forward(&ctx, &x, Direction::Reverse).unwrap();
        assert_eq!(f.data(), r.data());
    }

    #[test]
    fn reverse_is_forward_on_flipped_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, "g", 4, 3, &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = random(&[2, 6, 4], &mut rng);
        let reverse = gru.forward(&ctx, &x, Direction::Reverse).unwrap();
        let flipped = gru
            .forward(&ctx, &x.reverse(1).unwrap(), Direction::Forward)
            .unwrap()
            .reverse(1)
            .unwrap();
        assert_eq!(reverse.data(), flipped.data());
    }

    #[test]
    fn block_shapes_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ugru = RecurrentBlock::new(&mut store, "u", RecurrentKind::Ugru, 153, 64, &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let y = ugru
            .forward(&ctx, &random(&[1, 16, 153], &mut rng))
            .unwrap();
        assert_eq!(y.shape(), &[1, 16, 64]);
        assert_eq!(ugru.param_count(), store.trainable_count());
        assert_eq!(
            ugru.param_count(),
            3 * (153 * 64 + 64 * 64 + 64) + 3 * (217 * 64 + 64 * 64 + 64)
        );
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gru = GruLayer::new(&mut store, "g", 2, 2, &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        assert!(matches!(
            gru.forward(&ctx, &Tensor::zeros(&[1, 0, 2]), Direction::Forward),
            Err(Error::EmptySequence(_))
        ));
    }
}
