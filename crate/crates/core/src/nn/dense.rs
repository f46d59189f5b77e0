use rand::Rng;

use super::{Activation, Ctx, Init, Mode, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `activation(x·W + b)` over a `(N, in)` batch; `W` is stored `in × out`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.param(
            format!("{prefix}.weight"),
            &[inputs, outputs],
            Init::Glorot {
                fan_in: inputs,
                fan_out: outputs,
            },
            rng,
        );
        let bias = store.param(format!("{prefix}.bias"), &[outputs], Init::Zeros, rng);
        Dense {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    pub fn flops(&self) -> usize {
        2 * self.inputs * self.outputs + self.outputs
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Tensor, activation: Activation) -> Result<Tensor> {
        if x.rank() != 2 || x.shape()[1] != self.inputs {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: x.shape().to_vec(),
                rhs: vec![self.inputs, self.outputs],
            });
        }
        let b = ctx.param(self.bias).reshape(&[1, self.outputs])?;
        let y = x.matmul(ctx.param(self.weight))?.add(&b)?;
        Ok(activation.apply(&y))
    }
}

/// Inverted dropout: in train mode each entry is zeroed with probability `rate` and
/// survivors are scaled by `1 / (1 − rate)`. Identity in eval mode or at rate 0.
pub fn dropout(ctx: &mut Ctx<'_>, x: &Tensor, rate: f64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Layer(format!("dropout rate {rate} outside [0, 1)")));
    }
    if ctx.mode() == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let rng = ctx.rng();
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect();
    x.mul(&Tensor::new(x.shape(), mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Bindings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_counts() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "head", 64, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(d.param_count(), 65);
        assert_eq!(d.flops(), 129);
        assert_eq!(store.trainable_count(), 65);
    }

    #[test]
    fn dropout_modes() {
        let bind = Bindings::from_tensors(vec![]);
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut train = Ctx::new(&bind, Mode::Train, 3);
        assert_eq!(dropout(&mut train, &x, 0.0).unwrap().data(), x.data());
        let mut eval = Ctx::new(&bind, Mode::Eval, 3);
        assert_eq!(dropout(&mut eval, &x, 0.5).unwrap().data(), x.data());
        let y = dropout(&mut train, &x, 0.5).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
        assert!(dropout(&mut train, &x, 1.0).is_err());
    }

    #[test]
    fn dropout_keeps_expected_fraction() {
        let bind = Bindings::from_tensors(vec![]);
        let x = Tensor::full(&[10_000], 1.0);
        let mut ctx = Ctx::new(&bind, Mode::Train, 11);
        let y = dropout(&mut ctx, &x, 0.5).unwrap();
        let kept = y.data().iter().filter(|&&v| v > 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.5).abs() < 0.03, "{kept}");
    }
}
