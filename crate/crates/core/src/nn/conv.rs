use rand::Rng;

use super::{Activation, Ctx, Init, Mode, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dilated convolution with "same" zero padding: input `(N, C, H, W)`, output
/// `(N, K, H, W)`. Dilation `(r1, r2)` spaces taps along the row (time) and column
/// (joint) axes.
#[derive(Clone, Debug)]
pub struct AtrousConv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
}

impl AtrousConv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        dilation: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let area = kernel.0 * kernel.1;
        let weight = store.param(
            format!("{prefix}.weight"),
            &[out_channels, in_channels, kernel.0, kernel.1],
            Init::Glorot {
                fan_in: in_channels * area,
                fan_out: out_channels * area,
            },
            rng,
        );
        let bias = store.param(format!("{prefix}.bias"), &[out_channels], Init::Zeros, rng);
        AtrousConv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            dilation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 + self.out_channels
    }

    /// `2·K·C·kh·kw·H·W` per image.
    pub fn flops(&self, h: usize, w: usize) -> usize {
        2 * self.out_channels * self.in_channels * self.kernel.0 * self.kernel.1 * h * w
    }

    pub fn forward(&self, ctx: &Ctx<'_>, x: &Tensor, activation: Activation) -> Result<Tensor> {
        let c = if x.rank() == 4 {
            x.shape()[1]
        } else {
            x.shape().first().copied().unwrap_or(0)
        };
        if c != self.in_channels {
            return Err(Error::ChannelMismatch {
                layer: "atrous_conv2d".into(),
                expected: self.in_channels,
                got: c,
            });
        }
        let y = x.conv2d(
            ctx.param(self.weight),
            Some(ctx.param(self.bias)),
            self.dilation,
        )?;
        Ok(activation.apply(&y))
    }
}

/// Per-channel batch normalisation over every axis except axis 1.
///
/// Train mode normalises with batch statistics and records running-statistic updates
/// (`running = momentum·running + (1 − momentum)·batch`, unbiased batch variance);
/// eval mode uses the running statistics only.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.9;
    pub const EPSILON: f64 = 1e-5;

    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        BatchNorm {
            gamma: store.param(format!("{prefix}.gamma"), &[channels], Init::Ones, rng),
            beta: store.param(format!("{prefix}.beta"), &[channels], Init::Zeros, rng),
            running_mean: store.buffer(format!("{prefix}.running_mean"), &[channels], 0.0),
            running_var: store.buffer(format!("{prefix}.running_var"), &[channels], 1.0),
            channels,
            momentum: Self::MOMENTUM,
            epsilon: Self::EPSILON,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Tensor) -> Result<Tensor> {
        if x.rank() < 2 || x.shape()[1] != self.channels {
            return Err(Error::ChannelMismatch {
                layer: "batch_norm".into(),
                expected: self.channels,
                got: x.shape().get(1).copied().unwrap_or(0),
            });
        }
        let (gamma, beta) = (ctx.param(self.gamma), ctx.param(self.beta));
        match ctx.mode() {
            Mode::Train => {
                let (y, mean, var) = x.batch_norm(gamma, beta, None, self.epsilon)?;
                let n = x.numel() / self.channels;
                let unbias = if n > 1 {
                    n as f64 / (n - 1) as f64
                } else {
                    1.0
                };
                let m = self.momentum;
                let rm = ctx.param(self.running_mean).data();
                let rv = ctx.param(self.running_var).data();
                let new_mean = rm
                    .iter()
                    .zip(&mean)
                    .map(|(r, b)| m * r + (1.0 - m) * b)
                    .collect();
                let new_var = rv
                    .iter()
                    .zip(&var)
                    .map(|(r, b)| m * r + (1.0 - m) * b * unbias)
                    .collect();
                ctx.record_stat(self.running_mean, new_mean);
                ctx.record_stat(self.running_var, new_var);
                Ok(y)
            }
            Mode::Eval => {
                let stats = (
                    ctx.param(self.running_mean).data(),
                    ctx.param(self.running_var).data(),
                );
                Ok(x.batch_norm(gamma, beta, Some(stats), self.epsilon)?.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Bindings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn zero_weights_constant_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = AtrousConv2d::new(&mut store, "c", 2, 3, (3, 3), (2, 1), &mut rng);
        store.get_mut(conv.weight).data.fill(0.0);
        store.get_mut(conv.bias).data.fill(-0.5);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = Tensor::full(&[1, 2, 5, 4], 3.0);
        let y = conv.forward(&ctx, &x, Activation::LeakyRelu).unwrap();
        assert_eq!(y.shape(), &[1, 3, 5, 4]);
        assert!(y.data().iter().all(|&v| v == -0.1));
        let bad = Tensor::zeros(&[1, 3, 5, 4]);
        assert!(matches!(
            conv.forward(&ctx, &bad, Activation::Identity),
            Err(Error::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn train_mode_standardises_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 3, &mut rng);
        let normal = Normal::new(2.0, 10.0).unwrap();
        let x: Vec<f64> = (0..64 * 3).map(|_| normal.sample(&mut rng)).collect();
        let x = Tensor::new(&[64, 3], x).unwrap();
        let bind = store.bind(true);
        let mut ctx = Ctx::new(&bind, Mode::Train, 0);
        let y = bn.forward(&mut ctx, &x).unwrap();
        for c in 0..3 {
            let col: Vec<f64> = (0..64).map(|i| y.data()[i * 3 + c]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-9, "{mean}");
            // epsilon shifts the variance by about eps/var = 1e-7 here
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
        let updates = ctx.take_stat_updates();
        assert_eq!(updates.len(), 2);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 2, &mut rng);
        store.get_mut(bn.running_mean).data = vec![1.0, -1.0];
        store.get_mut(bn.running_var).data =
            vec![4.0 - BatchNorm::EPSILON, 1.0 - BatchNorm::EPSILON];
        let bind: Bindings = store.bind(false);
        let mut ctx = Ctx::new(&bind, Mode::Eval, 0);
        let x = Tensor::new(&[1, 2, 1, 1], vec![3.0, 0.0]).unwrap();
        let y = bn.forward(&mut ctx, &x).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        assert!(ctx.take_stat_updates().is_empty());
    }
}
