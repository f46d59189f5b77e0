use rand::Rng;

use super::{Activation, AtrousConv2d, Ctx, Dense, Init, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-MLP reduction ratio shared by CBAM and SE.
pub const REDUCTION: usize = 16;
/// Spatial attention kernel of CBAM.
pub const SPATIAL_KERNEL: usize = 7;

fn reduced(channels: usize) -> usize {
    (channels / REDUCTION).max(1)
}

fn check_feature_map(layer: &str, x: &Tensor, channels: usize) -> Result<()> {
    if x.rank() != 4 || x.shape()[1] != channels {
        return Err(Error::ChannelMismatch {
            layer: layer.into(),
            expected: channels,
            got: x.shape().get(1).copied().unwrap_or(0),
        });
    }
    Ok(())
}

/// Convolutional block attention: a channel gate from a shared MLP over average- and
/// max-pooled descriptors, then a spatial gate from a 7×7 convolution over the
/// channel-wise mean and max maps. Both gates are sigmoids, so outputs never exceed
/// inputs in magnitude.
#[derive(Clone, Debug)]
pub struct Cbam {
    pub mlp_in: Dense,
    pub mlp_out: Dense,
    pub spatial: AtrousConv2d,
    pub channels: usize,
}

impl Cbam {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        let hidden = reduced(channels);
        Cbam {
            mlp_in: Dense::new(store, &format!("{prefix}.mlp_in"), channels, hidden, rng),
            mlp_out: Dense::new(store, &format!("{prefix}.mlp_out"), hidden, channels, rng),
            spatial: AtrousConv2d::new(
                store,
                &format!("{prefix}.spatial"),
                2,
                1,
                (SPATIAL_KERNEL, SPATIAL_KERNEL),
                (1, 1),
                rng,
            ),
            channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.mlp_in.param_count() + self.mlp_out.param_count() + self.spatial.param_count()
    }

    /// Element-wise work at 1 FLOP per scalar op plus the MLP and 7×7 convolution.
    pub fn flops(&self, h: usize, w: usize) -> usize {
        let (c, hw) = (self.channels, h * w);
        let channel_gate = 2 * c * hw // avg + max pooling
            + 2 * (self.mlp_in.flops() + self.mlp_out.flops() + self.mlp_in.outputs)
            + 2 * c // add + sigmoid
            + c * hw; // gating
        let spatial_gate = 2 * c * hw + self.spatial.flops(h, w) + hw + c * hw;
        channel_gate + spatial_gate
    }

    fn mlp(&self, ctx: &Ctx<'_>, v: &Tensor) -> Result<Tensor> {
        let hidden = self.mlp_in.forward(ctx, v, Activation::Relu)?;
        self.mlp_out.forward(ctx, &hidden, Activation::Identity)
    }

    /// Channel attention map `(N, C)` in (0, 1).
    pub fn channel_gate(&self, ctx: &Ctx<'_>, f: &Tensor) -> Result<Tensor> {
        let s = f.shape();
        let flat = f.reshape(&[s[0], s[1], s[2] * s[3]])?;
        let avg = flat.mean_axis(2, false)?;
        let max = flat.max_axis(2, false)?;
        Ok(self.mlp(ctx, &avg)?.add(&self.mlp(ctx, &max)?)?.sigmoid())
    }

    /// Spatial attention map `(N, 1, H, W)` in (0, 1).
    pub fn spatial_gate(&self, ctx: &Ctx<'_>, f: &Tensor) -> Result<Tensor> {
        let mean = f.mean_axis(1, true)?;
        let max = f.max_axis(1, true)?;
        let pooled = Tensor::concat(&[mean, max], 1)?;
        self.spatial.forward(ctx, &pooled, Activation::Sigmoid)
    }

    pub fn forward(&self, ctx: &Ctx<'_>, f: &Tensor) -> Result<Tensor> {
        check_feature_map("cbam", f, self.channels)?;
        let s = f.shape();
        let mc = self.channel_gate(ctx, f)?.reshape(&[s[0], s[1], 1, 1])?;
        let refined = f.mul(&mc)?;
        let ms = self.spatial_gate(ctx, &refined)?;
        refined.mul(&ms)
    }
}

/// Squeeze-and-excitation: `x ⊗ sigmoid(W₂·relu(W₁·gap(x)))` broadcast over space.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub squeeze: Dense,
    pub excite: Dense,
    pub channels: usize,
}

impl SeBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) -> Self {
        let hidden = reduced(channels);
        SeBlock {
            squeeze: Dense::new(store, &format!("{prefix}.squeeze"), channels, hidden, rng),
            excite: Dense::new(store, &format!("{prefix}.excite"), hidden, channels, rng),
            channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.excite.param_count()
    }

    pub fn flops(&self, h: usize, w: usize) -> usize {
        let (c, hw) = (self.channels, h * w);
        c * hw + self.squeeze.flops() + self.squeeze.outputs + self.excite.flops() + c + c * hw
    }

    pub fn forward(&self, ctx: &Ctx<'_>, f: &Tensor) -> Result<Tensor> {
        check_feature_map("se_block", f, self.channels)?;
        let s = f.shape();
        let pooled = f.global_avg_pool()?;
        let hidden = self.squeeze.forward(ctx, &pooled, Activation::Relu)?;
        let scale = self.excite.forward(ctx, &hidden, Activation::Sigmoid)?;
        f.mul(&scale.reshape(&[s[0], s[1], 1, 1])?)
    }
}

/// Additive attention over time conditioned on the last hidden state:
/// `score_t = vᵀ·tanh(W₁·h_t + W₂·h_m + b)`, `α = softmax(score)`, output `Σ α_t·h_t`.
#[derive(Clone, Debug)]
pub struct TemporalAttention {
    pub w_step: ParamId,
    pub w_last: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
    pub features: usize,
    pub attention: usize,
}

impl TemporalAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        features: usize,
        attention: usize,
        rng: &mut R,
    ) -> Self {
        let glorot = Init::Glorot {
            fan_in: features,
            fan_out: attention,
        };
        TemporalAttention {
            w_step: store.param(
                format!("{prefix}.w_step"),
                &[features, attention],
                glorot,
                rng,
            ),
            w_last: store.param(
                format!("{prefix}.w_last"),
                &[features, attention],
                glorot,
                rng,
            ),
            bias: store.param(format!("{prefix}.bias"), &[attention], Init::Zeros, rng),
            score: store.param(
                format!("{prefix}.score"),
                &[attention, 1],
                Init::Glorot {
                    fan_in: attention,
                    fan_out: 1,
                },
                rng,
            ),
            features,
            attention,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.features * self.attention + 2 * self.attention
    }

    pub fn flops(&self, steps: usize) -> usize {
        let (f, a) = (self.features, self.attention);
        let projections = steps * 2 * f * a + (2 * f * a + a);
        let scores = steps * (a + a + 2 * a); // add, tanh, dot
        let softmax = 3 * steps;
        let pooling = 2 * steps * f;
        projections + scores + softmax + pooling
    }

    /// Attention weights `(N, m)`.
    pub fn weights(&self, ctx: &Ctx<'_>, h: &Tensor) -> Result<Tensor> {
        let (n, m, f) = self.check(h)?;
        let a = self.attention;
        let step = h
            .reshape(&[n * m, f])?
            .matmul(ctx.param(self.w_step))?
            .reshape(&[n, m, a])?;
        let last = h
            .slice(1, m - 1, m)?
            .reshape(&[n, f])?
            .matmul(ctx.param(self.w_last))?
            .add(&ctx.param(self.bias).reshape(&[1, a])?)?
            .reshape(&[n, 1, a])?;
        let energy = step.add(&last)?.tanh();
        let scores = energy
            .reshape(&[n * m, a])?
            .matmul(ctx.param(self.score))?
            .reshape(&[n, m])?;
        scores.softmax(1)
    }

    fn check(&self, h: &Tensor) -> Result<(usize, usize, usize)> {
        let s = h.shape();
        if s.len() != 3 || s[2] != self.features {
            return Err(Error::ShapeMismatch {
                op: "temporal_attention",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.features],
            });
        }
        if s[1] == 0 {
            return Err(Error::EmptySequence("temporal_attention"));
        }
        Ok((s[0], s[1], s[2]))
    }

    /// `(N, m, F) -> (N, F)`.
    pub fn forward(&self, ctx: &Ctx<'_>, h: &Tensor) -> Result<Tensor> {
        let (n, m, _) = self.check(h)?;
        let alpha = self.weights(ctx, h)?.reshape(&[n, m, 1])?;
        h.mul(&alpha)?.sum_axis(1, false)
    }
}

/// Additive attention across modality embeddings: `s_i = uᵀ·tanh(W·v_i + b)`,
/// `β = softmax(s)`, output `Σ β_i·v_i`. The score map is shared by all modalities.
#[derive(Clone, Debug)]
pub struct ModalityAttention {
    pub weight: ParamId,
    pub bias: ParamId,
    pub score: ParamId,
    pub features: usize,
    pub attention: usize,
}

impl ModalityAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        features: usize,
        attention: usize,
        rng: &mut R,
    ) -> Self {
        ModalityAttention {
            weight: store.param(
                format!("{prefix}.weight"),
                &[features, attention],
                Init::Glorot {
                    fan_in: features,
                    fan_out: attention,
                },
                rng,
            ),
            bias: store.param(format!("{prefix}.bias"), &[attention], Init::Zeros, rng),
            score: store.param(
                format!("{prefix}.score"),
                &[attention, 1],
                Init::Glorot {
                    fan_in: attention,
                    fan_out: 1,
                },
                rng,
            ),
            features,
            attention,
        }
    }

    pub fn param_count(&self) -> usize {
        self.features * self.attention + 2 * self.attention
    }

    pub fn flops(&self, modalities: usize) -> usize {
        let (f, a) = (self.features, self.attention);
        modalities * (2 * f * a + a + a + 2 * a) + 3 * modalities + 2 * modalities * f
    }

    fn stack(&self, inputs: &[Tensor]) -> Result<Tensor> {
        let first = inputs
            .first()
            .ok_or(Error::EmptySequence("modality_attention"))?;
        let n = first.shape().first().copied().unwrap_or(0);
        let rows = inputs
            .iter()
            .map(|v| {
                if v.shape() != [n, self.features] {
                    return Err(Error::ShapeMismatch {
                        op: "modality_attention",
                        lhs: vec![n, self.features],
                        rhs: v.shape().to_vec(),
                    });
                }
                v.reshape(&[n, 1, self.features])
            })
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat(&rows, 1)
    }

    /// Fusion weights `(N, k)` for `k` modality embeddings of shape `(N, F)`.
    pub fn weights(&self, ctx: &Ctx<'_>, inputs: &[Tensor]) -> Result<Tensor> {
        let stacked = self.stack(inputs)?;
        self.weights_stacked(ctx, &stacked)
    }

    fn weights_stacked(&self, ctx: &Ctx<'_>, stacked: &Tensor) -> Result<Tensor> {
        let (n, k) = (stacked.shape()[0], stacked.shape()[1]);
        let a = self.attention;
        let energy = stacked
            .reshape(&[n * k, self.features])?
            .matmul(ctx.param(self.weight))?
            .add(&ctx.param(self.bias).reshape(&[1, a])?)?
            .tanh();
        energy
            .matmul(ctx.param(self.score))?
            .reshape(&[n, k])?
            .softmax(1)
    }

    pub fn forward(&self, ctx: &Ctx<'_>, inputs: &[Tensor]) -> Result<Tensor> {
        let stacked = self.stack(inputs)?;
        let (n, k) = (stacked.shape()[0], stacked.shape()[1]);
        let beta = self.weights_stacked(ctx, &stacked)?.reshape(&[n, k, 1])?;
        stacked.mul(&beta)?.sum_axis(1, false)
    }
}
