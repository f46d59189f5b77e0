//! Parameterised layers. Every layer holds [`ParamId`]s into a [`ParamStore`] and reads
//! the live tensors from a [`Ctx`] at forward time, so one set of layer descriptors
//! serves training, evaluation and gradient checks alike.

mod attention;
mod conv;
mod dense;
mod params;
mod recurrent;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub use attention::{Cbam, ModalityAttention, SeBlock, TemporalAttention};
pub use conv::{AtrousConv2d, BatchNorm};
pub use dense::{dropout, Dense};
pub use params::{Bindings, Init, ParamEntry, ParamId, ParamStore};
pub use recurrent::{Direction, GruLayer, RecurrentBlock, RecurrentKind};

/// Slope of the leaky ReLU used throughout the convolutional stream.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    LeakyRelu,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// State threaded through one forward pass.
pub struct Ctx<'a> {
    bind: &'a Bindings,
    mode: Mode,
    rng: ChaCha8Rng,
    stat_updates: Vec<(ParamId, Vec<f64>)>,
}

impl<'a> Ctx<'a> {
    /// `seed` drives dropout masks; it is unused in eval mode.
    pub fn new(bind: &'a Bindings, mode: Mode, seed: u64) -> Self {
        Ctx {
            bind,
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        self.bind.get(id)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn record_stat(&mut self, id: ParamId, value: Vec<f64>) {
        self.stat_updates.push((id, value));
    }

    /// Buffer updates (batch-norm running statistics) produced in train mode.
    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        std::mem::take(&mut self.stat_updates)
    }
}
