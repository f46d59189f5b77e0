use std::collections::HashMap;

use rand::Rng;

use crate::tensor::Tensor;

/// Handle to one entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// `false` for running statistics and other state the optimizer must not touch.
    pub trainable: bool,
}

/// Flat, ordered storage for every parameter and buffer of a model, keyed by
/// hierarchical dotted names. Plain data: `Send + Sync`, cheap to clone.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, entry: ParamEntry) -> ParamId {
        assert!(
            !self.index.contains_key(&entry.name),
            "duplicate parameter name {}",
            entry.name
        );
        let id = self.entries.len();
        self.index.insert(entry.name.clone(), id);
        self.entries.push(entry);
        ParamId(id)
    }

    pub fn param<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Glorot { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        self.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data,
            trainable: true,
        })
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
            trainable: false,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.data.len())
            .sum()
    }

    /// Sum of trainable scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable && e.name.starts_with(prefix))
            .map(|e| e.data.len())
            .sum()
    }

    /// Fresh graph leaves for one forward pass. Trainable entries collect gradients
    /// when `track_grad` is set; buffers are always constants.
    pub fn bind(&self, track_grad: bool) -> Bindings {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                let t = if track_grad && e.trainable {
                    Tensor::param(&e.shape, e.data.clone())
                } else {
                    Tensor::new(&e.shape, e.data.clone())
                };
                t.expect("parameter entry shape matches its data")
            })
            .collect();
        Bindings { tensors }
    }
}

/// Per-forward view of a [`ParamStore`] as graph tensors, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings {
    tensors: Vec<Tensor>,
}

impl Bindings {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Bindings { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Gradients after `backward`, aligned with the store's entries.
    pub fn grads(&self) -> Vec<Option<Vec<f64>>> {
        self.tensors.iter().map(Tensor::grad).collect()
    }
}
