use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{AttentionKind, ModelConfig};
use crate::error::{Error, Result};
use crate::features::{ContextStats, EncodedSample};
use crate::nn::{
    dropout, Activation, AtrousConv2d, BatchNorm, Cbam, Ctx, Dense, ModalityAttention, Mode,
    ParamId, ParamStore, RecurrentBlock, SeBlock, TemporalAttention,
};
use crate::tensor::Tensor;

const KERNEL: (usize, usize) = (3, 3);

/// Model inputs for a batch of `len` windows; only enabled streams are populated.
#[derive(Clone, Debug)]
pub struct Batch {
    pub len: usize,
    /// `(N, d, m, J)`, channel-first pseudo-images.
    pub pseudo_image: Option<Tensor>,
    /// `(N, m, P)`.
    pub jcd: Option<Tensor>,
    /// `(N, m, 4)`.
    pub bbox: Option<Tensor>,
    /// `(N, m, 1)`.
    pub speed: Option<Tensor>,
}

impl Batch {
    pub fn from_samples(config: &ModelConfig, samples: &[&EncodedSample]) -> Result<Batch> {
        let n = samples.len();
        if n == 0 {
            return Err(Error::Layer("empty batch".into()));
        }
        let (m, j, d) = (config.frames, config.joints, config.coord_dim);
        let s = &config.streams;
        let mut image = Vec::with_capacity(if s.pseudo_image { n * m * j * d } else { 0 });
        let mut jcd = Vec::new();
        let mut bbox = Vec::new();
        let mut speed = Vec::new();
        for sample in samples {
            if sample.pseudo_image.shape() != [m, j, d] {
                return Err(Error::ShapeMismatch {
                    op: "batch.pseudo_image",
                    lhs: sample.pseudo_image.shape().to_vec(),
                    rhs: vec![m, j, d],
                });
            }
            if s.pseudo_image {
                image.extend(sample.pseudo_image.channels_first());
            }
            if s.jcd {
                jcd.extend_from_slice(sample.jcd.values());
            }
            if s.bbox {
                if sample.context.boxes.len() != m {
                    return Err(Error::MissingStream("bbox"));
                }
                bbox.extend(sample.context.flat_boxes());
            }
            if s.speed {
                if !sample.context.speed_present || sample.context.speed.len() != m {
                    return Err(Error::MissingStream("speed"));
                }
                speed.extend_from_slice(&sample.context.speed);
            }
        }
        let pairs = config.pairs();
        Ok(Batch {
            len: n,
            pseudo_image: s
                .pseudo_image
                .then(|| Tensor::new(&[n, d, m, j], image))
                .transpose()?,
            jcd: s
                .jcd
                .then(|| Tensor::new(&[n, m, pairs], jcd))
                .transpose()?,
            bbox: s.bbox.then(|| Tensor::new(&[n, m, 4], bbox)).transpose()?,
            speed: s
                .speed
                .then(|| Tensor::new(&[n, m, 1], speed))
                .transpose()?,
        })
    }
}

#[derive(Clone, Debug)]
pub(crate) enum ConvAttention {
    Cbam(Cbam),
    Se(SeBlock),
}

#[derive(Clone, Debug)]
pub(crate) struct Stage {
    pub conv: AtrousConv2d,
    pub attention: Option<ConvAttention>,
    pub norm: BatchNorm,
}

#[derive(Clone, Debug)]
pub(crate) struct Branch {
    pub stages: Vec<Stage>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    Jcd,
    Bbox,
    Speed,
}

impl StreamKind {
    pub fn name(self) -> &'static str {
        match self {
            StreamKind::Jcd => "jcd",
            StreamKind::Bbox => "bbox",
            StreamKind::Speed => "speed",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Stream {
    pub kind: StreamKind,
    pub blocks: Vec<RecurrentBlock>,
    pub attention: TemporalAttention,
}

/// Parallel atrous branches over the pose pseudo-image plus recurrent streams over JCD,
/// boxes and speed, fused by modality attention into a single crossing probability.
#[derive(Clone, Debug)]
pub struct TrouSpiNet {
    pub(crate) config: ModelConfig,
    pub(crate) store: ParamStore,
    pub(crate) branches: Vec<Branch>,
    pub(crate) streams: Vec<Stream>,
    pub(crate) modality: ModalityAttention,
    pub(crate) head: Dense,
    pub(crate) context_stats: Option<ContextStats>,
}

impl TrouSpiNet {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let k = config.feature_maps;
        let mut branches = Vec::new();
        if config.streams.pseudo_image {
            for (b, &dilation) in config.branches.iter().enumerate() {
                let stages = (0..config.blocks_per_branch)
                    .map(|s| {
                        let prefix = format!("branch{b}.stage{s}");
                        let in_ch = if s == 0 { config.coord_dim } else { k };
                        let conv = AtrousConv2d::new(
                            &mut store,
                            &format!("{prefix}.conv"),
                            in_ch,
                            k,
                            KERNEL,
                            dilation,
                            &mut rng,
                        );
                        let attention = match config.attention_kind {
                            AttentionKind::Cbam => Some(ConvAttention::Cbam(Cbam::new(
                                &mut store,
                                &format!("{prefix}.cbam"),
                                k,
                                &mut rng,
                            ))),
                            AttentionKind::Se => Some(ConvAttention::Se(SeBlock::new(
                                &mut store,
                                &format!("{prefix}.se"),
                                k,
                                &mut rng,
                            ))),
                            AttentionKind::None => None,
                        };
                        let norm = BatchNorm::new(&mut store, &format!("{prefix}.bn"), k, &mut rng);
                        Stage {
                            conv,
                            attention,
                            norm,
                        }
                    })
                    .collect();
                branches.push(Branch { stages });
            }
        }
        let h = config.hidden;
        let mut streams = Vec::new();
        for (kind, enabled, input_size) in [
            (StreamKind::Jcd, config.streams.jcd, config.pairs()),
            (StreamKind::Bbox, config.streams.bbox, 4),
            (StreamKind::Speed, config.streams.speed, 1),
        ] {
            if !enabled {
                continue;
            }
            let name = kind.name();
            let blocks = (0..config.recurrent_blocks_per_stream)
                .map(|i| {
                    let d = if i == 0 { input_size } else { h };
                    RecurrentBlock::new(
                        &mut store,
                        &format!("{name}.block{i}"),
                        config.recurrent_kind,
                        d,
                        h,
                        &mut rng,
                    )
                })
                .collect();
            let attention =
                TemporalAttention::new(&mut store, &format!("{name}.attention"), h, h, &mut rng);
            streams.push(Stream {
                kind,
                blocks,
                attention,
            });
        }
        let modality = ModalityAttention::new(&mut store, "modality", h, h, &mut rng);
        let head = Dense::new(&mut store, "head", h, 1, &mut rng);
        Ok(TrouSpiNet {
            config,
            store,
            branches,
            streams,
            modality,
            head,
            context_stats: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Train-split speed statistics used to standardise inputs, if fitted.
    pub fn context_stats(&self) -> Option<&ContextStats> {
        self.context_stats.as_ref()
    }

    pub fn set_context_stats(&mut self, stats: Option<ContextStats>) {
        self.context_stats = stats;
    }

    /// Number of embeddings entering modality attention.
    pub fn modality_count(&self) -> usize {
        usize::from(!self.branches.is_empty()) + self.streams.len()
    }

    /// Weight matrix of the final dense layer, the target of the L2 penalty.
    pub fn final_weight(&self) -> ParamId {
        self.head.weight
    }

    pub fn stream_kinds(&self) -> Vec<StreamKind> {
        self.streams.iter().map(|s| s.kind).collect()
    }

    pub fn batch(&self, samples: &[&EncodedSample]) -> Result<Batch> {
        Batch::from_samples(&self.config, samples)
    }

    fn run_branch(&self, ctx: &mut Ctx<'_>, branch: &Branch, image: &Tensor) -> Result<Tensor> {
        let mut x = image.clone();
        for stage in &branch.stages {
            x = stage.conv.forward(ctx, &x, Activation::LeakyRelu)?;
            x = match &stage.attention {
                Some(ConvAttention::Cbam(a)) => a.forward(ctx, &x)?,
                Some(ConvAttention::Se(a)) => a.forward(ctx, &x)?,
                None => x,
            };
            x = stage.norm.forward(ctx, &x)?;
            x = x.max_pool2d()?;
        }
        x.global_avg_pool()
    }

    /// Sum of the per-branch pooled vectors, `(N, feature_maps)`.
    pub fn branch_vector(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Option<Tensor>> {
        if self.branches.is_empty() {
            return Ok(None);
        }
        let image = batch
            .pseudo_image
            .as_ref()
            .ok_or(Error::MissingStream("pseudo_image"))?;
        let mut sum: Option<Tensor> = None;
        for branch in &self.branches {
            let v = self.run_branch(ctx, branch, image)?;
            sum = Some(match sum {
                Some(s) => s.add(&v)?,
                None => v,
            });
        }
        Ok(sum)
    }

    fn stream_input(batch: &Batch, kind: StreamKind) -> Result<&Tensor> {
        let t = match kind {
            StreamKind::Jcd => &batch.jcd,
            StreamKind::Bbox => &batch.bbox,
            StreamKind::Speed => &batch.speed,
        };
        t.as_ref().ok_or(Error::MissingStream(kind.name()))
    }

    /// Per-modality embeddings `(N, hidden)` in fusion order.
    pub fn embeddings(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.modality_count());
        if let Some(v) = self.branch_vector(ctx, batch)? {
            out.push(v);
        }
        for stream in &self.streams {
            let mut h = Self::stream_input(batch, stream.kind)?.clone();
            for block in &stream.blocks {
                h = block.forward(ctx, &h)?;
            }
            out.push(stream.attention.forward(ctx, &h)?);
        }
        Ok(out)
    }

    /// Crossing probabilities `(N)`.
    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Tensor> {
        let embeddings = self.embeddings(ctx, batch)?;
        let fused = self.modality.forward(ctx, &embeddings)?;
        let fused = dropout(ctx, &fused, self.config.dropout)?;
        self.head
            .forward(ctx, &fused, Activation::Sigmoid)?
            .reshape(&[batch.len])
    }

    /// Writes batch-norm running statistics recorded during a train-mode forward.
    pub fn apply_stat_updates(&mut self, updates: Vec<(ParamId, Vec<f64>)>) {
        for (id, value) in updates {
            self.store.get_mut(id).data = value;
        }
    }

    /// Eval-mode probabilities, processed in chunks of `chunk` samples.
    pub fn predict_chunked(&self, samples: &[EncodedSample], chunk: usize) -> Result<Vec<f64>> {
        let bind = self.store.bind(false);
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(chunk.max(1)) {
            let refs: Vec<&EncodedSample> = part.iter().collect();
            let batch = self.batch(&refs)?;
            let mut ctx = Ctx::new(&bind, Mode::Eval, 0);
            out.extend_from_slice(self.forward(&mut ctx, &batch)?.data());
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &[EncodedSample]) -> Result<Vec<f64>> {
        self.predict_chunked(samples, 32)
    }
}
