use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RecurrentKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    Cbam,
    Se,
    None,
}

/// Which input streams feed the modality attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Streams {
    pub pseudo_image: bool,
    pub jcd: bool,
    pub bbox: bool,
    pub speed: bool,
}

impl Streams {
    pub fn count(&self) -> usize {
        [self.pseudo_image, self.jcd, self.bbox, self.speed]
            .iter()
            .filter(|&&s| s)
            .count()
    }
}

/// Every architectural knob of the network. Kernels are fixed at 3×3 and the attention
/// projections are `hidden` wide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Dilation `(r1, r2)` of each parallel convolution branch.
    pub branches: Vec<(usize, usize)>,
    pub blocks_per_branch: usize,
    pub feature_maps: usize,
    pub attention_kind: AttentionKind,
    pub recurrent_kind: RecurrentKind,
    pub recurrent_blocks_per_stream: usize,
    pub hidden: usize,
    pub streams: Streams,
    pub dropout: f64,
    /// L2 coefficient on the final dense weight.
    pub l2_final: f64,
    pub seed: u64,
    /// Observation length `m`.
    pub frames: usize,
    /// Key-points per frame `N`.
    pub joints: usize,
    /// Coordinates per key-point `d`.
    pub coord_dim: usize,
}

impl ModelConfig {
    /// Four streams including ego-vehicle speed.
    pub fn pie() -> Self {
        ModelConfig {
            branches: vec![(1, 1), (2, 1), (3, 1)],
            blocks_per_branch: 3,
            feature_maps: 64,
            attention_kind: AttentionKind::Cbam,
            recurrent_kind: RecurrentKind::Ugru,
            recurrent_blocks_per_stream: 2,
            hidden: 64,
            streams: Streams {
                pseudo_image: true,
                jcd: true,
                bbox: true,
                speed: true,
            },
            dropout: 0.5,
            l2_final: 0.001,
            seed: 0,
            frames: 16,
            joints: 18,
            coord_dim: 2,
        }
    }

    /// Same network without the speed stream.
    pub fn jaad() -> Self {
        let mut c = Self::pie();
        c.streams.speed = false;
        c
    }

    /// Small configuration for end-to-end gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            branches: vec![(1, 1), (2, 1)],
            blocks_per_branch: 1,
            feature_maps: 2,
            hidden: 2,
            dropout: 0.0,
            frames: 4,
            joints: 2,
            ..Self::pie()
        }
    }

    pub fn pairs(&self) -> usize {
        self.joints * self.joints.saturating_sub(1) / 2
    }

    /// Collects every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.streams.count() == 0 {
            errs.push("at least one stream must be enabled".to_string());
        }
        if self.hidden == 0 {
            errs.push("hidden must be positive".into());
        }
        if self.frames == 0 || self.joints == 0 || self.coord_dim == 0 {
            errs.push(format!(
                "frames, joints and coord_dim must be positive, got {}, {}, {}",
                self.frames, self.joints, self.coord_dim
            ));
        }
        if self.streams.pseudo_image {
            if self.branches.is_empty() {
                errs.push("pseudo-image stream needs at least one branch".into());
            }
            for &(r1, r2) in &self.branches {
                if !(1..=3).contains(&r1) || r2 == 0 {
                    errs.push(format!(
                        "branch dilation ({r1}, {r2}) needs r1 in 1..=3 and r2 >= 1"
                    ));
                }
            }
            if self.blocks_per_branch == 0 {
                errs.push("blocks_per_branch must be positive".into());
            } else {
                let shrink = 1usize
                    .checked_shl(self.blocks_per_branch as u32)
                    .unwrap_or(usize::MAX);
                if self.frames / shrink == 0 || self.joints / shrink == 0 {
                    errs.push(format!(
                        "{} 2x2 poolings do not fit a {}x{} pseudo-image",
                        self.blocks_per_branch, self.frames, self.joints
                    ));
                }
            }
            if self.feature_maps != self.hidden {
                errs.push(format!(
                    "feature_maps ({}) must equal hidden ({}) so the branch vector matches the recurrent streams",
                    self.feature_maps, self.hidden
                ));
            }
        }
        if self.streams.jcd && self.joints < 2 {
            errs.push("JCD stream needs at least two joints".into());
        }
        if (self.streams.jcd || self.streams.bbox || self.streams.speed)
            && self.recurrent_blocks_per_stream == 0
        {
            errs.push("recurrent_blocks_per_stream must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.l2_final.is_finite() && self.l2_final >= 0.0) {
            errs.push(format!(
                "l2_final must be non-negative, got {}",
                self.l2_final
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

/// Architecture variations compared in the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Default,
    NoJcd,
    NoParallelBranches,
    Gru,
    Bigru,
    NoAttention,
    SeAttention,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Default,
        Variant::NoJcd,
        Variant::NoParallelBranches,
        Variant::Gru,
        Variant::Bigru,
        Variant::NoAttention,
        Variant::SeAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Default => "default",
            Variant::NoJcd => "no-jcd",
            Variant::NoParallelBranches => "no-parallel-branches",
            Variant::Gru => "gru",
            Variant::Bigru => "bigru",
            Variant::NoAttention => "no-attention",
            Variant::SeAttention => "se-attention",
        }
    }

    pub fn parse(name: &str) -> Option<Variant> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Variant::Default => {}
            Variant::NoJcd => c.streams.jcd = false,
            Variant::NoParallelBranches => c.branches = vec![(1, 1)],
            Variant::Gru => c.recurrent_kind = RecurrentKind::Gru,
            Variant::Bigru => c.recurrent_kind = RecurrentKind::Bigru,
            // conv-stream attention only; temporal and modality attention stay
            Variant::NoAttention => c.attention_kind = AttentionKind::None,
            Variant::SeAttention => c.attention_kind = AttentionKind::Se,
        }
        c
    }
}
