use std::fmt::Write as _;

use serde::Serialize;

use super::net::{ConvAttention, TrouSpiNet};

/// Bytes per stored weight when the model is deployed in single precision.
pub const DEPLOYED_BYTES_PER_PARAM: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProfileRow {
    pub name: String,
    pub params: usize,
    pub flops: usize,
}

/// Per-layer trainable parameters and inference FLOPs for one sample.
///
/// Conventions: convolution `2·K·C·kh·kw·H·W`; dense `2·in·out + out`; GRU cell
/// `3·(2·D·H + 2·H² + 3·H)` per step; every other element-wise, pooling or reduction
/// op costs 1 FLOP per scalar; batch norm costs 4 per element.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub total_params: usize,
    pub total_flops: usize,
    pub weight_bytes: usize,
}

impl ProfileReport {
    /// `name,params,flops` rows followed by a `total` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,params,flops\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{}", r.name, r.params, r.flops);
        }
        let _ = writeln!(s, "total,{},{}", self.total_params, self.total_flops);
        s
    }
}

impl TrouSpiNet {
    pub fn profile(&self) -> ProfileReport {
        let c = &self.config;
        let k = c.feature_maps;
        let m = c.frames;
        let mut rows = Vec::new();
        let mut row = |name: String, params: usize, flops: usize| {
            rows.push(ProfileRow {
                name,
                params,
                flops,
            })
        };
        for (b, branch) in self.branches.iter().enumerate() {
            let (mut h, mut w) = (c.frames, c.joints);
            for (s, stage) in branch.stages.iter().enumerate() {
                let prefix = format!("branch{b}.stage{s}");
                let hw = h * w;
                // convolution + bias + leaky ReLU
                row(
                    format!("{prefix}.conv"),
                    stage.conv.param_count(),
                    stage.conv.flops(h, w) + 2 * k * hw,
                );
                match &stage.attention {
                    Some(ConvAttention::Cbam(a)) => {
                        row(format!("{prefix}.cbam"), a.param_count(), a.flops(h, w))
                    }
                    Some(ConvAttention::Se(a)) => {
                        row(format!("{prefix}.se"), a.param_count(), a.flops(h, w))
                    }
                    None => {}
                }
                row(format!("{prefix}.bn"), stage.norm.param_count(), 4 * k * hw);
                row(format!("{prefix}.pool"), 0, k * hw);
                h /= 2;
                w /= 2;
            }
            row(format!("branch{b}.gap"), 0, k * h * w);
        }
        if self.branches.len() > 1 {
            row("branch_sum".into(), 0, (self.branches.len() - 1) * k);
        }
        for stream in &self.streams {
            let name = stream.kind.name();
            for (i, block) in stream.blocks.iter().enumerate() {
                row(
                    format!("{name}.block{i}"),
                    block.param_count(),
                    block.flops(m),
                );
            }
            row(
                format!("{name}.attention"),
                stream.attention.param_count(),
                stream.attention.flops(m),
            );
        }
        row(
            "modality".into(),
            self.modality.param_count(),
            self.modality.flops(self.modality_count()),
        );
        // dense + sigmoid
        row(
            "head".into(),
            self.head.param_count(),
            self.head.flops() + self.head.outputs,
        );
        let total_params = rows.iter().map(|r| r.params).sum();
        let total_flops = rows.iter().map(|r| r.flops).sum();
        ProfileReport {
            rows,
            total_params,
            total_flops,
            weight_bytes: total_params * DEPLOYED_BYTES_PER_PARAM,
        }
    }

    /// Trainable scalars.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn flops_count(&self) -> usize {
        self.profile().total_flops
    }

    /// Weight memory in bytes at single precision.
    pub fn memory_estimate(&self) -> usize {
        self.param_count() * DEPLOYED_BYTES_PER_PARAM
    }
}
