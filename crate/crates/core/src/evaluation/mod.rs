//! Classification metrics, the observation-window protocol and the ablation harness.

mod metrics;
mod windows;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::TrackRecord;
use crate::error::{Error, Result};
use crate::features::EncodedSample;
use crate::model::{load_checkpoint, ModelConfig, TrouSpiNet, Variant};
use crate::training::{fit, PreparedData, TrainConfig};

pub use metrics::{metrics, roc_auc, Metrics, THRESHOLD};
pub use windows::{encode_windows, sample_windows, windows_for, Window, WindowSpec};

/// Eval-mode metrics over encoded windows.
pub fn evaluate(model: &TrouSpiNet, samples: &[EncodedSample]) -> Result<Metrics> {
    let p = model.predict(samples)?;
    let scores: Vec<(f64, u8)> = p.into_iter().zip(samples.iter().map(|s| s.label)).collect();
    metrics(&scores)
}

/// Samples windows from raw tracks, standardises them with the model's statistics and
/// evaluates.
pub fn evaluate_tracks(
    model: &TrouSpiNet,
    tracks: &[TrackRecord],
    spec: &WindowSpec,
) -> Result<Metrics> {
    let windows = windows_for(tracks, spec)?;
    let samples = encode_windows(&windows, model.context_stats())?;
    evaluate(model, &samples)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub metrics: Metrics,
}

/// Where each ablation variant's model comes from.
#[derive(Clone, Debug)]
pub enum AblationSource<'a> {
    /// Train every variant from scratch with the shared seed.
    Train(&'a TrainConfig),
    /// Load `<dir>/<variant>.ckpt`.
    Checkpoints(&'a Path),
}

/// Builds every variant from `base`, obtains a model for it and scores it on the test
/// split.
pub fn ablate(
    base: &ModelConfig,
    variants: &[Variant],
    data: &PreparedData,
    source: &AblationSource<'_>,
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&v| {
            let config = v.apply(base);
            let model = match source {
                AblationSource::Train(cfg) => {
                    log::info!("ablation: training {}", v.name());
                    fit(config, data, cfg)?.0
                }
                AblationSource::Checkpoints(dir) => {
                    let path = dir.join(format!("{}.ckpt", v.name()));
                    if !path.exists() {
                        return Err(Error::Evaluation(format!(
                            "missing checkpoint for variant {}: {}",
                            v.name(),
                            path.display()
                        )));
                    }
                    load_checkpoint(&path)?
                }
            };
            Ok(AblationRow {
                variant: v.name().to_string(),
                params: model.param_count(),
                metrics: evaluate(&model, &data.test)?,
            })
        })
        .collect()
}

/// `variant,params,acc,auc,f1,precision,recall` with an empty AUC cell when undefined.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,params,acc,auc,f1,precision,recall\n");
    for r in rows {
        let m = &r.metrics;
        let auc = m.auc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.variant, r.params, m.acc, auc, m.f1, m.precision, m.recall
        );
    }
    s
}
