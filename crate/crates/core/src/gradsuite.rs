//! Autodiff-versus-finite-difference checks for every layer and the full network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::features::{ContextFeatures, EncodedSample, PoseSequence};
use crate::model::{ModelConfig, TrouSpiNet};
use crate::nn::{
    Activation, AtrousConv2d, BatchNorm, Bindings, Cbam, Ctx, Dense, Direction, GruLayer,
    ModalityAttention, Mode, ParamStore, RecurrentBlock, RecurrentKind, SeBlock, TemporalAttention,
};
use crate::tensor::{gradient_check, GradCheckOptions, Tensor};
use crate::training::{l2_penalty, weighted_bce};

/// Largest relative error a suite entry may report.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub scalars: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Reduces `y` to a scalar through fixed random weights so every output element
/// carries a distinct gradient.
fn project(y: &Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    Ok(y.mul(&random(y.shape(), &mut rng))?.sum())
}

/// Checks every store entry and every extra input of `f`.
fn check<F>(
    name: &str,
    store: &ParamStore,
    inputs: Vec<(String, Tensor)>,
    mode: Mode,
    f: F,
) -> Result<SuiteEntry>
where
    F: Fn(&mut Ctx<'_>, &[Tensor]) -> Result<Tensor>,
{
    let split = store.len();
    let mut params: Vec<(String, Tensor)> = store
        .entries()
        .iter()
        .map(|e| Ok((e.name.clone(), Tensor::new(&e.shape, e.data.clone())?)))
        .collect::<Result<_>>()?;
    params.extend(inputs);
    let scalars = params.iter().map(|(_, t)| t.numel()).sum();
    let report = gradient_check(
        |p| {
            let bind = Bindings::from_tensors(p[..split].to_vec());
            let mut ctx = Ctx::new(&bind, mode, 0);
            f(&mut ctx, &p[split..])
        },
        &params,
        GradCheckOptions::default(),
    )?;
    Ok(SuiteEntry {
        name: name.to_string(),
        scalars,
        max_relative_error: report.max_relative_error,
        passed: report.passes(GRADIENT_TOLERANCE),
    })
}

/// Small encoded batch matching `config`, half of it labelled positive.
pub fn probe_samples(config: &ModelConfig, n: usize, seed: u64) -> Vec<EncodedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, j, d) = (config.frames, config.joints, config.coord_dim);
    (0..n)
        .map(|i| {
            let values = (0..m * j * d).map(|_| rng.random::<f64>()).collect();
            let pose = PoseSequence::new(m, j, d, values).expect("valid pose");
            let context = ContextFeatures {
                boxes: (0..m)
                    .map(|_| {
                        let (x, y) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.5));
                        [
                            x,
                            y,
                            x + rng.random_range(0.05..0.4),
                            y + rng.random_range(0.1..0.5),
                        ]
                    })
                    .collect(),
                speed: (0..m).map(|_| rng.random_range(-1.5..1.5)).collect(),
                speed_present: true,
            };
            EncodedSample::encode(&pose, &context, (i % 2) as u8, None).expect("consistent sample")
        })
        .collect()
}

/// Runs every check; entries are returned whether or not they pass.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    for dilation in [(1, 1), (2, 1), (3, 1)] {
        let mut store = ParamStore::new();
        let conv = AtrousConv2d::new(&mut store, "conv", 2, 3, (3, 3), dilation, &mut rng);
        let x = random(&[2, 2, 7, 5], &mut rng);
        out.push(check(
            &format!("atrous_conv2d{dilation:?}"),
            &store,
            vec![("x".into(), x)],
            Mode::Eval,
            |ctx, x| project(&conv.forward(ctx, &x[0], Activation::LeakyRelu)?, 1),
        )?);
    }

    let mut store = ParamStore::new();
    let cbam = Cbam::new(&mut store, "cbam", 4, &mut rng);
    let x = random(&[2, 4, 5, 4], &mut rng);
    out.push(check(
        "cbam",
        &store,
        vec![("x".into(), x)],
        Mode::Eval,
        |ctx, x| project(&cbam.forward(ctx, &x[0])?, 2),
    )?);

    let mut store = ParamStore::new();
    let se = SeBlock::new(&mut store, "se", 4, &mut rng);
    let x = random(&[2, 4, 5, 4], &mut rng);
    out.push(check(
        "se_block",
        &store,
        vec![("x".into(), x)],
        Mode::Eval,
        |ctx, x| project(&se.forward(ctx, &x[0])?, 3),
    )?);

    let mut store = ParamStore::new();
    let gru = GruLayer::new(&mut store, "gru", 3, 4, &mut rng);
    let inputs = vec![
        ("x".into(), random(&[2, 3], &mut rng)),
        ("h".into(), random(&[2, 4], &mut rng)),
    ];
    out.push(check("gru_cell", &store, inputs, Mode::Eval, |ctx, x| {
        project(&gru.cell(ctx, &x[0], &x[1])?, 4)
    })?);

    let mut store = ParamStore::new();
    let gru = GruLayer::new(&mut store, "gru", 3, 4, &mut rng);
    let x = random(&[2, 5, 3], &mut rng);
    out.push(check(
        "gru_layer_reverse",
        &store,
        vec![("x".into(), x)],
        Mode::Eval,
        |ctx, x| project(&gru.forward(ctx, &x[0], Direction::Reverse)?, 5),
    )?);

    for (name, kind) in [
        ("ugru_block", RecurrentKind::Ugru),
        ("bigru_block", RecurrentKind::Bigru),
    ] {
        let mut store = ParamStore::new();
        let block = RecurrentBlock::new(&mut store, "block", kind, 3, 4, &mut rng);
        let x = random(&[2, 5, 3], &mut rng);
        out.push(check(
            name,
            &store,
            vec![("x".into(), x)],
            Mode::Eval,
            |ctx, x| project(&block.forward(ctx, &x[0])?, 6),
        )?);
    }

    let mut store = ParamStore::new();
    let att = TemporalAttention::new(&mut store, "temporal", 4, 3, &mut rng);
    let h = random(&[2, 5, 4], &mut rng);
    out.push(check(
        "temporal_attention",
        &store,
        vec![("h".into(), h)],
        Mode::Eval,
        |ctx, x| project(&att.forward(ctx, &x[0])?, 7),
    )?);

    let mut store = ParamStore::new();
    let att = ModalityAttention::new(&mut store, "modality", 4, 3, &mut rng);
    let inputs = (0..3)
        .map(|i| (format!("v{i}"), random(&[2, 4], &mut rng)))
        .collect();
    out.push(check(
        "modality_attention",
        &store,
        inputs,
        Mode::Eval,
        |ctx, x| project(&att.forward(ctx, x)?, 8),
    )?);

    let mut store = ParamStore::new();
    let dense = Dense::new(&mut store, "dense", 5, 3, &mut rng);
    let x = random(&[4, 5], &mut rng);
    out.push(check(
        "dense",
        &store,
        vec![("x".into(), x)],
        Mode::Eval,
        |ctx, x| project(&dense.forward(ctx, &x[0], Activation::Sigmoid)?, 9),
    )?);

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 3, &mut rng);
    for e in store.entries_mut().iter_mut().filter(|e| e.trainable) {
        for v in &mut e.data {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    let x = random(&[4, 3, 2, 2], &mut rng);
    out.push(check(
        "batch_norm",
        &store,
        vec![("x".into(), x)],
        Mode::Train,
        |ctx, x| project(&bn.forward(ctx, &x[0])?, 10),
    )?);

    let store = ParamStore::new();
    let p = Tensor::new(&[4], (0..4).map(|_| rng.random_range(0.1..0.9)).collect())?;
    out.push(check(
        "weighted_bce",
        &store,
        vec![("p".into(), p)],
        Mode::Eval,
        |_, x| weighted_bce(&x[0], &[1, 0, 1, 0], (0.75, 1.5)),
    )?);

    let mut config = ModelConfig::tiny();
    config.seed = seed;
    let model = TrouSpiNet::build(config)?;
    let samples = probe_samples(model.config(), 4, seed);
    let refs: Vec<&EncodedSample> = samples.iter().collect();
    let batch = model.batch(&refs)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    out.push(check(
        "network_tiny",
        model.store(),
        Vec::new(),
        Mode::Train,
        |ctx, _| {
            let p = model.forward(ctx, &batch)?;
            let penalty = l2_penalty(ctx.param(model.final_weight()), model.config().l2_final);
            weighted_bce(&p, &labels, (0.8, 1.25))?.add(&penalty)
        },
    )?);

    Ok(out)
}
