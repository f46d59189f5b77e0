//! Layer outputs, AUC and parameter counts checked against independent plain-loop code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trouspi::evaluation::roc_auc;
use trouspi::model::{ModelConfig, TrouSpiNet};
use trouspi::nn::{
    Activation, AtrousConv2d, Cbam, Ctx, Dense, GruLayer, ModalityAttention, Mode, ParamStore,
    RecurrentBlock, RecurrentKind, SeBlock, TemporalAttention,
};
use trouspi::Tensor;

mod common;
use common::*;

#[test]
fn atrous_conv_matches_direct_sum_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, c, k) = (
            rng.random_range(1..3),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
        let dilation = (rng.random_range(1..4), rng.random_range(1..3));
        let kernel = if rng.random_bool(0.2) { (7, 7) } else { (3, 3) };
        let mut store = ParamStore::new();
        let conv = AtrousConv2d::new(&mut store, "c", c, k, kernel, dilation, &mut rng);
        let b = store.id("c.bias").unwrap();
        store
            .get_mut(b)
            .data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let x = random(&[n, c, h, w], &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let y = conv.forward(&ctx, &x, Activation::Identity).unwrap();
        assert_eq!(y.shape(), [n, k, h, w]);
        let expected = conv_oracle(
            x.data(),
            (n, c, h, w),
            &store_data(&store, "c.weight"),
            &store_data(&store, "c.bias"),
            k,
            kernel,
            dilation,
        );
        worst = worst.max(max_abs_diff(y.data(), &expected));
    }
    assert!(worst < 1e-10, "max abs diff {worst:e}");
}

#[test]
fn unit_dilation_is_a_standard_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let (c, k, h, w) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(2..9),
            rng.random_range(2..9),
        );
        let mut store = ParamStore::new();
        let atrous = AtrousConv2d::new(&mut store, "a", c, k, (3, 3), (1, 1), &mut rng);
        let x = random(&[1, c, h, w], &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let dilated = atrous.forward(&ctx, &x, Activation::Identity).unwrap();
        let weight = Tensor::new(&[k, c, 3, 3], store_data(&store, "a.weight")).unwrap();
        let bias = Tensor::new(&[k], store_data(&store, "a.bias")).unwrap();
        let standard = x.conv2d(&weight, Some(&bias), (1, 1)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&dilated), bits(&standard));
        let expected = conv_oracle(
            x.data(),
            (1, c, h, w),
            weight.data(),
            bias.data(),
            k,
            (3, 3),
            (1, 1),
        );
        assert!(max_abs_diff(dilated.data(), &expected) < 1e-12);
    }
}

#[test]
fn dilated_row_example() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let conv = AtrousConv2d::new(&mut store, "c", 1, 1, (1, 3), (1, 2), &mut rng);
    let wid = store.id("c.weight").unwrap();
    store.get_mut(wid).data = vec![1.0; 3];
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let x = Tensor::new(&[1, 1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let y = conv.forward(&ctx, &x, Activation::Identity).unwrap();
    assert_eq!(y.data()[2], 9.0);
}

#[test]
fn ugru_block_equals_explicit_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (n, m, d, hidden) in [(1, 1, 3, 4), (2, 5, 3, 4), (3, 16, 7, 6)] {
        let mut store = ParamStore::new();
        let block = RecurrentBlock::new(&mut store, "u", RecurrentKind::Ugru, d, hidden, &mut rng);
        for e in store
            .entries_mut()
            .iter_mut()
            .filter(|e| e.name.ends_with("bias"))
        {
            e.data
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let x = random(&[n, m, d], &mut rng);
        let bind = store.bind(false);
        let ctx = Ctx::new(&bind, Mode::Eval, 0);
        let y = block.forward(&ctx, &x).unwrap();
        assert_eq!(y.shape(), [n, m, hidden]);
        for s in 0..n {
            let seq: Vec<Vec<f64>> = (0..m)
                .map(|t| x.data()[(s * m + t) * d..(s * m + t + 1) * d].to_vec())
                .collect();
            let reversed = gru_layer_oracle(&seq, &store, "u.reverse", hidden, true);
            let joined: Vec<Vec<f64>> = reversed
                .iter()
                .zip(&seq)
                .map(|(r, x)| r.iter().chain(x).copied().collect())
                .collect();
            let expected: Vec<f64> =
                gru_layer_oracle(&joined, &store, "u.forward", hidden, false).concat();
            let got = &y.data()[s * m * hidden..(s + 1) * m * hidden];
            let diff = max_abs_diff(got, &expected);
            assert!(diff < 1e-12, "n={n} m={m}: {diff:e}");
        }
    }
}

#[test]
fn gru_cell_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let gru = GruLayer::new(&mut store, "g", 5, 3, &mut rng);
    let x = random(&[1, 5], &mut rng);
    let h = random(&[1, 3], &mut rng);
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let y = gru.cell(&ctx, &x, &h).unwrap();
    let expected = gru_cell_oracle(
        x.data(),
        h.data(),
        &store_data(&store, "g.w_input"),
        &store_data(&store, "g.w_hidden"),
        &store_data(&store, "g.bias"),
        3,
    );
    assert!(max_abs_diff(y.data(), &expected) < 1e-12);
}

/// `v·W + b` with `W` stored `in × out`.
fn affine(v: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|j| {
            b[j] + v
                .iter()
                .enumerate()
                .map(|(i, a)| a * w[i * out + j])
                .sum::<f64>()
        })
        .collect()
}

fn randomise(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for e in store.entries_mut() {
        e.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
}

#[test]
fn cbam_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (c, h, w) = (4, 3, 3);
    let mut store = ParamStore::new();
    let cbam = Cbam::new(&mut store, "a", c, &mut rng);
    randomise(&mut store, &mut rng);
    let x = random(&[1, c, h, w], &mut rng);
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let y = cbam.forward(&ctx, &x).unwrap();

    let f = x.data();
    let hw = h * w;
    let mlp = |v: &[f64]| {
        let hidden: Vec<f64> = affine(
            v,
            &store_data(&store, "a.mlp_in.weight"),
            &store_data(&store, "a.mlp_in.bias"),
        )
        .into_iter()
        .map(|a| a.max(0.0))
        .collect();
        affine(
            &hidden,
            &store_data(&store, "a.mlp_out.weight"),
            &store_data(&store, "a.mlp_out.bias"),
        )
    };
    let avg: Vec<f64> = (0..c)
        .map(|ch| f[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect();
    let max: Vec<f64> = (0..c)
        .map(|ch| {
            f[ch * hw..(ch + 1) * hw]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let mc: Vec<f64> = mlp(&avg)
        .iter()
        .zip(mlp(&max))
        .map(|(a, b)| sigmoid(a + b))
        .collect();
    let refined: Vec<f64> = (0..c * hw).map(|i| f[i] * mc[i / hw]).collect();
    let mut pooled = vec![0.0; 2 * hw];
    for p in 0..hw {
        let column: Vec<f64> = (0..c).map(|ch| refined[ch * hw + p]).collect();
        pooled[p] = column.iter().sum::<f64>() / c as f64;
        pooled[hw + p] = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    let logits = conv_oracle(
        &pooled,
        (1, 2, h, w),
        &store_data(&store, "a.spatial.weight"),
        &store_data(&store, "a.spatial.bias"),
        1,
        (7, 7),
        (1, 1),
    );
    let expected: Vec<f64> = (0..c * hw)
        .map(|i| refined[i] * sigmoid(logits[i % hw]))
        .collect();
    let diff = max_abs_diff(y.data(), &expected);
    assert!(diff < 1e-10, "{diff:e}");
}

#[test]
fn se_block_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (c, h, w) = (32, 3, 5);
    let mut store = ParamStore::new();
    let se = SeBlock::new(&mut store, "s", c, &mut rng);
    randomise(&mut store, &mut rng);
    let x = random(&[1, c, h, w], &mut rng);
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let y = se.forward(&ctx, &x).unwrap();
    let f = x.data();
    let hw = h * w;
    let gap: Vec<f64> = (0..c)
        .map(|ch| f[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect();
    let hidden: Vec<f64> = affine(
        &gap,
        &store_data(&store, "s.squeeze.weight"),
        &store_data(&store, "s.squeeze.bias"),
    )
    .into_iter()
    .map(|a| a.max(0.0))
    .collect();
    let scale: Vec<f64> = affine(
        &hidden,
        &store_data(&store, "s.excite.weight"),
        &store_data(&store, "s.excite.bias"),
    )
    .into_iter()
    .map(sigmoid)
    .collect();
    let expected: Vec<f64> = (0..c * hw).map(|i| f[i] * scale[i / hw]).collect();
    assert!(max_abs_diff(y.data(), &expected) < 1e-10);
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

#[test]
fn temporal_attention_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (m, feat, att) = (4, 3, 5);
    let mut store = ParamStore::new();
    let layer = TemporalAttention::new(&mut store, "t", feat, att, &mut rng);
    randomise(&mut store, &mut rng);
    let h = random(&[1, m, feat], &mut rng);
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let y = layer.forward(&ctx, &h).unwrap();

    let rows: Vec<&[f64]> = h.data().chunks(feat).collect();
    let zeros = vec![0.0; att];
    let last = affine(
        rows[m - 1],
        &store_data(&store, "t.w_last"),
        &store_data(&store, "t.bias"),
    );
    let v = store_data(&store, "t.score");
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| {
            let step = affine(r, &store_data(&store, "t.w_step"), &zeros);
            (0..att).map(|a| v[a] * (step[a] + last[a]).tanh()).sum()
        })
        .collect();
    let alpha = softmax(&scores);
    let expected: Vec<f64> = (0..feat)
        .map(|j| (0..m).map(|t| alpha[t] * rows[t][j]).sum())
        .collect();
    assert!(max_abs_diff(y.data(), &expected) < 1e-10);
}

#[test]
fn modality_attention_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let (feat, att) = (6, 4);
    let mut store = ParamStore::new();
    let layer = ModalityAttention::new(&mut store, "q", feat, att, &mut rng);
    randomise(&mut store, &mut rng);
    let inputs: Vec<Tensor> = (0..3).map(|_| random(&[1, feat], &mut rng)).collect();
    let bind = store.bind(false);
    let ctx = Ctx::new(&bind, Mode::Eval, 0);
    let y = layer.forward(&ctx, &inputs).unwrap();

    let u = store_data(&store, "q.score");
    let scores: Vec<f64> = inputs
        .iter()
        .map(|v| {
            let e = affine(
                v.data(),
                &store_data(&store, "q.weight"),
                &store_data(&store, "q.bias"),
            );
            e.iter().zip(&u).map(|(a, b)| a.tanh() * b).sum()
        })
        .collect();
    let beta = softmax(&scores);
    let expected: Vec<f64> = (0..feat)
        .map(|j| inputs.iter().zip(&beta).map(|(v, b)| b * v.data()[j]).sum())
        .collect();
    assert!(max_abs_diff(y.data(), &expected) < 1e-10);
}

#[test]
fn trapezoid_auc_equals_mann_whitney_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut checked = 0;
    while checked < 1000 {
        let n = rng.random_range(2..40);
        let levels = rng.random_range(2..12);
        let scores: Vec<(f64, u8)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0..levels) as f64 / levels as f64,
                    rng.random_range(0..2u8),
                )
            })
            .collect();
        if !scores.iter().any(|s| s.1 == 1) || !scores.iter().any(|s| s.1 == 0) {
            continue;
        }
        assert_eq!(
            roc_auc(&scores).unwrap(),
            mann_whitney(&scores),
            "{scores:?}"
        );
        checked += 1;
    }
    let example = [(0.9, 1), (0.4, 1), (0.5, 0), (0.1, 0)];
    assert_eq!(roc_auc(&example).unwrap(), 0.75);
}

#[test]
fn default_parameter_count_matches_hand_sum() {
    let expected = default_param_hand_sum();

    let model = TrouSpiNet::build(ModelConfig::pie()).unwrap();
    assert_eq!(model.param_count(), expected);
    assert_eq!(expected, 619_616);
    assert_eq!(model.profile().total_params, expected);
}

#[test]
fn dense_head_counts() {
    let mut store = ParamStore::new();
    let head = Dense::new(&mut store, "d", 64, 1, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!((head.param_count(), head.flops()), (dense(64, 1), 129));
    let model = TrouSpiNet::build(ModelConfig::pie()).unwrap();
    let head = model
        .profile()
        .rows
        .into_iter()
        .find(|r| r.name == "head")
        .unwrap();
    // the profiler row adds one sigmoid
    assert_eq!((head.params, head.flops), (65, 130));
}
