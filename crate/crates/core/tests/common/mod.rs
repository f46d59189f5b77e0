//! Plain-loop reference implementations shared by the oracle and acceptance targets.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trouspi::nn::ParamStore;
use trouspi::Tensor;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded "same" dilated cross-correlation, one multiply-add at a time.
#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    k: usize,
    (kh, kw): (usize, usize),
    (r1, r2): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; n * k * h * w];
    let (ch, cw) = ((kh - 1) / 2, (kw - 1) / 2);
    for b in 0..n {
        for o in 0..k {
            for row in 0..h {
                for col in 0..w {
                    let mut acc = bias[o];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = row as isize + (r1 * i) as isize - (r1 * ch) as isize;
                                let z = col as isize + (r2 * j) as isize - (r2 * cw) as isize;
                                if y < 0 || z < 0 || y >= h as isize || z >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ci) * h + y as usize) * w + z as usize]
                                    * weight[((o * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * k + o) * h + row) * w + col] = acc;
                }
            }
        }
    }
    out
}

pub fn store_data(store: &ParamStore, name: &str) -> Vec<f64> {
    store
        .get(store.id(name).unwrap_or_else(|| panic!("no {name}")))
        .data
        .clone()
}

pub fn gru_cell_oracle(
    x: &[f64],
    h: &[f64],
    wi: &[f64],
    wh: &[f64],
    b: &[f64],
    hidden: usize,
) -> Vec<f64> {
    let g = 3 * hidden;
    let proj = |v: &[f64], w: &[f64], col: usize| -> f64 {
        v.iter().enumerate().map(|(i, a)| a * w[i * g + col]).sum()
    };
    let z: Vec<f64> = (0..hidden)
        .map(|j| sigmoid(proj(x, wi, j) + proj(h, wh, j) + b[j]))
        .collect();
    let r: Vec<f64> = (0..hidden)
        .map(|j| sigmoid(proj(x, wi, hidden + j) + proj(h, wh, hidden + j) + b[hidden + j]))
        .collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    (0..hidden)
        .map(|j| {
            let cand =
                (proj(x, wi, 2 * hidden + j) + proj(&rh, wh, 2 * hidden + j) + b[2 * hidden + j])
                    .tanh();
            (1.0 - z[j]) * h[j] + z[j] * cand
        })
        .collect()
}

/// Runs the cell oracle over `seq` (m rows), returning time-aligned states.
pub fn gru_layer_oracle(
    seq: &[Vec<f64>],
    store: &ParamStore,
    prefix: &str,
    hidden: usize,
    reverse: bool,
) -> Vec<Vec<f64>> {
    let wi = store_data(store, &format!("{prefix}.w_input"));
    let wh = store_data(store, &format!("{prefix}.w_hidden"));
    let b = store_data(store, &format!("{prefix}.bias"));
    let m = seq.len();
    let mut out = vec![Vec::new(); m];
    let mut h = vec![0.0; hidden];
    let order: Vec<usize> = if reverse {
        (0..m).rev().collect()
    } else {
        (0..m).collect()
    };
    for t in order {
        h = gru_cell_oracle(&seq[t], &h, &wi, &wh, &b, hidden);
        out[t] = h.clone();
    }
    out
}

/// Pairs where the positive outscores the negative, ties counting half; returned as
/// the doubled integer count over `2·P·N`.
pub fn mann_whitney(scores: &[(f64, u8)]) -> f64 {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1 == 1).map(|s| s.0).collect();
    let neg: Vec<f64> = scores.iter().filter(|s| s.1 == 0).map(|s| s.0).collect();
    let mut doubled = 0u64;
    for p in &pos {
        for n in &neg {
            doubled += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    doubled as f64 / (2 * pos.len() * neg.len()) as f64
}

pub fn conv(c_in: usize, k: usize) -> usize {
    k * c_in * 3 * 3 + k
}

pub fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

pub fn gru(d: usize, h: usize) -> usize {
    // z, r and candidate each carry an input matrix, a recurrent matrix and a bias
    3 * (d * h + h * h + h)
}

/// Trainable parameters of the default four-stream network, summed layer by layer.
pub fn default_param_hand_sum() -> usize {
    let (k, h) = (64, 64);
    let cbam = dense(k, k / 16) + dense(k / 16, k) + (2 * 7 * 7 + 1);
    let bn = 2 * k;
    let branch = conv(2, k) + cbam + bn + 2 * (conv(k, k) + cbam + bn);
    let stream =
        |d: usize| gru(d, h) + gru(h + d, h) + gru(h, h) + gru(2 * h, h) + (2 * h * h + 2 * h);
    3 * branch + stream(153) + stream(4) + stream(1) + (h * h + 2 * h) + dense(h, 1)
}
