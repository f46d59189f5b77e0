use serde::Serialize;

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const LOOKAHEAD_K: usize = 6;
pub const LOOKAHEAD_ALPHA: f64 = 0.5;

/// Which update RAdam applied on a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StepKind {
    /// Variance estimate too unreliable (`ρ_t ≤ 4`): plain momentum step.
    Unrectified,
    Rectified,
}

/// Rectified Adam over a list of flat parameter tensors.
#[derive(Clone, Debug)]
pub struct RAdam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl RAdam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        RAdam {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `ρ_∞ − 2·t·β2ᵗ / (1 − β2ᵗ)`.
    pub fn rho(&self, t: u64) -> f64 {
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let b2t = self.beta2.powi(t as i32);
        rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// One update. Gradients are checked before anything is modified, so a non-finite
    /// gradient leaves parameters, moments and the step counter untouched.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<StepKind> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != self.m[i].len() || params[i].len() != self.m[i].len() {
                return Err(Error::Training(format!("tensor {i} changed size")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        self.t += 1;
        let t = self.t;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powi(t as i32);
        let bias2 = 1.0 - b2.powi(t as i32);
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let rho = self.rho(t);
        let rectifier = (rho > 4.0).then(|| {
            (((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                .sqrt()
        });
        for (i, (w, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / bias1;
                w[j] -= match rectifier {
                    Some(r) => {
                        let v_hat = (v[j] / bias2).sqrt();
                        self.lr * r * m_hat / (v_hat + self.epsilon)
                    }
                    None => self.lr * m_hat,
                };
            }
        }
        Ok(if rectifier.is_some() {
            StepKind::Rectified
        } else {
            StepKind::Unrectified
        })
    }
}

/// `slow ← slow + α·(fast − slow)`, then `fast ← slow`.
pub fn lookahead_sync(slow: &mut [f64], fast: &mut [f64], alpha: f64) {
    for (s, f) in slow.iter_mut().zip(fast.iter_mut()) {
        *s += alpha * (*f - *s);
        *f = *s;
    }
}

/// Slow-weight copy synchronised every `k` inner steps.
#[derive(Clone, Debug)]
pub struct Lookahead {
    pub k: usize,
    pub alpha: f64,
    slow: Vec<Vec<f64>>,
    counter: u64,
}

impl Lookahead {
    pub fn new(k: usize, alpha: f64, params: &[&[f64]]) -> Self {
        Lookahead {
            k,
            alpha,
            slow: params.iter().map(|p| p.to_vec()).collect(),
            counter: 0,
        }
    }

    pub fn slow(&self) -> &[Vec<f64>] {
        &self.slow
    }

    /// Counts one inner step; synchronises and returns `true` when it completes a
    /// multiple of `k`.
    pub fn after_step(&mut self, params: &mut [&mut [f64]]) -> bool {
        self.counter += 1;
        if self.counter % self.k as u64 != 0 {
            return false;
        }
        self.sync(params);
        true
    }

    pub fn sync(&mut self, params: &mut [&mut [f64]]) {
        for (s, f) in self.slow.iter_mut().zip(params.iter_mut()) {
            lookahead_sync(s, f, self.alpha);
        }
    }
}

/// RAdam wrapped in Lookahead.
#[derive(Clone, Debug)]
pub struct Ranger {
    pub radam: RAdam,
    pub lookahead: Lookahead,
}

impl Ranger {
    pub fn new(lr: f64, k: usize, alpha: f64, params: &[&[f64]]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Ranger {
            radam: RAdam::new(lr, &sizes),
            lookahead: Lookahead::new(k, alpha, params),
        }
    }

    /// Returns the RAdam step kind and whether Lookahead synchronised.
    pub fn step(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
    ) -> Result<(StepKind, bool)> {
        let kind = self.radam.step(params, grads)?;
        Ok((kind, self.lookahead.after_step(params)))
    }
}
