use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// `(w_neg, w_pos)` with `w_c = n / (2·n_c)`.
pub fn class_weights(labels: &[u8]) -> Result<(f64, f64)> {
    let n = labels.len();
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Training(format!(
            "class weights need both classes, got {pos} positive and {neg} negative labels"
        )));
    }
    Ok((n as f64 / (2.0 * neg as f64), n as f64 / (2.0 * pos as f64)))
}

/// Single-sample `−w_y·(y·ln p + (1−y)·ln(1−p))` with clamping.
pub fn bce(p: f64, y: u8, weights: (f64, f64)) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -weights.1 * p.ln()
    } else {
        -weights.0 * (1.0 - p).ln()
    }
}

/// Batch mean of the class-weighted binary cross-entropy over probabilities `p` `(N)`.
pub fn weighted_bce(p: &Tensor, labels: &[u8], weights: (f64, f64)) -> Result<Tensor> {
    if p.numel() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "weighted_bce",
            lhs: p.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let n = labels.len();
    let p = p.reshape(&[n])?.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    let w: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { weights.1 } else { weights.0 })
        .collect();
    let y = Tensor::new(&[n], y)?;
    let not_y = y.neg().add_scalar(1.0);
    let log_p = p.ln();
    let log_q = p.neg().add_scalar(1.0).ln();
    let ll = y.mul(&log_p)?.add(&not_y.mul(&log_q)?)?;
    Ok(ll.mul(&Tensor::new(&[n], w)?)?.neg().mean())
}

/// `coefficient·‖W‖²`.
pub fn l2_penalty(weight: &Tensor, coefficient: f64) -> Tensor {
    weight.square().sum().scale(coefficient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_from_counts() {
        let mut labels = vec![0u8; 75];
        labels.extend(vec![1u8; 25]);
        let (neg, pos) = class_weights(&labels).unwrap();
        assert_eq!(pos, 2.0);
        assert!((neg - 2.0 / 3.0).abs() < 1e-15);
        assert!((pos * 25.0 - neg * 75.0).abs() < 1e-12);
        assert_eq!(class_weights(&[0, 1, 1, 0]).unwrap(), (1.0, 1.0));
        assert!(class_weights(&[1, 1]).is_err());
    }

    #[test]
    fn hand_values() {
        assert!((bce(0.5, 1, (1.0, 2.0)) - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((bce(0.5, 1, (1.0, 2.0)) - 1.38629).abs() < 1e-5);
        assert!(bce(1.0 - 1e-12, 1, (1.0, 1.0)) < 1e-6);
        let p = Tensor::new(&[2], vec![0.5, 0.25]).unwrap();
        let l = weighted_bce(&p, &[1, 0], (1.0, 2.0))
            .unwrap()
            .item()
            .unwrap();
        let want = (bce(0.5, 1, (1.0, 2.0)) + bce(0.25, 0, (1.0, 2.0))) / 2.0;
        assert!((l - want).abs() < 1e-15);
    }

    #[test]
    fn clamped_loss_is_finite_at_the_edges() {
        for p in [0.0, 1.0] {
            for y in [0, 1] {
                assert!(bce(p, y, (1.0, 1.0)).is_finite());
            }
        }
        let p = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        assert!(weighted_bce(&p, &[1, 0], (1.0, 1.0))
            .unwrap()
            .item()
            .unwrap()
            .is_finite());
    }
}
