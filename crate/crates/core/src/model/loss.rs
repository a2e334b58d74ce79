use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax_rows, DenseTensor, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::classifier::ClassifierParams;

/// Mixing weight between classification and distillation, and the
/// distillation temperature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            temperature: 2.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda: f64, temperature: f64) -> Result<Self> {
        let w = Self { lambda, temperature };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(
                "lambda",
                format!("must lie in [0, 1], got {}", self.lambda),
            ));
        }
        if !(self.temperature >= 1.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "temperature",
                format!("must be at least 1, got {}", self.temperature),
            ));
        }
        Ok(())
    }
}

/// `softmax(logits / τ)` with max-subtraction.
pub fn tempered_softmax<S: Scalar>(logits: &[S], temperature: S) -> Vec<S> {
    if logits.is_empty() {
        return Vec::new();
    }
    let row = DenseTensor::raw(vec![1, logits.len()], logits.to_vec());
    softmax_rows(&row, logits.len(), temperature).0.into_data()
}

/// Teacher distribution over the first `k` logits, per row.
pub fn teacher_targets<S: Scalar>(logits: &DenseTensor<S>, k: usize, temperature: S) -> Result<DenseTensor<S>> {
    if k > logits.cols() {
        return Err(Error::shape(
            "distillation",
            format!("{k} old classes but teacher has {} outputs", logits.cols()),
        ));
    }
    if logits.rows() == 0 || k == 0 {
        return Ok(DenseTensor::zeros(&[logits.rows(), k]));
    }
    Ok(softmax_rows(logits, k, temperature).0)
}

/// Mean `−log softmax(z)_y` over rows.
pub fn classification_loss_from_logits<S: Scalar>(logits: &DenseTensor<S>, labels: &[usize]) -> Result<S> {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone());
    let l = tape.cross_entropy(z, labels)?;
    Ok(tape.value(l).item())
}

/// Mean over rows of `−Σ_{k<K} π̂_k log π_k`, both tempered over the first
/// `K` logits.
pub fn distillation_loss_from_logits<S: Scalar>(
    current: &DenseTensor<S>,
    previous: &DenseTensor<S>,
    temperature: S,
    old_classes: usize,
) -> Result<S> {
    if old_classes > current.cols() {
        return Err(Error::shape(
            "distillation",
            format!("{old_classes} old classes but student has {} outputs", current.cols()),
        ));
    }
    let targets = teacher_targets(previous, old_classes, temperature)?;
    let mut tape = Tape::new();
    let z = tape.leaf(current.clone());
    let l = tape.soft_cross_entropy(z, targets, temperature)?;
    Ok(tape.value(l).item())
}

pub fn classification_loss<S: Scalar>(params: &ClassifierParams<S>, x: &DenseTensor<S>, labels: &[usize]) -> Result<S> {
    classification_loss_from_logits(&params.forward(None, x)?, labels)
}

pub fn distillation_loss<S: Scalar>(
    current: &ClassifierParams<S>,
    previous: &ClassifierParams<S>,
    x: &DenseTensor<S>,
    temperature: S,
    old_classes: usize,
) -> Result<S> {
    distillation_loss_from_logits(
        &current.forward(None, x)?,
        &previous.forward(None, x)?,
        temperature,
        old_classes,
    )
}

/// `λ·L_c + (1 − λ)·L_d`.
pub fn combined_loss<S: Scalar>(
    current: &ClassifierParams<S>,
    previous: &ClassifierParams<S>,
    x: &DenseTensor<S>,
    labels: &[usize],
    weights: LossWeights,
    old_classes: usize,
) -> Result<S> {
    weights.validate()?;
    let lc = classification_loss(current, x, labels)?;
    let ld = distillation_loss(
        current,
        previous,
        x,
        S::from_f64_lossy(weights.temperature),
        old_classes,
    )?;
    let lambda = S::from_f64_lossy(weights.lambda);
    Ok(lambda * lc + (S::one() - lambda) * ld)
}

/// Entropy of each row's tempered distribution over the first `k` logits,
/// averaged over rows. Uses `log p = z/τ − logsumexp(z/τ)`.
pub fn mean_entropy<S: Scalar>(logits: &DenseTensor<S>, k: usize, temperature: S) -> Result<S> {
    if k > logits.cols() {
        return Err(Error::shape("entropy", format!("{k} of {} columns", logits.cols())));
    }
    let n = logits.rows();
    if n == 0 || k == 0 {
        return Ok(S::zero());
    }
    let (p, lse) = softmax_rows(logits, k, temperature);
    let mut total = S::zero();
    for i in 0..n {
        let z = logits.row(i);
        for (j, &pj) in p.row(i).iter().enumerate() {
            total -= pj * (z[j] / temperature - lse[i]);
        }
    }
    Ok(total / S::from_count(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DenseTensor<f64> {
        DenseTensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(tempered_softmax(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
        let p = tempered_softmax(&[2.0, 0.0], 2.0);
        assert!((p[0] - 0.731059).abs() < 1e-6);
        assert!((p[1] - 0.268941).abs() < 1e-6);
        let q = tempered_softmax(&[1.0, -1.0, 0.3, 0.9], 1e6);
        assert!(q.iter().all(|&v| (v - 0.25).abs() < 1e-5));
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let l = classification_loss_from_logits(&mat(&[&[0.0; 4], &[0.0; 4]]), &[1, 3]).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn saturated_logit_loss_vanishes() {
        let l = classification_loss_from_logits(&mat(&[&[50.0, 0.0, 0.0, 0.0]]), &[0]).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn two_sample_hand_case() {
        let l = classification_loss_from_logits(&mat(&[&[1.0, 0.0], &[0.0, 1.0]]), &[0, 1]).unwrap();
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn self_distillation_is_entropy() {
        let z = mat(&[&[0.0, 0.0]]);
        let l = distillation_loss_from_logits(&z, &z, 1.0, 2).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn swapped_logits_distillation() {
        // −(σ ln(1−σ) + (1−σ) ln σ), σ = e²/(e²+1), evaluated independently.
        let s = 2f64.exp() / (2f64.exp() + 1.0);
        let expected = -(s * (1.0 - s).ln() + (1.0 - s) * s.ln());
        let l = distillation_loss_from_logits(&mat(&[&[0.0, 2.0]]), &mat(&[&[2.0, 0.0]]), 1.0, 2).unwrap();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 1.888522).abs() < 1e-6);
    }

    #[test]
    fn distillation_ignores_new_class_logits() {
        let prev = mat(&[&[1.0, -0.5]]);
        let a = distillation_loss_from_logits(&mat(&[&[0.2, 0.4, 9.0]]), &prev, 2.0, 2).unwrap();
        let b = distillation_loss_from_logits(&mat(&[&[0.2, 0.4, -3.0]]), &prev, 2.0, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_old_classes_is_shape_error() {
        let z = mat(&[&[0.0, 0.0]]);
        assert!(matches!(
            distillation_loss_from_logits(&z, &z, 1.0, 3),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn loss_weights_validation() {
        assert!(LossWeights::new(1.5, 2.0).is_err());
        assert!(LossWeights::new(0.5, 0.5).is_err());
        assert!(LossWeights::new(0.0, 1.0).is_ok());
    }
}
