//! Finite-difference checks of every analytic derivative the method relies
//! on. Each check compares coordinate by coordinate against central
//! differences of a value computed without the tape's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{hessian_vector_product, value_and_grad, DenseTensor, FlatParams, UnrollSpec};
use crate::error::{Error, Result};
use crate::exemplar::{exemplar_hypergradient, exemplar_outer_loss};
use crate::model::{
    apply_transfer, classification_loss, combined_loss, split_transfer_trainables, transfer_trainables, Activation,
    ClassifierParams, LossWeights, ModelObjective, Parameterization, Teacher, TransferParams,
};

pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const HVP_TOLERANCE: f64 = 1e-4;
pub const HYPERGRADIENT_TOLERANCE: f64 = 1e-4;
pub const MODEL_LEVEL_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Magnitudes below this are compared absolutely, so that coordinates
/// whose true derivative is essentially zero do not turn round-off into a
/// large relative error.
pub const RELATIVE_FLOOR: f64 = 1e-8;

/// `|a − n| / max(|a|, |n|, floor)`; exactly 0 when the two agree.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe)?;
            probe[i] = x[i] - eps;
            let down = f(&probe)?;
            probe[i] = x[i];
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteSize {
    Small,
    Medium,
}

impl SuiteSize {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "small" => Some(SuiteSize::Small),
            "medium" => Some(SuiteSize::Medium),
            _ => None,
        }
    }
}

/// Outcome of one derivative check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    /// Parameters of the instance, for reproducing a failure.
    pub case: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }

    fn compare(name: &str, analytic: &[f64], numeric: &[f64], threshold: f64, case: String) -> Self {
        let (worst_index, max_rel_error) = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .enumerate()
            .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
        Self {
            name: name.to_string(),
            max_rel_error,
            threshold,
            worst_index,
            case,
        }
    }
}

/// A seeded classifier, exemplar set and validation set.
#[derive(Clone, Debug)]
pub struct ReferenceInstance {
    pub model: ClassifierParams<f64>,
    pub exemplars: DenseTensor<f64>,
    pub labels: Vec<usize>,
    pub val_x: DenseTensor<f64>,
    pub val_labels: Vec<usize>,
    pub unroll: UnrollSpec,
    pub description: String,
}

fn gaussian_rows(
    rng: &mut ChaCha8Rng,
    classes: usize,
    per_class: usize,
    width: usize,
) -> (DenseTensor<f64>, Vec<usize>) {
    let mut data = Vec::with_capacity(classes * per_class * width);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        for _ in 0..per_class {
            for j in 0..width {
                let centre = if j == c % width { 1.5 } else { 0.0 } * if c >= width { -1.0 } else { 1.0 };
                let z: f64 = StandardNormal.sample(rng);
                data.push(centre + 0.7 * z);
            }
            labels.push(c);
        }
    }
    (DenseTensor::raw(vec![labels.len(), width], data), labels)
}

impl ReferenceInstance {
    /// `Small`: 2 classes, 4 exemplars of width 2, 8 tanh hidden units,
    /// `K = 3`, `α₂ = 0.01`. `Medium`: 3 classes, 6 exemplars of width 3,
    /// 16 hidden units, `K = 5`, `α₂ = 0.05`.
    pub fn new(size: SuiteSize, seed: u64) -> Result<Self> {
        let (classes, per_class, width, hidden, steps, lr) = match size {
            SuiteSize::Small => (2, 2, 2, 8, 3, 0.01),
            SuiteSize::Medium => (3, 2, 3, 16, 5, 0.05),
        };
        Self::build(classes, per_class, width, hidden, UnrollSpec::new(steps, lr)?, seed)
    }

    pub fn build(
        classes: usize,
        per_class: usize,
        width: usize,
        hidden: usize,
        unroll: UnrollSpec,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = ClassifierParams::init(&[width, hidden, classes], Activation::Tanh, &mut rng)?;
        // Non-zero biases so no derivative vanishes by symmetry.
        let mut flat = model.to_flat();
        for v in flat.values_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        model = model.with_flat(&flat)?;
        let (exemplars, labels) = gaussian_rows(&mut rng, classes, per_class, width);
        let (val_x, val_labels) = gaussian_rows(&mut rng, classes, 10, width);
        Ok(Self {
            model,
            exemplars,
            labels,
            val_x,
            val_labels,
            unroll,
            description: format!(
                "{classes} classes, {} exemplars of width {width}, {hidden} hidden, K = {}, lr = {}, seed {seed}",
                classes * per_class,
                unroll.steps,
                unroll.inner_lr
            ),
        })
    }

    fn case(&self, eps: f64) -> String {
        format!("{}, eps = {eps:e}", self.description)
    }
}

/// Reverse-mode gradient of `L_c` with respect to every classifier weight.
pub fn check_value_and_grad(inst: &ReferenceInstance, eps: f64) -> Result<CheckReport> {
    let model = &inst.model;
    let objective = ModelObjective::classification(model.activation(), &inst.val_x, &inst.val_labels);
    let theta = model.to_flat();
    let (_, grad) = value_and_grad(&objective, &theta)?;
    let numeric = central_difference(
        |v| {
            let m = model.with_flat(&FlatParams::with_layout_of(&theta, v.to_vec())?)?;
            classification_loss(&m, &inst.val_x, &inst.val_labels)
        },
        theta.values(),
        eps,
    )?;
    Ok(CheckReport::compare(
        "value_and_grad",
        grad.values(),
        &numeric,
        GRADIENT_TOLERANCE,
        inst.case(eps),
    ))
}

/// `H·v` against central differences of the gradient along `v`.
pub fn check_hvp(inst: &ReferenceInstance, eps: f64) -> Result<CheckReport> {
    let model = &inst.model;
    let objective = ModelObjective::classification(model.activation(), &inst.val_x, &inst.val_labels);
    let theta = model.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let dir: Vec<f64> = (0..theta.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let v = FlatParams::with_layout_of(&theta, dir)?;
    let hv = hessian_vector_product(&objective, &theta, &v)?;
    let grad_at = |k: f64| -> Result<FlatParams<f64>> {
        let mut p = theta.clone();
        p.axpy(k, &v);
        Ok(value_and_grad(&objective, &p)?.1)
    };
    let (up, down) = (grad_at(eps)?, grad_at(-eps)?);
    let numeric: Vec<f64> = up
        .values()
        .iter()
        .zip(down.values())
        .map(|(a, b)| (a - b) / (2.0 * eps))
        .collect();
    Ok(CheckReport::compare(
        "hvp",
        hv.values(),
        &numeric,
        HVP_TOLERANCE,
        inst.case(eps),
    ))
}

/// Exemplar hypergradient through the unrolled inner descent.
pub fn check_hypergradient(inst: &ReferenceInstance, eps: f64) -> Result<CheckReport> {
    let (_, grad) = exemplar_hypergradient(
        &inst.model,
        &inst.exemplars,
        &inst.labels,
        &inst.val_x,
        &inst.val_labels,
        inst.unroll,
    )?;
    let shape = inst.exemplars.shape().to_vec();
    let numeric = central_difference(
        |v| {
            let ex = DenseTensor::new(shape.clone(), v.to_vec())?;
            exemplar_outer_loss(
                &inst.model,
                &ex,
                &inst.labels,
                &inst.val_x,
                &inst.val_labels,
                inst.unroll,
            )
        },
        inst.exemplars.data(),
        eps,
    )?;
    Ok(CheckReport::compare(
        &format!("unrolled_hypergradient (K = {})", inst.unroll.steps),
        grad.data(),
        &numeric,
        HYPERGRADIENT_TOLERANCE,
        inst.case(eps),
    ))
}

/// Gradient of `L_all` with respect to transfer parameters and new head
/// rows, with one class added and a perturbed, non-identity transfer.
pub fn check_model_level(inst: &ReferenceInstance, eps: f64) -> Result<CheckReport> {
    let previous = &inst.model;
    let old_classes = previous.num_classes();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a5f);
    let base = previous.grow_head(1, 0.3, &mut rng);
    let mut transfer = TransferParams::identity(&base);
    for (scale, shift) in &mut transfer.layers {
        for v in scale.data_mut() {
            *v += 0.2 * rng.random_range(-1.0..1.0);
        }
        for v in shift.data_mut() {
            *v += 0.2 * rng.random_range(-1.0..1.0);
        }
    }
    let mut labels = inst.val_labels.clone();
    let n = labels.len();
    for y in labels.iter_mut().skip(n - n / 4) {
        *y = old_classes;
    }
    let weights = LossWeights::new(0.5, 2.0)?;
    let teacher = Teacher::from_model(previous, &inst.val_x, weights.temperature)?;
    let objective = ModelObjective {
        parameterization: Parameterization::Transfer {
            base: &base,
            old_classes,
        },
        x: &inst.val_x,
        labels: &labels,
        teacher: Some(&teacher),
        lambda: weights.lambda,
    };
    let trainables = transfer_trainables(&base, &transfer, old_classes)?;
    let (_, grad) = value_and_grad(&objective, &trainables)?;
    let numeric = central_difference(
        |v| {
            let flat = FlatParams::with_layout_of(&trainables, v.to_vec())?;
            let (b, t) = split_transfer_trainables(&base, old_classes, &flat)?;
            combined_loss(
                &apply_transfer(&b, &t)?,
                previous,
                &inst.val_x,
                &labels,
                weights,
                old_classes,
            )
        },
        trainables.values(),
        eps,
    )?;
    Ok(CheckReport::compare(
        "model_level_update",
        grad.values(),
        &numeric,
        MODEL_LEVEL_TOLERANCE,
        inst.case(eps),
    ))
}

/// Every check on the instance for `size`, plus the `K = 0` hypergradient
/// whose error must be exactly zero.
pub fn run_suite(size: SuiteSize, eps: f64) -> Result<Vec<CheckReport>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    let inst = ReferenceInstance::new(size, 1)?;
    let mut frozen = inst.clone();
    frozen.unroll = UnrollSpec::new(0, inst.unroll.inner_lr)?;
    Ok(vec![
        check_value_and_grad(&inst, eps)?,
        check_hvp(&inst, eps)?,
        check_hypergradient(&inst, eps)?,
        check_hypergradient(&frozen, eps)?,
        check_model_level(&inst, eps)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_cases() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_cubic() {
        let d = central_difference(|x| Ok(x[0].powi(3) + 2.0 * x[1]), &[2.0, 5.0], 1e-3).unwrap();
        assert!((d[0] - 12.0).abs() < 1e-5);
        assert!((d[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn small_suite_passes() {
        for r in run_suite(SuiteSize::Small, DEFAULT_EPS).unwrap() {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn frozen_hypergradient_is_exactly_zero() {
        let reports = run_suite(SuiteSize::Small, DEFAULT_EPS).unwrap();
        assert_eq!(reports[3].max_rel_error, 0.0);
    }

    #[test]
    fn coarse_step_breaches() {
        assert!(run_suite(SuiteSize::Small, 1e-1).unwrap().iter().any(|r| !r.passed()));
    }
}
