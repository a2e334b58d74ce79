use serde::{Deserialize, Serialize};

use crate::diffcore::{value_and_grad, DenseTensor, FlatParams, Objective, DIVERGENCE_LIMIT};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::classifier::{apply_transfer, ClassifierParams, TransferParams};
use super::loss::LossWeights;
use super::objective::{split_transfer_trainables, transfer_trainables, ModelObjective, Parameterization, Teacher};

/// Full-batch gradient descent schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescentSchedule {
    pub lr: f64,
    pub epochs: usize,
}

impl DescentSchedule {
    pub fn validate(&self, field: &str) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(
                format!("{field}.lr"),
                format!("must be positive, got {}", self.lr),
            ));
        }
        Ok(())
    }
}

/// Plain gradient descent; returns the final parameters and the loss
/// before each step.
pub fn gradient_descent<T, O>(
    objective: &O,
    init: FlatParams<T>,
    schedule: DescentSchedule,
) -> Result<(FlatParams<T>, Vec<T>)>
where
    T: Scalar,
    O: Objective<T> + ?Sized,
{
    let lr = T::from_f64_lossy(schedule.lr);
    let mut theta = init;
    let mut trace = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let (loss, grad) = value_and_grad(objective, &theta).map_err(|e| match e {
            Error::NonFinite { block } => Error::Divergence {
                step: epoch,
                reason: format!("non-finite values in `{block}`"),
            },
            other => other,
        })?;
        trace.push(loss);
        theta.axpy(-lr, &grad);
        let m = theta.max_abs();
        if !(m <= DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                step: epoch,
                reason: format!("parameter magnitude {m:e} exceeds {DIVERGENCE_LIMIT:e}"),
            });
        }
    }
    Ok((theta, trace))
}

#[derive(Clone, Debug)]
pub struct ModelLevelUpdate<T> {
    /// Base with its new-class head rows trained; old rows untouched.
    pub base: ClassifierParams<T>,
    pub transfer: TransferParams<T>,
    pub loss_trace: Vec<T>,
}

impl<T: Scalar> ModelLevelUpdate<T> {
    /// `T ⊙_L base`, the model for the phase.
    pub fn materialize(&self) -> Result<ClassifierParams<T>> {
        apply_transfer(&self.base, &self.transfer)
    }
}

/// Trains transfer parameters on a frozen base against `L_all`.
///
/// `base` is the previous model with its head already grown to the current
/// class count; the rows beyond `previous.num_classes()` have no previous
/// counterpart and are trained directly alongside the transfer parameters.
/// With `weights = None` only the classification term is used.
pub fn model_level_update<T: Scalar>(
    base: &ClassifierParams<T>,
    transfer: &TransferParams<T>,
    previous: &ClassifierParams<T>,
    x: &DenseTensor<T>,
    labels: &[usize],
    weights: Option<LossWeights>,
    schedule: DescentSchedule,
) -> Result<ModelLevelUpdate<T>> {
    let old_classes = previous.num_classes();
    let init = transfer_trainables(base, transfer, old_classes)?;
    let teacher = match weights {
        Some(w) => {
            w.validate()?;
            Some(Teacher::from_model(previous, x, w.temperature)?)
        }
        None => None,
    };
    let objective = ModelObjective {
        parameterization: Parameterization::Transfer { base, old_classes },
        x,
        labels,
        teacher: teacher.as_ref(),
        lambda: weights.map_or(1.0, |w| w.lambda),
    };
    let (trained, loss_trace) = gradient_descent(&objective, init, schedule)?;
    let (base, transfer) = split_transfer_trainables(base, old_classes, &trained)?;
    Ok(ModelLevelUpdate {
        base,
        transfer,
        loss_trace,
    })
}

/// Trains every weight directly (the over-writing mode). With a previous
/// model and loss weights the objective is `L_all`, otherwise `L_c`.
pub fn train_direct<T: Scalar>(
    init: &ClassifierParams<T>,
    previous: Option<&ClassifierParams<T>>,
    x: &DenseTensor<T>,
    labels: &[usize],
    weights: Option<LossWeights>,
    schedule: DescentSchedule,
) -> Result<(ClassifierParams<T>, Vec<T>)> {
    let teacher = match (previous, weights) {
        (Some(p), Some(w)) => {
            w.validate()?;
            Some(Teacher::from_model(p, x, w.temperature)?)
        }
        _ => None,
    };
    let mut objective = ModelObjective::classification(init.activation(), x, labels);
    if let (Some(t), Some(w)) = (teacher.as_ref(), weights) {
        objective = objective.with_teacher(t, w);
    }
    let (flat, trace) = gradient_descent(&objective, init.to_flat(), schedule)?;
    Ok((init.with_flat(&flat)?, trace))
}
