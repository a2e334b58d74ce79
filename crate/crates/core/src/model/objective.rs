//! Tape objectives for the classifier under its two parameterisations.

use crate::diffcore::{DenseTensor, FlatParams, Objective, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{Lift, Scalar};

use super::classifier::{forward_on_tape, Activation, ClassifierParams, TransferParams};
use super::loss::{teacher_targets, LossWeights};

/// Which parameters a model-level objective differentiates.
#[derive(Clone, Copy, Debug)]
pub enum Parameterization<'a, T> {
    /// Every weight and bias of the classifier, in [`ClassifierParams::to_flat`] order.
    Direct { activation: Activation },
    /// Per-neuron scale/shift of a frozen base, followed by the weight and
    /// bias rows of any output neurons beyond `old_classes`. The base
    /// contributes constants only.
    Transfer {
        base: &'a ClassifierParams<T>,
        old_classes: usize,
    },
}

/// Teacher distribution over old classes, precomputed from the previous
/// model.
#[derive(Clone, Debug)]
pub struct Teacher<T> {
    pub targets: DenseTensor<T>,
    pub temperature: T,
}

impl<T: Scalar> Teacher<T> {
    pub fn from_model(previous: &ClassifierParams<T>, x: &DenseTensor<T>, temperature: f64) -> Result<Self> {
        let t = T::from_f64_lossy(temperature);
        let logits = previous.forward(None, x)?;
        Ok(Self {
            targets: teacher_targets(&logits, previous.num_classes(), t)?,
            temperature: t,
        })
    }
}

/// `λ·L_c + (1 − λ)·L_d` over a batch, or `L_c` alone when no teacher is
/// given.
pub struct ModelObjective<'a, T> {
    pub parameterization: Parameterization<'a, T>,
    pub x: &'a DenseTensor<T>,
    pub labels: &'a [usize],
    pub teacher: Option<&'a Teacher<T>>,
    pub lambda: f64,
}

impl<'a, T: Scalar> ModelObjective<'a, T> {
    pub fn classification(activation: Activation, x: &'a DenseTensor<T>, labels: &'a [usize]) -> Self {
        Self {
            parameterization: Parameterization::Direct { activation },
            x,
            labels,
            teacher: None,
            lambda: 1.0,
        }
    }

    pub fn with_teacher(mut self, teacher: &'a Teacher<T>, weights: LossWeights) -> Self {
        self.teacher = Some(teacher);
        self.lambda = weights.lambda;
        self
    }

    /// Logits recorded on `tape` for the given parameter leaves.
    pub fn logits<S: Lift<T>>(&self, tape: &mut Tape<S>, params: &[Var], x: Var) -> Result<Var> {
        match self.parameterization {
            Parameterization::Direct { activation } => {
                if !params.len().is_multiple_of(2) {
                    return Err(Error::shape("classifier", "odd number of parameter blocks"));
                }
                let layers: Vec<(Var, Var)> = params.chunks(2).map(|c| (c[0], c[1])).collect();
                forward_on_tape(tape, &layers, activation, x)
            }
            Parameterization::Transfer { base, old_classes } => {
                let layers = transfer_layers(tape, base, old_classes, params)?;
                forward_on_tape(tape, &layers, base.activation(), x)
            }
        }
    }
}

/// Effective `(W ⊙ scale, b + shift)` per layer for the transfer
/// parameterisation.
fn transfer_layers<T: Scalar, S: Lift<T>>(
    tape: &mut Tape<S>,
    base: &ClassifierParams<T>,
    old_classes: usize,
    params: &[Var],
) -> Result<Vec<(Var, Var)>> {
    let q_last = base.layers().len() - 1;
    let new_rows = base.num_classes().saturating_sub(old_classes);
    let expected = 2 * base.layers().len() + if new_rows > 0 { 2 } else { 0 };
    if params.len() != expected {
        return Err(Error::shape(
            "transfer",
            format!("{} parameter blocks, expected {expected}", params.len()),
        ));
    }
    let mut out = Vec::with_capacity(base.layers().len());
    for (q, layer) in base.layers().iter().enumerate() {
        let (scale, shift) = (params[2 * q], params[2 * q + 1]);
        let (w, b) = if q == q_last && new_rows > 0 {
            let old_w = tape.constant(&layer.weight.select_rows(&(0..old_classes).collect::<Vec<_>>()));
            let old_b = tape.constant(&DenseTensor::vector(layer.bias.data()[..old_classes].to_vec()));
            let (new_w, new_b) = (params[expected - 2], params[expected - 1]);
            (tape.concat(old_w, new_w)?, tape.concat(old_b, new_b)?)
        } else {
            (tape.constant(&layer.weight), tape.constant(&layer.bias))
        };
        let w = tape.scale_rows(w, scale)?;
        let b = tape.add(b, shift)?;
        out.push((w, b));
    }
    Ok(out)
}

impl<T: Scalar> Objective<T> for ModelObjective<'_, T> {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, params: &[Var]) -> Result<Var> {
        let x = tape.constant(self.x);
        let z = self.logits(tape, params, x)?;
        let lc = tape.cross_entropy(z, self.labels)?;
        let Some(teacher) = self.teacher else {
            return Ok(lc);
        };
        let ld = tape.soft_cross_entropy(z, teacher.targets.lift(), S::lift(teacher.temperature))?;
        let lambda = S::from_f64_lossy(self.lambda);
        let a = tape.scale(lc, lambda);
        let b = tape.scale(ld, S::one() - lambda);
        tape.add(a, b)
    }
}

/// Trainable blocks for the transfer parameterisation: the transfer
/// parameters followed by the new head rows of `base` (if any).
pub fn transfer_trainables<T: Scalar>(
    base: &ClassifierParams<T>,
    transfer: &TransferParams<T>,
    old_classes: usize,
) -> Result<FlatParams<T>> {
    transfer.check_compatible(base)?;
    let mut flat = transfer.to_flat();
    let last = base.layers().last().unwrap();
    let n = last.outputs();
    if old_classes > n {
        return Err(Error::shape(
            "transfer",
            format!("{old_classes} old classes but only {n} outputs"),
        ));
    }
    if old_classes < n {
        let rows: Vec<usize> = (old_classes..n).collect();
        let head = FlatParams::from_blocks([
            ("head.new_weight", last.weight.select_rows(&rows)),
            (
                "head.new_bias",
                DenseTensor::vector(last.bias.data()[old_classes..].to_vec()),
            ),
        ]);
        flat = flat.concat(&head);
    }
    Ok(flat)
}

/// Inverse of [`transfer_trainables`]: the transfer parameters and `base`
/// with its new head rows replaced.
pub fn split_transfer_trainables<T: Scalar>(
    base: &ClassifierParams<T>,
    old_classes: usize,
    flat: &FlatParams<T>,
) -> Result<(ClassifierParams<T>, TransferParams<T>)> {
    let n_layers = base.layers().len();
    let (t, head) = flat.split_blocks(2 * n_layers);
    let transfer = TransferParams::from_flat(&t)?;
    transfer.check_compatible(base)?;
    if head.num_blocks() == 0 {
        return Ok((base.clone(), transfer));
    }
    let mut base_flat = base.to_flat();
    let q = n_layers - 1;
    let cols = base.layers()[q].inputs();
    let w_off = base_flat.layout()[2 * q].offset + old_classes * cols;
    let b_off = base_flat.layout()[2 * q + 1].offset + old_classes;
    let (new_w, new_b) = (head.block_values(0), head.block_values(1));
    base_flat.values_mut()[w_off..w_off + new_w.len()].copy_from_slice(new_w);
    base_flat.values_mut()[b_off..b_off + new_b.len()].copy_from_slice(new_b);
    Ok((base.with_flat(&base_flat)?, transfer))
}
