//! Exemplars as trainable tensors.
//!
//! A temporary copy of the model is trained for `K` steps on the exemplars
//! and then scored on a validation set; the exemplars follow the
//! hypergradient of that score. New-class exemplars validate against the
//! new class data. Old exemplars have no data left, so they are split per
//! class into disjoint subsets and each subset validates against the rest.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{
    unroll_trajectory, unrolled_hypergradient, BilevelObjective, DenseTensor, FlatParams, Tape, UnrollSpec, Var,
};
use crate::error::{Error, Result};
use crate::model::{
    classification_loss_from_logits, forward_on_tape, train_direct, Activation, ClassifierParams, DescentSchedule,
};
use crate::scalar::{Lift, Scalar};

use super::set::ExemplarSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExemplarHyperparams {
    /// Outer step size for new-class exemplars (`β₁`).
    pub outer_lr_new: f64,
    /// Outer step size for adjusting old exemplars (`β₂`).
    pub outer_lr_old: f64,
    pub outer_epochs: usize,
    pub unroll: UnrollSpec,
    pub num_splits: usize,
    /// Both outer step sizes halve after this many epochs.
    pub lr_halving_period: usize,
    /// Halve and retry once when an outer step raises the validation loss;
    /// drop the step if it still does.
    #[serde(default)]
    pub backtracking: bool,
    /// Optional `[lo, hi]` box for exemplar values.
    #[serde(default)]
    pub clip: Option<[f64; 2]>,
}

impl Default for ExemplarHyperparams {
    fn default() -> Self {
        Self {
            outer_lr_new: 0.01,
            outer_lr_old: 0.01,
            outer_epochs: 50,
            unroll: UnrollSpec::default(),
            num_splits: 2,
            lr_halving_period: 10,
            backtracking: false,
            clip: None,
        }
    }
}

impl ExemplarHyperparams {
    /// Step sizes may be zero (a no-op run that still records losses).
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("outer_lr_new", self.outer_lr_new), ("outer_lr_old", self.outer_lr_old)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be non-negative, got {v}")));
            }
        }
        self.unroll
            .validate()
            .map_err(|e| Error::config("unroll.inner_lr", e.to_string()))?;
        if self.num_splits < 2 {
            return Err(Error::config(
                "num_splits",
                format!("must be at least 2, got {}", self.num_splits),
            ));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::config("lr_halving_period", "must be positive"));
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo < hi) {
                return Err(Error::config("clip", format!("empty interval [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn step_size(&self, base: f64, epoch: usize) -> f64 {
        base * 0.5f64.powi((epoch / self.lr_halving_period) as i32)
    }
}

/// Stacks exemplar leaves and scores them with the temporary model.
fn stacked_input<S: Scalar>(tape: &mut Tape<S>, exemplars: &[Var]) -> Result<Var> {
    let mut x = *exemplars
        .first()
        .ok_or_else(|| Error::Argument("no exemplar blocks".into()))?;
    for &e in &exemplars[1..] {
        x = tape.concat(x, e)?;
    }
    Ok(x)
}

fn layer_vars(theta: &[Var]) -> Vec<(Var, Var)> {
    theta.chunks(2).map(|c| (c[0], c[1])).collect()
}

/// `L_c(θ; E)` with fixed labels for the stacked exemplar rows.
struct FitExemplars<'a> {
    activation: Activation,
    labels: &'a [usize],
}

impl<T: Scalar> BilevelObjective<T> for FitExemplars<'_> {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, theta: &[Var], exemplars: &[Var]) -> Result<Var> {
        let x = stacked_input(tape, exemplars)?;
        let z = forward_on_tape(tape, &layer_vars(theta), self.activation, x)?;
        tape.cross_entropy(z, self.labels)
    }
}

/// `L_c(θ; V)` on a fixed validation set.
struct Validation<'a, T> {
    activation: Activation,
    x: &'a DenseTensor<T>,
    labels: &'a [usize],
}

impl<T: Scalar> BilevelObjective<T> for Validation<'_, T> {
    fn eval<S: Lift<T>>(&self, tape: &mut Tape<S>, theta: &[Var], _exemplars: &[Var]) -> Result<Var> {
        let x = tape.constant(self.x);
        let z = forward_on_tape(tape, &layer_vars(theta), self.activation, x)?;
        tape.cross_entropy(z, self.labels)
    }
}

/// Outer loss `L_c(Θ′_K(E); V)` and its exact gradient with respect to the
/// exemplar rows `E`, where `Θ′` starts from `model` and takes `K` steps on
/// `L_c(·; E)`.
pub fn exemplar_hypergradient<T: Scalar>(
    model: &ClassifierParams<T>,
    exemplars: &DenseTensor<T>,
    labels: &[usize],
    val_x: &DenseTensor<T>,
    val_labels: &[usize],
    unroll: UnrollSpec,
) -> Result<(T, DenseTensor<T>)> {
    let activation = model.activation();
    let inner = FitExemplars { activation, labels };
    let outer = Validation {
        activation,
        x: val_x,
        labels: val_labels,
    };
    let ex = FlatParams::from_blocks([("exemplars", exemplars.clone())]);
    let hg = unrolled_hypergradient(&inner, &outer, &model.to_flat(), &ex, unroll)?;
    Ok((hg.outer_loss, hg.grad.block_tensor(0)))
}

/// The outer loss alone, evaluated by running the inner steps and a plain
/// forward pass.
pub fn exemplar_outer_loss<T: Scalar>(
    model: &ClassifierParams<T>,
    exemplars: &DenseTensor<T>,
    labels: &[usize],
    val_x: &DenseTensor<T>,
    val_labels: &[usize],
    unroll: UnrollSpec,
) -> Result<T> {
    let inner = FitExemplars {
        activation: model.activation(),
        labels,
    };
    let ex = FlatParams::from_blocks([("exemplars", exemplars.clone())]);
    let trajectory = unroll_trajectory(&inner, &model.to_flat(), &ex, unroll)?;
    let trained = model.with_flat(trajectory.last().expect("θ_0 present"))?;
    classification_loss_from_logits(&trained.forward(None, val_x)?, val_labels)
}

struct Descent<T> {
    exemplars: FlatParams<T>,
    loss_trace: Vec<f64>,
    drift_trace: Vec<f64>,
}

/// Mean Euclidean distance between corresponding rows.
fn mean_row_distance<T: Scalar>(a: &FlatParams<T>, b: &FlatParams<T>, width: usize) -> f64 {
    let rows = a.len() / width.max(1);
    if rows == 0 {
        return 0.0;
    }
    let total: f64 = a
        .values()
        .chunks(width)
        .zip(b.values().chunks(width))
        .map(|(p, q)| {
            p.iter()
                .zip(q)
                .map(|(x, y)| {
                    let d = x.primal() - y.primal();
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / rows as f64
}

/// The shared outer loop: `epochs` hypergradient steps on `init`.
fn hypergradient_descent<T: Scalar>(
    model: &ClassifierParams<T>,
    init: FlatParams<T>,
    labels: &[usize],
    val_x: &DenseTensor<T>,
    val_labels: &[usize],
    beta: f64,
    hp: &ExemplarHyperparams,
) -> Result<Descent<T>> {
    let activation = model.activation();
    let inner = FitExemplars { activation, labels };
    let outer = Validation {
        activation,
        x: val_x,
        labels: val_labels,
    };
    let theta0 = model.to_flat();
    let width = model.input_width();

    let score = |ex: &FlatParams<T>| -> Result<f64> {
        let trajectory = unroll_trajectory(&inner, &theta0, ex, hp.unroll)?;
        let trained = model.with_flat(trajectory.last().expect("θ_0 present"))?;
        Ok(classification_loss_from_logits(&trained.forward(None, val_x)?, val_labels)?.primal())
    };
    let clip = |ex: &mut FlatParams<T>| {
        if let Some([lo, hi]) = hp.clip {
            let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
            for v in ex.values_mut() {
                if *v < lo {
                    *v = lo;
                } else if *v > hi {
                    *v = hi;
                }
            }
        }
    };

    let start = init.clone();
    let mut ex = init;
    let mut loss_trace = Vec::with_capacity(hp.outer_epochs + 1);
    let mut drift_trace = Vec::with_capacity(hp.outer_epochs);
    for epoch in 0..hp.outer_epochs {
        let hg = unrolled_hypergradient(&inner, &outer, &theta0, &ex, hp.unroll).map_err(|e| e.in_epoch(epoch))?;
        let loss = hg.outer_loss.primal();
        loss_trace.push(loss);
        let step = hp.step_size(beta, epoch);
        let propose = |s: f64| {
            let mut c = ex.clone();
            c.axpy(T::from_f64_lossy(-s), &hg.grad);
            clip(&mut c);
            c
        };
        let mut next = propose(step);
        if hp.backtracking && step > 0.0 && score(&next).map_err(|e| e.in_epoch(epoch))? > loss {
            next = propose(step / 2.0);
            if score(&next).map_err(|e| e.in_epoch(epoch))? > loss {
                next = ex.clone();
            }
        }
        ex = next;
        drift_trace.push(mean_row_distance(&ex, &start, width));
    }
    loss_trace.push(score(&ex).map_err(|e| e.in_epoch(hp.outer_epochs))?);
    Ok(Descent {
        exemplars: ex,
        loss_trace,
        drift_trace,
    })
}

fn block_name(class: usize, split: Option<usize>) -> String {
    match split {
        Some(s) => format!("class{class}.split{s}"),
        None => format!("class{class}"),
    }
}

#[derive(Clone, Debug)]
pub struct MnemonicsOutcome<T> {
    pub exemplars: ExemplarSet<T>,
    /// Validation loss before each outer epoch, then after the last one.
    pub loss_trace: Vec<f64>,
    /// Mean Euclidean distance from the starting rows after each epoch.
    pub drift_trace: Vec<f64>,
}

/// Trains the exemplars of `init` jointly so that a copy of `model` trained
/// on them for `K` steps classifies `(x, labels)` well.
pub fn train_mnemonics<T: Scalar>(
    init: &ExemplarSet<T>,
    x: &DenseTensor<T>,
    labels: &[usize],
    model: &ClassifierParams<T>,
    hp: &ExemplarHyperparams,
) -> Result<MnemonicsOutcome<T>> {
    hp.validate()?;
    if init.is_empty() {
        return Err(Error::Argument("no exemplars to train".into()));
    }
    if init.width() != model.input_width() || x.cols() != model.input_width() {
        return Err(Error::shape(
            "mnemonics",
            format!(
                "exemplar width {} and data width {} for model width {}",
                init.width(),
                x.cols(),
                model.input_width()
            ),
        ));
    }
    let flat = FlatParams::from_blocks(init.iter().map(|(c, e)| (block_name(c, None), e.current.clone())));
    let (_, ex_labels) = init.stacked();
    let run = hypergradient_descent(model, flat, &ex_labels, x, labels, hp.outer_lr_new, hp)?;
    let mut out = init.clone();
    for (i, c) in init.classes().enumerate() {
        out.update(c, run.exemplars.block_tensor(i))?;
    }
    Ok(MnemonicsOutcome {
        exemplars: out,
        loss_trace: run.loss_trace,
        drift_trace: run.drift_trace,
    })
}

/// Row indices of each class's exemplars, split into `num_splits` disjoint
/// subsets: a seeded shuffle dealt round-robin. Classes with fewer rows than
/// `num_splits` are left out.
pub fn partition_exemplars<T: Scalar>(
    set: &ExemplarSet<T>,
    num_splits: usize,
    seed: u64,
) -> Vec<BTreeMap<usize, Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = vec![BTreeMap::new(); num_splits];
    for (c, e) in set.iter() {
        let n = e.current.rows();
        if n < num_splits {
            continue;
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        for (s, split) in splits.iter_mut().enumerate() {
            let mut part: Vec<usize> = idx.iter().skip(s).step_by(num_splits).copied().collect();
            part.sort_unstable();
            split.insert(c, part);
        }
    }
    splits
}

#[derive(Clone, Debug)]
pub struct AdjustOutcome<T> {
    pub exemplars: ExemplarSet<T>,
    /// One validation-loss trace per subset, in update order.
    pub loss_traces: Vec<Vec<f64>>,
    pub skipped_classes: Vec<usize>,
}

/// Adjusts old exemplars to the current model. Subsets are updated in turn;
/// each validates against the union of the others in their current state.
pub fn adjust_old_exemplars<T: Scalar>(
    old: &ExemplarSet<T>,
    model: &ClassifierParams<T>,
    hp: &ExemplarHyperparams,
    seed: u64,
) -> Result<AdjustOutcome<T>> {
    hp.validate()?;
    let skipped: Vec<usize> = old
        .iter()
        .filter(|(_, e)| e.current.rows() < hp.num_splits)
        .map(|(c, _)| c)
        .collect();
    for c in &skipped {
        log::warn!(
            "class {c} has {} exemplars, fewer than {} splits; not adjusted",
            old.count(*c),
            hp.num_splits
        );
    }
    let splits = partition_exemplars(old, hp.num_splits, seed);
    let mut out = old.clone();
    let mut loss_traces = Vec::with_capacity(hp.num_splits);
    if splits[0].is_empty() {
        return Ok(AdjustOutcome {
            exemplars: out,
            loss_traces,
            skipped_classes: skipped,
        });
    }
    for (s, split) in splits.iter().enumerate() {
        let train = FlatParams::from_blocks(
            split
                .iter()
                .map(|(&c, rows)| (block_name(c, Some(s)), out.get(c).unwrap().current.select_rows(rows))),
        );
        let train_labels: Vec<usize> = split
            .iter()
            .flat_map(|(&c, rows)| std::iter::repeat_n(c, rows.len()))
            .collect();
        let mut val_parts = Vec::new();
        let mut val_labels = Vec::new();
        for (o, other) in splits.iter().enumerate() {
            if o == s {
                continue;
            }
            for (&c, rows) in other {
                val_parts.push(out.get(c).unwrap().current.select_rows(rows));
                val_labels.extend(std::iter::repeat_n(c, rows.len()));
            }
        }
        let val_x = DenseTensor::vstack(&val_parts.iter().collect::<Vec<_>>())?;
        let run = hypergradient_descent(model, train, &train_labels, &val_x, &val_labels, hp.outer_lr_old, hp)?;
        for (b, (&c, rows)) in split.iter().enumerate() {
            let mut current = out.get(c).unwrap().current.clone();
            let updated = run.exemplars.block_tensor(b);
            for (k, &r) in rows.iter().enumerate() {
                current.row_mut(r).copy_from_slice(updated.row(k));
            }
            out.update(c, current)?;
        }
        loss_traces.push(run.loss_trace);
    }
    Ok(AdjustOutcome {
        exemplars: out,
        loss_traces,
        skipped_classes: skipped,
    })
}

/// Fine-tunes every weight on the exemplar union with `L_c` only. Every
/// class must hold the same number of exemplars.
pub fn fine_tune_balanced<T: Scalar>(
    model: &ClassifierParams<T>,
    exemplars: &ExemplarSet<T>,
    schedule: DescentSchedule,
) -> Result<(ClassifierParams<T>, Vec<T>)> {
    let unbalanced = exemplars.unbalanced_classes();
    if !unbalanced.is_empty() {
        return Err(Error::Balance { classes: unbalanced });
    }
    let (x, y) = exemplars.stacked();
    train_direct(model, None, &x, &y, None, schedule)
}
