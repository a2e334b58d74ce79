use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exemplar::ExemplarSet;
use crate::scalar::Scalar;

/// Class counts per phase. [`build_schedule`] puts half the classes up
/// front and splits the rest evenly over `increments` phases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub total_classes: usize,
    pub increments: usize,
    pub classes_per_phase: Vec<usize>,
}

impl PhaseSchedule {
    pub fn num_phases(&self) -> usize {
        self.classes_per_phase.len()
    }

    /// Classes seen through phase `i` (inclusive).
    pub fn classes_through(&self, i: usize) -> usize {
        self.classes_per_phase[..=i].iter().sum()
    }

    /// Model-output indices introduced in phase `i`.
    pub fn phase_classes(&self, i: usize) -> std::ops::Range<usize> {
        let start = if i == 0 { 0 } else { self.classes_through(i - 1) };
        start..self.classes_through(i)
    }

    /// A schedule with arbitrary positive class counts per phase.
    pub fn explicit(classes_per_phase: Vec<usize>) -> Result<Self> {
        if classes_per_phase.is_empty() || classes_per_phase.contains(&0) {
            return Err(Error::Schedule(format!(
                "every phase needs at least one class, got {classes_per_phase:?}"
            )));
        }
        Ok(Self {
            total_classes: classes_per_phase.iter().sum(),
            increments: classes_per_phase.len() - 1,
            classes_per_phase,
        })
    }
}

/// `N = 0` keeps every class in a single phase.
pub fn build_schedule(total_classes: usize, increments: usize) -> Result<PhaseSchedule> {
    if total_classes == 0 {
        return Err(Error::Schedule("at least one class is required".into()));
    }
    let classes_per_phase = if increments == 0 {
        vec![total_classes]
    } else {
        if !total_classes.is_multiple_of(2) {
            return Err(Error::Schedule(format!(
                "{total_classes} classes cannot be halved for an incremental schedule"
            )));
        }
        let half = total_classes / 2;
        if !half.is_multiple_of(increments) {
            return Err(Error::Schedule(format!(
                "{half} remaining classes do not divide into {increments} phases"
            )));
        }
        let mut v = vec![half];
        v.extend(std::iter::repeat_n(half / increments, increments));
        v
    };
    Ok(PhaseSchedule {
        total_classes,
        increments,
        classes_per_phase,
    })
}

/// Exemplar memory limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum MemoryBudget {
    /// Exactly `m` exemplars for every stored class.
    PerClass { m: usize },
    /// At most `capacity` exemplars overall, split evenly between classes.
    Total { capacity: usize },
}

impl MemoryBudget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MemoryBudget::PerClass { m: 0 } => Err(Error::config("budget.m", "must be positive")),
            MemoryBudget::Total { capacity: 0 } => Err(Error::config("budget.capacity", "must be positive")),
            _ => Ok(()),
        }
    }

    /// Exemplars allowed per class once `classes_seen` classes are stored.
    pub fn quota(&self, classes_seen: usize) -> Result<usize> {
        match *self {
            MemoryBudget::PerClass { m } => Ok(m),
            MemoryBudget::Total { capacity } => {
                let q = capacity / classes_seen.max(1);
                if q == 0 {
                    return Err(Error::BudgetExhausted(format!(
                        "capacity {capacity} cannot hold one exemplar for each of {classes_seen} classes"
                    )));
                }
                Ok(q)
            }
        }
    }
}

/// Trims every class to the budget's quota by seeded random discard.
/// Classes already at or below the quota are left alone.
pub fn enforce_memory_budget<T: Scalar>(
    memory: &ExemplarSet<T>,
    budget: MemoryBudget,
    seed: u64,
) -> Result<ExemplarSet<T>> {
    if memory.is_empty() {
        return Err(Error::Argument("memory holds no exemplars".into()));
    }
    let quota = budget.quota(memory.num_classes())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = memory.clone();
    for c in memory.classes() {
        let n = memory.count(c);
        if n <= quota {
            continue;
        }
        let mut keep: Vec<usize> = (0..n).collect();
        keep.shuffle(&mut rng);
        keep.truncate(quota);
        keep.sort_unstable();
        out.retain_rows(c, &keep)?;
    }
    Ok(out)
}
