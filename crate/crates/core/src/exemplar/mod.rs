//! Exemplar strategies: random rows, herding, and trained mnemonics
//! exemplars.

mod mnemonics;
mod select;
mod set;

pub use mnemonics::{
    adjust_old_exemplars, exemplar_hypergradient, exemplar_outer_loss, fine_tune_balanced, partition_exemplars,
    train_mnemonics, AdjustOutcome, ExemplarHyperparams, MnemonicsOutcome,
};
pub use select::{select_herding, select_random, select_random_indices};
pub use set::{exemplar_drift, mean_euclidean_drift, ClassExemplars, Drift, ExemplarSet, Origin};
