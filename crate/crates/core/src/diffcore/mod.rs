//! Differentiable numeric core: dense tensors, a reverse-mode tape,
//! Hessian-vector products and unrolled hypergradients.

mod flat;
mod grad;
mod tape;
mod tensor;
mod unroll;

pub use flat::{BlockLayout, FlatParams};
pub use grad::{grad_and_hvp, hessian_vector_product, value_and_grad, Objective};
pub(crate) use tape::softmax_rows;
pub use tape::{Gradients, Tape, Var};
pub use tensor::DenseTensor;
pub use unroll::{
    unroll_trajectory, unrolled_hypergradient, BilevelObjective, Hypergradient, UnrollSpec, DIVERGENCE_LIMIT,
};
