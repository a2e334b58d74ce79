//! Mnemonics exemplar training for multi-class incremental learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`]: tensors, reverse-mode gradients, Hessian-vector products
//!   and hypergradients through unrolled gradient descent.
//! * [`model`]: small smooth classifiers, per-neuron weight transfer and the
//!   classification / distillation losses.
//! * [`exemplar`]: random, herding and mnemonics exemplar strategies.
//! * [`dataio`]: synthetic class streams and dataset files.
//! * [`protocol`]: the phase loop, memory budgets and metrics.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to
//! `f64`, which is what the protocol and file formats use.

pub mod dataio;
pub mod diffcore;
pub mod error;
pub mod exemplar;
pub mod model;
pub mod protocol;
pub mod scalar;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::{Dual, Lift, Scalar};

pub type Tensor = diffcore::DenseTensor<f64>;
pub type Params = diffcore::FlatParams<f64>;
pub type Classifier = model::ClassifierParams<f64>;
pub type Transfer = model::TransferParams<f64>;
pub type Dataset = dataio::LabeledDataset<f64>;
pub type Exemplars = exemplar::ExemplarSet<f64>;
