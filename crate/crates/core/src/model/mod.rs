//! Classifiers, weight transfer and the losses they are trained on.

pub mod checkpoint;
mod classifier;
mod loss;
mod objective;
mod train;

pub(crate) use classifier::forward_on_tape;
pub use classifier::{apply_transfer, Activation, ClassifierParams, Layer, TransferParams};
pub use loss::{
    classification_loss, classification_loss_from_logits, combined_loss, distillation_loss,
    distillation_loss_from_logits, mean_entropy, teacher_targets, tempered_softmax, LossWeights,
};
pub use objective::{split_transfer_trainables, transfer_trainables, ModelObjective, Parameterization, Teacher};
pub use train::{gradient_descent, model_level_update, train_direct, DescentSchedule, ModelLevelUpdate};
