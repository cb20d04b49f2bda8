//! Training objective, gradients, AdamW and the one-cycle schedule.

pub mod grad;
pub mod loss;
pub mod optim;
pub mod schedule;

pub use grad::{batch_gradients, PreparedSample};
pub use loss::{dice_loss, focal_loss, total_loss, total_loss_grad, LossConfig};
pub use optim::{AdamW, OptimizerConfig};
pub use schedule::onecycle_lr;
