//! From-scratch training: masked cross-entropy, manual backpropagation, SGD
//! with cosine annealing, augmentation and synthetic scenes.

pub mod augment;
pub mod grad;
pub mod loss;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use augment::{augment, AugmentPlan};
pub use grad::{backward, forward_train, loss_and_grad, update_running_stats, BnMode, Gradients, Tape};
pub use loss::{cross_entropy_masked, cross_entropy_masked_grad, LossTerms};
pub use optim::{cosine_lr, sgd_step, SgdState};
pub use synth::{synth_scene, SceneGenParams};
pub use trainer::{train_from, train_loop, BestCheckpoint, HistoryRow, TrainConfig, TrainOutcome};
