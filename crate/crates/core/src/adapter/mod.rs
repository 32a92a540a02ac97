//! Feature adapter: a small perceptron refining frozen fused features, its losses and
//! its trainer.

mod loss;
mod net;
mod train;

pub use loss::{dense_loss, info_nce, sample_noise, sparse_contrastive_loss, window_soft_argmax, DenseLossConfig, LossGrad};
pub use net::{AdapterNet, ForwardCache, LAYERS};
pub use train::{one_cycle_lr, refine_map, train, write_trace, TraceRow, TrainConfig, TrainLabel, TrainOutcome, TrainPair};
