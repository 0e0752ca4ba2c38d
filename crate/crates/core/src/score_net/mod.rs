//! Small residual MLP predicting the noise `eps` from `(chi_t, gamma, labels)`
//! and its training loop.

mod net;
mod train;

pub use net::{NetConfig, ScoreNet, NET_MAGIC, NET_VERSION};
pub use train::{
    dsm_loss, dsm_loss_and_grad, train, weighted_score_loss, Adam, DataSource, Ema, LogRow, ParamRange, TrainConfig,
    TrainOutput,
};
