//! Learned node scores: graph features of a prefix plus a message-passing
//! scorer trained by regression on score labels.

mod features;
mod gnn;
mod train;

pub use features::{
    featurize, GraphMode, GraphSample, EDGE_FEAT_DIM, GLOBAL_FEAT_DIM, NODE_FEAT_DIM, OBJ_FEAT_DIM,
};
pub use gnn::{sigmoid, Batch, ModelError, Scorer, ScorerConfig};
pub use train::{
    dataset_loss, predict_all, train, write_loss_csv, Adam, Checkpoint, CheckpointError, EpochLoss,
    TrainConfig, TrainError, Trained,
};
