//! Flow-map learning: residual MLPs that advance the state by one
//! parameter segment, trained with Adam and corrected by partial retraining.

mod archive;
mod net;
mod train;

pub use archive::{parse_meta, read_archive, write_archive, NetContext, NetMeta};
pub use net::{FlowMapNet, Layer, MlpArchitecture, Normalization};
pub use train::{
    fml_predict, fml_predict_bounded, grad_check, train, train_reported, transfer_correct,
    transfer_correct_reported, GradCheck, LrSchedule, TrainConfig, TrainReport, DIVERGENCE_BOUND,
    FULL_BATCH_BELOW, GRAD_CHECK_FLOOR,
};

#[cfg(test)]
mod tests;
