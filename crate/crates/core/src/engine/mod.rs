//! Dense-tensor numerical core: layer forward/backward passes, loss,
//! the Adam optimizer and finite-difference gradient verification.

mod gradcheck;
mod ops;
mod params;
mod recurrent;
mod tensor;

pub use gradcheck::{grad_check, grad_check_detailed, relative_error, GradCheckEntry, Objective};
pub use ops::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_forward, dropout_mask,
    maxpool1d_backward, maxpool1d_forward, maxpool1d_indexed, mse_loss, sigmoid, time_dense_backward,
    time_dense_forward, Activation, Mode,
};
pub(crate) use ops::{conv1d_raw, dense_raw};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use recurrent::{
    bidirectional_lstm_forward, bilstm_layer_backward, bilstm_layer_trace, gru_cell_step, gru_layer_backward,
    gru_layer_forward, gru_layer_trace, lstm_cell_forward, lstm_cell_step, lstm_layer_backward, lstm_layer_forward,
    lstm_layer_trace, BiLstmTrace, GruGrads, GruStep, GruTrace, GruWeights, LstmGrads, LstmStep, LstmTrace,
    LstmWeights,
};
pub use tensor::Tensor;
