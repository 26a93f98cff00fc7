//! The semantic-relevance seq2seq network and its parameters.

pub mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod network;
mod params;

pub use config::ModelConfig;
pub use gradcheck::{check_gradients, check_model_gradients, gradcheck_batch, gradcheck_config, GRADCHECK_INIT_SCALE};
pub use loss::{batch_loss, forward_batch, mean_cosine_value, nll_loss, srb_loss, BatchForward, LossParts};
pub use network::{
    attend, decode_step, encode, encode_single, init_decoder, lstm_step, self_gate, semantic_vectors, DecoderState,
    Dropout, EncoderOutput, GateOutput, StepOutput,
};
pub use params::{GateVars, LstmVars, ModelParams, ParamVars, FORGET_BIAS, INIT_SCALE};
