//! EFNet: convolutional encoder to an `M`-element codeword, uniform codeword
//! quantizer, and a decoder built from four channel-attention refine blocks.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod quant;
pub mod tensor;
pub mod train;

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{load_model, load_train_state, save_model, save_train_state};
pub use model::{backward, decoder_forward, encoder_forward, mse_loss, EfnetConfig, EfnetModel};
pub use quant::{dequantize_codeword, quantize_codeword, Codeword, CodewordBits};
pub use tensor::Tensor;
pub use train::{train, TrainOutcome, TrainState, Trainer, TrainingLog};
