//! Dense tensors with reverse-mode gradients, transformer blocks and AdamW.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{DecoderBlock, EncoderBlock, FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use optim::AdamW;
pub use params::{Init, ParamId, ParameterStore};
pub use tape::{Gradients, Matrix, Tape, Var};
