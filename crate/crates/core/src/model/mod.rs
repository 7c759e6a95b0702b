//! The recommendation model and its gradients.

mod attention;
pub mod checkpoint;
mod loss;
mod news;
mod params;
mod tape;
mod user;

pub use attention::{decompose_attention, draw_pad_mask, pad_behaviors, reconstruct_user};
pub use loss::score_and_loss;
pub use news::{anonymous_embedding, encode_news};
pub use params::{
    BasisTable, ModelDims, ModelParams, NewsEncoderParams, UserEncoderParams, BLOCK_NAMES,
};
pub use tape::{backward, backward_flat, forward, ForwardNoise, Sample, Tape, UserPath};
pub use user::encode_user;
