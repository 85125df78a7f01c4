//! The restoration network: descriptor-guided transformer blocks arranged in
//! a three-level encoder–decoder.

mod blocks;
mod layers;
mod restore_net;

pub use blocks::{BlockConfig, Ffn, Sdca, Sdtb, SelfAttention};
pub use layers::{ChannelNorm, Conv, ConvSpec, Linear};
pub use restore_net::{param_breakdown, NetConfig, RestoreNet, BLOCK_LEVELS, DESCRIPTOR_DIM};
