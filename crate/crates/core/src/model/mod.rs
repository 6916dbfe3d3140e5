//! The residual bottleneck mixing network: configuration, parameters,
//! forward/backward passes and parameter files.

mod config;
mod network;
mod params;

pub use config::{count_parameters, Ablation, Activation, ModelConfig};
pub use network::{backward, forward, forward_batch, ForwardTrace};
pub use params::{
    decode_parameters, encode_parameters, init_parameters, load_parameters, save_parameters,
    BlockSlots, LinearSlots, NormSlots, ParamLayout, ParameterSet, Slot,
};
