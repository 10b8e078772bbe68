//! Architectures and whole-network forward/backward passes.

mod config;
mod eval;
mod network;

pub use config::{LayerKind, LayerSpec, NetworkConfig, Padding, PRESETS};
pub use eval::evaluate;
pub use network::{
    argmax_rows, init_network, Caches, LayerGeometry, LayerState, Network, WeightSource,
};
