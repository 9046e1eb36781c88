//! Declarative networks: specs, presets, execution with a gradient tape,
//! training, checkpoints and complexity counts.

pub mod checkpoint;
mod complexity;
mod engine;
mod spec;
mod train;

pub use checkpoint::{decode_params, encode_params, load_checkpoint, save_checkpoint};
pub use complexity::{count_complexity, ComplexityComparison, ComplexityReport};
pub use engine::{Fault, Network, NetworkOutput, Param, SampleGradient, Target};
pub use spec::{
    preset, BridgeKind, Centers, Domain, LayerShape, LayerSpec, Neighborhood, NetworkSpec, ReluKind, Scale, Variant,
    PRESETS,
};
pub use train::{accuracy, chamfer_loss, predict, reconstruction_error, train, EpochLog, TrainConfig};
