//! Rotation-equivariant quaternion neural networks for 3-D point clouds.

pub mod certify;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod head;
pub mod io;
mod kernels;
pub mod layers;
pub mod network;
pub mod quat;
pub mod rotation;
pub mod tensor;

pub use error::{Error, Result};
pub use quat::{qconj, qmul, qnorm, Quaternion};
pub use rotation::{compose, random_rotor, rotate, rotate_tensor, rotor_from_axis_angle, Rotor};
pub use tensor::{QTensor, RTensor};
