//! Shared fixtures for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqnn::certify::{random_cloud, random_pure};
use reqnn::geometry::PointCloud;
use reqnn::{QTensor, RTensor};

pub const SEED: u64 = 7;

pub fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED)
}

pub fn cloud(n: usize) -> PointCloud {
    random_cloud(&mut rng(), n)
}

/// Pure-quaternion features of the given shape.
pub fn features(shape: Vec<usize>) -> QTensor {
    random_pure(&mut rng(), shape)
}

/// Deterministic dense `[out, in]` weight with entries in roughly [-0.125, 0.125].
pub fn weight(out: usize, inp: usize) -> RTensor {
    let data = (0..out * inp).map(|i| ((i * 37 % 101) as f64 - 50.0) / 400.0).collect();
    RTensor::new(vec![out, inp], data).expect("weight shape")
}
