//! Toy experiments: rotated-test classification of the equivariant network
//! against its real-valued twin, and feature rotation in the autoencoder.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{synth_dataset, DatasetSpec};
use crate::error::Result;
use crate::geometry::PointCloud;
use crate::network::{accuracy, chamfer_loss, preset, reconstruction_error, train, Network, Scale, TrainConfig, Variant};
use crate::rotation::{rotate_tensor, Rotor};

/// Axis/angle pairs used by the feature-rotation demo.
pub const DEMO_ROTATIONS: [([f64; 3], f64); 4] = [
    ([0.46, 0.68, 0.56], PI / 3.0),
    ([-0.44, -0.61, 0.66], PI / 4.0),
    ([0.34, 0.94, 0.00], PI / 6.0),
    ([0.16, 0.83, 0.53], 2.0 * PI / 3.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationProtocol {
    pub preset: String,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
}

impl ClassificationProtocol {
    /// 3 classes, 300 training and 150 test clouds of 64 points, 60 epochs;
    /// the dataset, initialization and shuffling all derive from `seed`.
    pub fn toy(seed: u64) -> Self {
        Self {
            preset: "micro-pointnet-cls".into(),
            dataset: DatasetSpec {
                seed,
                ..DatasetSpec::default()
            },
            train: TrainConfig {
                epochs: 60,
                seed,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub params: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub rotated_test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub seed: u64,
    pub equivariant: VariantResult,
    pub twin: VariantResult,
    pub elapsed: Duration,
}

/// Trains one variant without rotation augmentation and scores it on the
/// upright and rotated test sets.
pub fn run_variant(protocol: &ClassificationProtocol, variant: Variant) -> Result<(Network, VariantResult)> {
    let data = synth_dataset(&protocol.dataset)?;
    let mut spec = preset(&protocol.preset, Scale::Micro)?;
    spec.seed = protocol.dataset.seed;
    spec.num_points = protocol.dataset.points;
    let mut net = Network::build_variant(spec, variant)?;
    let log = train(&mut net, &data.train, &protocol.train)?;
    let result = VariantResult {
        params: net.num_params(),
        train_loss: log.last().map_or(f64::NAN, |l| l.loss),
        test_accuracy: accuracy(&net, &data.test)?,
        rotated_test_accuracy: accuracy(&net, &data.test_rotated)?,
    };
    Ok((net, result))
}

pub fn toy_classification(protocol: &ClassificationProtocol) -> Result<ClassificationOutcome> {
    let start = Instant::now();
    let (_, equivariant) = run_variant(protocol, Variant::Equivariant)?;
    let (_, twin) = run_variant(protocol, Variant::Twin)?;
    Ok(ClassificationOutcome {
        seed: protocol.dataset.seed,
        equivariant,
        twin,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderProtocol {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    /// Training stops after the first round whose mean Chamfer distance on
    /// the training shapes is at or below this value.
    pub target_chamfer: f64,
    pub max_rounds: usize,
}

impl Default for AutoencoderProtocol {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec {
                train: 12,
                test: 3,
                test_rotations: 0,
                ..DatasetSpec::default()
            },
            train: TrainConfig {
                epochs: 20,
                lr: 5e-3,
                batch_size: 4,
                ..TrainConfig::default()
            },
            target_chamfer: 0.05,
            max_rounds: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderOutcome {
    pub rounds: usize,
    pub epochs: usize,
    pub chamfer: f64,
    pub reached: bool,
}

/// Trains `net` in rounds of `protocol.train.epochs` epochs until the
/// reconstruction target is met or the round budget runs out. Round `i`
/// shuffles with seed `protocol.train.seed + i`.
pub fn train_autoencoder(net: &mut Network, data: &[PointCloud], protocol: &AutoencoderProtocol) -> Result<AutoencoderOutcome> {
    let mut chamfer = reconstruction_error(net, data)?;
    let mut rounds = 0;
    while chamfer > protocol.target_chamfer && rounds < protocol.max_rounds {
        let cfg = TrainConfig {
            seed: protocol.train.seed.wrapping_add(rounds as u64),
            ..protocol.train.clone()
        };
        train(net, data, &cfg)?;
        rounds += 1;
        chamfer = reconstruction_error(net, data)?;
    }
    Ok(AutoencoderOutcome {
        rounds,
        epochs: rounds * protocol.train.epochs,
        chamfer,
        reached: chamfer <= protocol.target_chamfer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRotation {
    /// The input cloud rotated directly.
    pub rotated_input: PointCloud,
    /// Reconstruction of the input, rotated afterwards.
    pub rotated_reconstruction: PointCloud,
    /// Decoded from the rotated bottleneck feature.
    pub synthesized: PointCloud,
    /// Chamfer distance between `synthesized` and `rotated_reconstruction`.
    pub chamfer: f64,
}

/// Rotates the bottleneck feature of `cloud` and decodes it.
pub fn feature_rotation(net: &Network, cloud: &PointCloud, rotor: &Rotor) -> Result<FeatureRotation> {
    let z = net.encode(cloud)?;
    let reconstruction = net.decode(&z)?.into_cloud()?;
    let rotated_reconstruction = PointCloud::from_points(&rotate_tensor(rotor, &reconstruction).to_points());
    let synthesized = PointCloud::from_points(&net.decode(&rotate_tensor(rotor, &z))?.into_cloud()?.to_points());
    let chamfer = chamfer_loss(&synthesized, &rotated_reconstruction)?.0;
    Ok(FeatureRotation {
        rotated_input: cloud.rotated(rotor),
        rotated_reconstruction,
        synthesized,
        chamfer,
    })
}
