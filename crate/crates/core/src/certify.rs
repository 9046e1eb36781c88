//! Numerical certificates for equivariance, invariance and gradient
//! correctness.
//!
//! Every trial draws its inputs from its own seed, derived from the report
//! seed and the trial index. Trials run in parallel and are merged in trial
//! order, so a report is reproducible from its seed alone.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::geometry::{
    self, BallQuery, FpsSeed, PointCloud, Vec3, WeightNet,
};
use crate::layers::{self, ReluMode};
use crate::network::{Network, NetworkOutput, Variant};
use crate::quat::Quaternion;
use crate::rotation::{random_rotor, rotate_tensor};
use crate::tensor::{QTensor, RTensor};

pub const LAYER_TOL: f64 = 1e-11;
pub const NETWORK_TOL: f64 = 1e-9;
pub const PERMUTATION_TOL: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-4;
/// Norm gap below which a norm-argmax input counts as tied and is redrawn.
pub const TIE_GAP: f64 = 1e-9;
const MAX_REDRAWS: usize = 1000;
const MAX_LISTED_FAILURES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub input_digest: String,
    pub error: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub subject: String,
    pub property: String,
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub ties_resampled: usize,
    pub failure_count: usize,
    /// The first failing trials, in trial order.
    pub failures: Vec<Failure>,
    pub verdict: Verdict,
}

impl CertReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {} [{}]: {} trials, max error {:.3e} (tol {:.0e}), {} failures, {} ties resampled",
            self.subject,
            self.property,
            if self.passed() { "pass" } else { "FAIL" },
            self.trials,
            self.max_relative_error,
            self.tolerance,
            self.failure_count,
            self.ties_resampled
        )
    }
}

struct Outcome {
    error: f64,
    digest: String,
    ties: usize,
    detail: Option<String>,
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn cloud_digest(c: &PointCloud) -> String {
    digest(&c.points().to_le_bytes())
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    let mut z = seed ^ (trial as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_trials(
    subject: &str,
    property: &str,
    trials: usize,
    tol: f64,
    seed: u64,
    trial: impl Fn(&mut ChaCha8Rng) -> Outcome + Sync,
) -> CertReport {
    let outcomes: Vec<(u64, Outcome)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            (s, trial(&mut ChaCha8Rng::seed_from_u64(s)))
        })
        .collect();
    let mut report = CertReport {
        subject: subject.to_string(),
        property: property.to_string(),
        seed,
        trials,
        tolerance: tol,
        max_relative_error: 0.0,
        ties_resampled: 0,
        failure_count: 0,
        failures: Vec::new(),
        verdict: Verdict::Pass,
    };
    for (s, o) in outcomes {
        report.ties_resampled += o.ties;
        if o.error.is_nan() || o.error > report.max_relative_error {
            report.max_relative_error = if o.error.is_nan() { f64::INFINITY } else { o.error };
        }
        if !(o.error <= tol) {
            report.failure_count += 1;
            if report.failures.len() < MAX_LISTED_FAILURES {
                report.failures.push(Failure {
                    seed: s,
                    input_digest: o.digest,
                    error: o.error,
                    detail: o.detail,
                });
            }
        }
    }
    if report.failure_count > 0 {
        report.verdict = Verdict::Fail;
    }
    report
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

fn output_values(o: &NetworkOutput) -> Vec<f64> {
    match o {
        NetworkOutput::Logits(t) => t.data().to_vec(),
        NetworkOutput::Cloud(q) => q.channels().concat(),
    }
}

pub fn random_pure(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> QTensor {
    let n: usize = shape.iter().product();
    let items: Vec<Quaternion> = (0..n)
        .map(|_| Quaternion::pure(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    QTensor::from_quaternions(shape, &items).expect("sized")
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts: Vec<Vec3> = (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    PointCloud::from_points(&pts)
}

// --------------------------------------------------------------------------
// Layers
// --------------------------------------------------------------------------

/// A single layer under test together with its input shape.
#[derive(Debug, Clone)]
pub struct LayerCase {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub op: LayerOp,
}

#[derive(Debug, Clone)]
pub enum LayerOp {
    Identity,
    Conv { weight: RTensor },
    /// Convolution followed by a per-channel quaternion bias.
    BiasedConv { weight: RTensor, bias: Vec<Quaternion> },
    Relu { mode: ReluMode },
    /// Standard ReLU applied to each component.
    ComponentwiseRelu,
    BatchNorm { epsilon: f64 },
    MaxPool,
    MaxPoolElementwise,
    Dropout { keep: Vec<bool>, p: f64 },
    /// Input `[K, 1 + d]`: column 0 holds the neighborhood points, the rest
    /// are features weighted by the network evaluated on PCA-frame coordinates.
    CoordsWeighting { net: WeightNet },
    /// Input `[n, 1 + d]`: column 0 holds the points, the rest are features
    /// scaled by inverse kernel density.
    DensityScale { bandwidth: f64 },
}

impl LayerCase {
    pub fn apply(&self, f: &QTensor) -> Result<QTensor> {
        match &self.op {
            LayerOp::Identity => Ok(f.clone()),
            LayerOp::Conv { weight } => layers::qconv(weight, f),
            LayerOp::BiasedConv { weight, bias } => {
                let out = layers::qconv(weight, f)?;
                let d = bias.len();
                let mut biased = out.clone();
                for i in 0..out.len() {
                    biased.set(i, out.get(i) + bias[i % d]);
                }
                Ok(biased)
            }
            LayerOp::Relu { mode } => layers::qrelu(f, *mode),
            LayerOp::ComponentwiseRelu => Ok(f.map(|q| Quaternion::new(q.w.max(0.0), q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)))),
            LayerOp::BatchNorm { epsilon } => Ok(layers::qbatchnorm_rows(f, *epsilon)?.0),
            LayerOp::MaxPool => Ok(QTensor::from_vec(&[layers::qmaxpool(f)?])),
            LayerOp::MaxPoolElementwise => layers::qmaxpool_elementwise(f),
            LayerOp::Dropout { keep, p } => layers::qdropout_with_mask(f, keep, *p, true),
            LayerOp::CoordsWeighting { net } => {
                let (points, features) = split_points(f)?;
                let (_, lrf) = geometry::pca_lrf(&points.coords())?;
                geometry::coords_weighting(&lrf, net, &features)
            }
            LayerOp::DensityScale { bandwidth } => {
                let (points, features) = split_points(f)?;
                geometry::density_scale(&points, &features, *bandwidth)
            }
        }
    }

    /// Smallest norm gap that decides a norm-argmax selection.
    fn tie_gap(&self, f: &QTensor) -> f64 {
        match self.op {
            LayerOp::MaxPool => {
                let flat = f.clone().reshape(vec![f.len()]).expect("flat");
                layers::pool_axis_norm_gap(&flat, 0)
            }
            LayerOp::MaxPoolElementwise => layers::pool_axis_norm_gap(f, 1),
            _ => f64::INFINITY,
        }
    }
}

fn split_points(f: &QTensor) -> Result<(PointCloud, QTensor)> {
    let s = f.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(invalid("split_points", format!("expected [K, 1 + d], got {s:?}")));
    }
    let (k, c) = (s[0], s[1]);
    let pts: Vec<Vec3> = (0..k).map(|r| f.get(r * c).imag()).collect();
    let feats: Vec<Quaternion> = (0..k).flat_map(|r| (1..c).map(move |v| (r, v))).map(|(r, v)| f.get(r * c + v)).collect();
    Ok((PointCloud::from_points(&pts), QTensor::from_quaternions(vec![k, c - 1], &feats)?))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RTensor {
    let s = (1.0 / cols as f64).sqrt();
    RTensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-s..s)).collect()).expect("sized")
}

/// The revised layers, each with random parameters drawn from `seed`.
pub fn standard_layer_suite(seed: u64) -> Vec<LayerCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = |name: &str, shape: Vec<usize>, op: LayerOp| LayerCase {
        name: name.to_string(),
        input_shape: shape,
        op,
    };
    let conv_w = uniform_matrix(&mut rng, 6, 5);
    let p = 0.3;
    let keep = layers::dropout_mask(8 * 5, p, &mut rng).expect("valid p");
    let net = WeightNet::random(&mut rng);
    vec![
        case("qconv", vec![8, 5], LayerOp::Conv { weight: conv_w }),
        case("qrelu(constant)", vec![8, 5], LayerOp::Relu { mode: ReluMode::Constant { c: 0.8 } }),
        case("qrelu(batch_mean)", vec![8, 5], LayerOp::Relu { mode: ReluMode::BatchMean }),
        case("qbatchnorm", vec![8, 5], LayerOp::BatchNorm { epsilon: 1e-5 }),
        case("qmaxpool", vec![8, 5], LayerOp::MaxPool),
        case("qmaxpool_elementwise", vec![6, 8], LayerOp::MaxPoolElementwise),
        case("qdropout(fixed mask)", vec![8, 5], LayerOp::Dropout { keep, p }),
        case("coords_weighting", vec![12, 4], LayerOp::CoordsWeighting { net }),
        case("density_scale", vec![16, 4], LayerOp::DensityScale { bandwidth: 0.5 }),
    ]
}

/// Convolution with its bias restored.
pub fn biased_conv_case(seed: u64) -> LayerCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = uniform_matrix(&mut rng, 6, 5);
    let bias = (0..6)
        .map(|_| Quaternion::pure(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
        .collect();
    LayerCase {
        name: "qconv+bias".into(),
        input_shape: vec![8, 5],
        op: LayerOp::BiasedConv { weight, bias },
    }
}

pub fn componentwise_relu_case() -> LayerCase {
    LayerCase {
        name: "componentwise relu".into(),
        input_shape: vec![8, 5],
        op: LayerOp::ComponentwiseRelu,
    }
}

/// Compares `Φ(R f R̄)` with `R Φ(f) R̄`. Norm-argmax inputs with a norm gap
/// below [`TIE_GAP`] and degenerate local frames are redrawn and counted.
pub fn certify_layer_equivariance(case: &LayerCase, trials: usize, tol: f64, seed: u64) -> CertReport {
    run_trials(&case.name, "layer rotation equivariance", trials, tol, seed, |rng| {
        let mut ties = 0;
        loop {
            let f = random_pure(rng, case.input_shape.clone());
            let digest = digest(&f.to_le_bytes());
            if case.tie_gap(&f) < TIE_GAP && ties < MAX_REDRAWS {
                ties += 1;
                continue;
            }
            let base = match case.apply(&f) {
                Err(Error::DegenerateFrame { .. }) if ties < MAX_REDRAWS => {
                    ties += 1;
                    continue;
                }
                other => other,
            };
            let r = random_rotor(rng);
            let rotated_in = case.apply(&rotate_tensor(&r, &f));
            let error = match (base, rotated_in) {
                (Ok(b), Ok(lhs)) => lhs.max_relative_error(&rotate_tensor(&r, &b)).unwrap_or(f64::INFINITY),
                _ => f64::INFINITY,
            };
            return Outcome {
                error,
                digest,
                ties,
                detail: None,
            };
        }
    })
}

// --------------------------------------------------------------------------
// Networks
// --------------------------------------------------------------------------

fn require_quaternion_module(net: &Network) -> Result<()> {
    if net.variant() == Variant::Twin || net.spec().bridge_index() == Some(0) {
        return Err(invalid("certify_network_equivariance", format!("{} has no quaternion module", net.spec().name)));
    }
    Ok(())
}

/// End-to-end equivariance at the bridge input, or at the output of a fully
/// quaternion network.
pub fn certify_network_equivariance(net: &Network, trials: usize, tol: f64, seed: u64) -> Result<CertReport> {
    require_quaternion_module(net)?;
    let n = net.spec().num_points;
    Ok(run_trials(&net.spec().name, "network rotation equivariance", trials, tol, seed, |rng| {
        let cloud = random_cloud(rng, n);
        let r = random_rotor(rng);
        let error = match (net.quaternion_features(&cloud.rotated(&r)), net.quaternion_features(&cloud)) {
            (Ok(lhs), Ok(rhs)) => lhs.max_relative_error(&rotate_tensor(&r, &rhs)).unwrap_or(f64::INFINITY),
            _ => f64::INFINITY,
        };
        Outcome {
            error,
            digest: cloud_digest(&cloud),
            ties: 0,
            detail: None,
        }
    }))
}

/// Logits under rotated input against logits of the original input.
pub fn certify_output_invariance(net: &Network, trials: usize, tol: f64, seed: u64) -> Result<CertReport> {
    if net.spec().bridge_index().is_none() {
        return Err(invalid("certify_output_invariance", format!("{} has no bridge", net.spec().name)));
    }
    let n = net.spec().num_points;
    Ok(run_trials(&net.spec().name, "output rotation invariance", trials, tol, seed, |rng| {
        let cloud = random_cloud(rng, n);
        let r = random_rotor(rng);
        let error = match (net.forward(&cloud.rotated(&r)), net.forward(&cloud)) {
            (Ok(a), Ok(b)) => rel_error(&output_values(&a), &output_values(&b)),
            _ => f64::INFINITY,
        };
        Outcome {
            error,
            digest: cloud_digest(&cloud),
            ties: 0,
            detail: None,
        }
    }))
}

fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Network outputs under a random reordering of the input points.
pub fn certify_network_permutation(net: &Network, trials: usize, tol: f64, seed: u64) -> CertReport {
    let n = net.spec().num_points;
    run_trials(&net.spec().name, "permutation invariance", trials, tol, seed, |rng| {
        let cloud = random_cloud(rng, n);
        let perm = random_permutation(rng, n);
        let error = match (net.forward(&cloud.permuted(&perm)), net.forward(&cloud)) {
            (Ok(a), Ok(b)) => rel_error(&output_values(&a), &output_values(&b)),
            _ => f64::INFINITY,
        };
        Outcome {
            error,
            digest: cloud_digest(&cloud),
            ties: 0,
            detail: None,
        }
    })
}

/// Point-set operations whose coordinate output must not depend on the input
/// order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GeometryOp {
    Fps { m: usize, seed: FpsSeed },
    /// Ball query around centroid-FPS centers.
    BallQuery { m: usize, radius: f64, k: usize, rule: BallQuery },
    /// k-NN grouping around centroid-FPS centers.
    Knn { m: usize, k: usize },
    KnnGraph { k: usize },
}

impl GeometryOp {
    pub fn name(&self) -> String {
        match self {
            GeometryOp::Fps { seed: FpsSeed::FirstPoint, .. } => "first_point_fps".into(),
            GeometryOp::Fps { .. } => "centroid_fps".into(),
            GeometryOp::BallQuery { rule: BallQuery::Classic, .. } => "group_ball_knn(classic)".into(),
            GeometryOp::BallQuery { .. } => "group_ball_knn".into(),
            GeometryOp::Knn { .. } => "group_knn".into(),
            GeometryOp::KnnGraph { .. } => "knn_graph".into(),
        }
    }

    /// Coordinate structure: selected points in order, each group's sorted
    /// member coordinates, or the sorted edge set.
    pub fn structure(&self, cloud: &PointCloud) -> Result<Vec<Vec<Vec3>>> {
        let centers = |m| geometry::centroid_fps(cloud, m);
        Ok(match *self {
            GeometryOp::Fps { m, seed } => vec![geometry::farthest_point_sampling(cloud, m, seed)?.coords(cloud)],
            GeometryOp::BallQuery { m, radius, k, rule } => {
                geometry::group_ball_knn(cloud, &centers(m)?, radius, k, rule)?.coordinate_multisets(cloud)
            }
            GeometryOp::Knn { m, k } => geometry::group_knn(cloud, &centers(m)?, k)?.coordinate_multisets(cloud),
            GeometryOp::KnnGraph { k } => geometry::knn_graph(cloud, k)?
                .coordinate_edges(cloud)
                .into_iter()
                .map(|(a, b)| vec![a, b])
                .collect(),
        })
    }
}

/// Exact comparison: a trial's error is 0 when the structures are identical
/// and 1 otherwise.
pub fn certify_geometry_permutation(op: GeometryOp, points: usize, trials: usize, seed: u64) -> CertReport {
    run_trials(&op.name(), "permutation invariance", trials, 0.0, seed, |rng| {
        let cloud = random_cloud(rng, points);
        let perm = random_permutation(rng, points);
        let same = match (op.structure(&cloud), op.structure(&cloud.permuted(&perm))) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        Outcome {
            error: if same { 0.0 } else { 1.0 },
            digest: cloud_digest(&cloud),
            ties: 0,
            detail: None,
        }
    })
}

// --------------------------------------------------------------------------
// Gradients
// --------------------------------------------------------------------------

/// Which parameters a gradient check covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradScope {
    #[default]
    All,
    /// Parameters after the bridge.
    Head,
}

/// Central differences for every covered parameter against the tape's
/// gradients of a random linear probe `L = Σ r_i y_i` of the output. Each
/// parameter is one trial with error `|g_a − g_n| / (|g_a| + |g_n| + 1e-12)`.
pub fn gradcheck(net: &Network, h: f64, tol: f64, seed: u64, scope: GradScope) -> Result<CertReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, net.spec().num_points);
    let base = net.forward(&cloud)?;
    let probe: Vec<f64> = (0..output_values(&base).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let probe_out = match &base {
        NetworkOutput::Logits(_) => NetworkOutput::Logits(RTensor::from_vec(probe.clone())),
        NetworkOutput::Cloud(q) => {
            let n = q.len();
            let ch = [0, 1, 2, 3].map(|c| probe[c * n..(c + 1) * n].to_vec());
            NetworkOutput::Cloud(QTensor::from_channels(q.shape().to_vec(), ch)?)
        }
    };
    let mut analytic = net.clone();
    analytic.zero_grads();
    analytic.forward_train(&cloud, None)?;
    analytic.backward(&probe_out)?;

    let indices: Vec<usize> = match scope {
        GradScope::All => (0..net.params().len()).collect(),
        GradScope::Head => net.head_param_indices(),
    };
    let coords: Vec<(usize, usize)> = indices
        .iter()
        .flat_map(|&p| (0..net.params()[p].value.len()).map(move |e| (p, e)))
        .collect();
    let loss = |n: &Network| -> f64 {
        n.forward(&cloud)
            .map(|o| output_values(&o).iter().zip(&probe).map(|(a, b)| a * b).sum())
            .unwrap_or(f64::NAN)
    };
    let digest = cloud_digest(&cloud);
    let results: Vec<(f64, String)> = coords
        .par_iter()
        .map(|&(p, e)| {
            let mut probe_net = net.clone();
            let orig = probe_net.params()[p].value.data()[e];
            probe_net.params_mut()[p].value.data_mut()[e] = orig + h;
            let up = loss(&probe_net);
            probe_net.params_mut()[p].value.data_mut()[e] = orig - h;
            let down = loss(&probe_net);
            let numeric = (up - down) / (2.0 * h);
            let ga = analytic.grads()[p].data()[e];
            let err = (ga - numeric).abs() / (ga.abs() + numeric.abs() + 1e-12);
            (err, format!("{}[{e}]: analytic {ga:.6e}, numeric {numeric:.6e}", net.params()[p].name))
        })
        .collect();

    let mut report = CertReport {
        subject: net.spec().name.clone(),
        property: match scope {
            GradScope::All => "gradient check".into(),
            GradScope::Head => "gradient check (head)".into(),
        },
        seed,
        trials: results.len(),
        tolerance: tol,
        max_relative_error: 0.0,
        ties_resampled: 0,
        failure_count: 0,
        failures: Vec::new(),
        verdict: Verdict::Pass,
    };
    for (err, detail) in results {
        let err = if err.is_nan() { f64::INFINITY } else { err };
        report.max_relative_error = report.max_relative_error.max(err);
        if !(err <= tol) {
            report.failure_count += 1;
            if report.failures.len() < MAX_LISTED_FAILURES {
                report.failures.push(Failure {
                    seed,
                    input_digest: digest.clone(),
                    error: err,
                    detail: Some(detail),
                });
            }
        }
    }
    if report.failure_count > 0 {
        report.verdict = Verdict::Fail;
    }
    Ok(report)
}
