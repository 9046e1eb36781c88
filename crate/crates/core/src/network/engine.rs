use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{BridgeKind, Centers, Domain, LayerShape, LayerSpec, Neighborhood, NetworkSpec, Variant};
use crate::error::{invalid, Error, Result};
use crate::geometry::{self, PointCloud, Vec3};
use crate::kernels;
use crate::layers;
use crate::tensor::{QTensor, RTensor};

/// Features as one real plane per component: four for quaternion features,
/// one for real features. Shape is shared by all planes.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Feat {
    pub shape: Vec<usize>,
    pub planes: Vec<Vec<f64>>,
}

impl Feat {
    pub fn from_q(t: QTensor) -> Self {
        let (shape, ch) = t.into_channels();
        Self {
            shape,
            planes: ch.into(),
        }
    }

    pub fn from_r(t: RTensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            planes: vec![t.into_data()],
        }
    }

    pub fn to_q(&self) -> QTensor {
        let ch: [Vec<f64>; 4] = self.planes.clone().try_into().expect("quaternion features");
        QTensor::from_channels(self.shape.clone(), ch).expect("consistent planes")
    }

    pub fn to_r(&self) -> RTensor {
        RTensor::new(self.shape.clone(), self.planes[0].clone()).expect("consistent plane")
    }

    pub fn is_quaternion(&self) -> bool {
        self.planes.len() == 4
    }

    pub fn channels(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.planes[0].len()
    }

    pub fn rows(&self) -> usize {
        self.len() / self.channels().max(1)
    }

    fn with_planes(shape: Vec<usize>, planes: Vec<Vec<f64>>) -> Self {
        Self { shape, planes }
    }

    fn map_planes(&self, shape: Vec<usize>, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            shape,
            planes: self.planes.iter().map(|p| f(p)).collect(),
        }
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkOutput {
    Logits(RTensor),
    /// Flat tensor of quaternion outputs; a point cloud for autoencoders.
    Cloud(QTensor),
}

impl NetworkOutput {
    pub fn logits(&self) -> Option<&[f64]> {
        match self {
            NetworkOutput::Logits(t) => Some(t.data()),
            NetworkOutput::Cloud(_) => None,
        }
    }

    pub fn cloud(&self) -> Option<&QTensor> {
        match self {
            NetworkOutput::Cloud(t) => Some(t),
            NetworkOutput::Logits(_) => None,
        }
    }

    pub fn into_cloud(self) -> Result<QTensor> {
        match self {
            NetworkOutput::Cloud(t) => Ok(t),
            NetworkOutput::Logits(_) => Err(invalid("NetworkOutput::into_cloud", "network outputs logits")),
        }
    }

    fn into_feat(self) -> Feat {
        match self {
            NetworkOutput::Logits(t) => Feat::from_r(t),
            NetworkOutput::Cloud(t) => Feat::from_q(t),
        }
    }
}

/// Deliberate defects used to show that gradient checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// The revised ReLU passes gradients through unchanged.
    ReluBackwardIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: RTensor,
}

#[derive(Debug, Clone, Copy, Default)]
struct Slots {
    /// Weight, or batch-norm scale.
    a: Option<usize>,
    /// Bias, or batch-norm shift.
    b: Option<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct State {
    coords: Vec<Vec3>,
    feat: Feat,
}

#[derive(Debug, Clone)]
enum Cache {
    Identity,
    Input(Feat),
    QBatchNorm { input: QTensor, inv_sigma: Vec<f64> },
    TwinBatchNorm { xhat: Vec<f64>, inv_std: Vec<f64> },
    Dropout { keep: Vec<bool>, scale: f64 },
    Gather { index: Vec<usize>, rows: usize, channels: usize, extra: usize },
    Edge { neighbors: Vec<Vec<usize>> },
    Pool { input_shape: Vec<usize>, winners: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Tape {
    range: Range<usize>,
    caches: Vec<Cache>,
}

/// An instantiated network: spec, parameters, gradients and the tape of the
/// last training forward pass.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    variant: Variant,
    shapes: Vec<LayerShape>,
    params: Vec<Param>,
    grads: Vec<RTensor>,
    slots: Vec<Slots>,
    tape: Option<Tape>,
    fault: Option<Fault>,
}

/// Loss target for one sample.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Label(usize),
    Cloud(&'a PointCloud),
}

/// Loss, parameter gradients and correctness for one sample.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: Vec<RTensor>,
    pub correct: Option<bool>,
}

impl Network {
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        Self::build_variant(spec, Variant::Equivariant)
    }

    /// Builds the equivariant network or its real-valued twin. Parameters are
    /// drawn from `uniform(−s, s)`, `s = sqrt(1 / fan_in)`, seeded by the spec.
    pub fn build_variant(spec: NetworkSpec, variant: Variant) -> Result<Self> {
        let shapes = spec.shapes(variant)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(spec.layers.len());
        let twin = variant == Variant::Twin;
        for (i, layer) in spec.layers.iter().enumerate() {
            let c_in = shapes[i].channels;
            let mut uniform = |name: String, shape: Vec<usize>, fan_in: usize| {
                let s = (1.0 / fan_in.max(1) as f64).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-s..s)).collect();
                params.push(Param {
                    name,
                    value: RTensor::new(shape, data).expect("sized"),
                });
                params.len() - 1
            };
            let slot = match *layer {
                LayerSpec::Conv { out_channels, bias } => {
                    let a = uniform(format!("layer{i}.weight"), vec![out_channels, c_in], c_in);
                    let b = match (twin, bias) {
                        (true, _) if !spec.twin_conv_bias(i) => None,
                        (true, _) => Some(uniform(format!("layer{i}.bias"), vec![1, out_channels], c_in)),
                        (false, true) => Some(uniform(format!("layer{i}.bias"), vec![4, out_channels], c_in)),
                        (false, false) => None,
                    };
                    Slots { a: Some(a), b }
                }
                LayerSpec::Linear { out_features } => {
                    let a = uniform(format!("layer{i}.weight"), vec![out_features, c_in], c_in);
                    let b = uniform(format!("layer{i}.bias"), vec![1, out_features], c_in);
                    Slots { a: Some(a), b: Some(b) }
                }
                LayerSpec::BatchNorm { .. } if twin => {
                    params.push(Param {
                        name: format!("layer{i}.scale"),
                        value: RTensor::new(vec![c_in], vec![1.0; c_in]).expect("sized"),
                    });
                    params.push(Param {
                        name: format!("layer{i}.shift"),
                        value: RTensor::zeros(vec![c_in]),
                    });
                    Slots {
                        a: Some(params.len() - 2),
                        b: Some(params.len() - 1),
                    }
                }
                _ => Slots::default(),
            };
            slots.push(slot);
        }
        let grads = params.iter().map(|p| RTensor::zeros(p.value.shape().to_vec())).collect();
        Ok(Self {
            spec,
            variant,
            shapes,
            params,
            grads,
            slots,
            tape: None,
            fault: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Shape after each layer; entry 0 is the input.
    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn grads(&self) -> &[RTensor] {
        &self.grads
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Indices of parameters belonging to layers after the bridge.
    pub fn head_param_indices(&self) -> Vec<usize> {
        let start = self.spec.bridge_index().unwrap_or(self.spec.layers.len());
        self.slots[start..]
            .iter()
            .flat_map(|s| s.a.into_iter().chain(s.b))
            .collect()
    }

    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    fn input_state(&self, cloud: &PointCloud) -> Result<State> {
        if cloud.len() != self.spec.num_points {
            return Err(Error::ShapeMismatch {
                op: "Network::forward",
                left: vec![self.spec.num_points],
                right: vec![cloud.len()],
            });
        }
        let n = cloud.len();
        let feat = match self.variant {
            Variant::Equivariant => Feat::from_q(cloud.points().clone().reshape(vec![n, 1])?),
            Variant::Twin => Feat::with_planes(vec![n, 3], vec![cloud.coords().concat()]),
        };
        Ok(State {
            coords: cloud.coords(),
            feat,
        })
    }

    fn output(feat: Feat) -> NetworkOutput {
        let n = feat.len();
        if feat.is_quaternion() {
            NetworkOutput::Cloud(feat.to_q().reshape(vec![n]).expect("flat"))
        } else {
            NetworkOutput::Logits(feat.to_r().reshape(vec![n]).expect("flat"))
        }
    }

    /// Inference pass; dropout is inactive and no tape is recorded.
    pub fn forward(&self, cloud: &PointCloud) -> Result<NetworkOutput> {
        let state = self.input_state(cloud)?;
        let (state, _) = self.run(state, 0..self.spec.layers.len(), false, None)?;
        Ok(Self::output(state.feat))
    }

    /// Training pass that records the tape consumed by [`Network::backward`].
    pub fn forward_train(&mut self, cloud: &PointCloud, rng: Option<&mut ChaCha8Rng>) -> Result<NetworkOutput> {
        self.tape = None;
        let state = self.input_state(cloud)?;
        let range = 0..self.spec.layers.len();
        let (state, caches) = self.run(state, range.clone(), true, rng)?;
        self.tape = Some(Tape { range, caches });
        Ok(Self::output(state.feat))
    }

    /// Accumulates parameter gradients for `grad_output` (same shape as the
    /// forward output) and clears the tape.
    pub fn backward(&mut self, grad_output: &NetworkOutput) -> Result<()> {
        let tape = self
            .tape
            .take()
            .ok_or(Error::Tape("backward requires a preceding forward_train"))?;
        let mut grads = std::mem::take(&mut self.grads);
        let result = self.run_backward(&tape, grad_output.clone().into_feat(), &mut grads);
        self.grads = grads;
        result.map(|_| ())
    }

    /// Quaternion features entering the bridge, or the final output of a
    /// fully quaternion network. Shape `[rows..., channels]`.
    pub fn quaternion_features(&self, cloud: &PointCloud) -> Result<QTensor> {
        if self.variant == Variant::Twin {
            return Err(invalid("quaternion_features", "the twin has no quaternion module"));
        }
        let end = self.spec.bridge_index().unwrap_or(self.spec.layers.len());
        let state = self.input_state(cloud)?;
        let (state, _) = self.run(state, 0..end, false, None)?;
        Ok(state.feat.to_q())
    }

    /// Bottleneck feature `z` of an autoencoder.
    pub fn encode(&self, cloud: &PointCloud) -> Result<QTensor> {
        let b = self.bottleneck()?;
        let state = self.input_state(cloud)?;
        let (state, _) = self.run(state, 0..b + 1, false, None)?;
        Ok(state.feat.to_q())
    }

    /// Runs the layers after the bottleneck on `z`.
    pub fn decode(&self, z: &QTensor) -> Result<NetworkOutput> {
        let b = self.bottleneck()?;
        let expected = &self.shapes[b + 1];
        let mut shape = expected.dims.clone();
        shape.push(expected.channels);
        if z.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "Network::decode",
                left: shape,
                right: z.shape().to_vec(),
            });
        }
        let state = State {
            coords: vec![[0.0; 3]; expected.points],
            feat: Feat::from_q(z.clone()),
        };
        let (state, _) = self.run(state, b + 1..self.spec.layers.len(), false, None)?;
        Ok(Self::output(state.feat))
    }

    fn bottleneck(&self) -> Result<usize> {
        if self.variant == Variant::Twin {
            return Err(invalid("bottleneck", "the twin has no quaternion bottleneck"));
        }
        self.spec
            .bottleneck
            .ok_or_else(|| invalid("bottleneck", format!("network {:?} declares no bottleneck", self.spec.name)))
    }

    /// Loss and gradients of one sample without touching the network's own
    /// tape or gradient buffers. Safe to call from parallel workers.
    pub fn sample_gradient(&self, cloud: &PointCloud, target: Target<'_>, rng: Option<&mut ChaCha8Rng>) -> Result<SampleGradient> {
        let state = self.input_state(cloud)?;
        let range = 0..self.spec.layers.len();
        let (state, caches) = self.run(state, range.clone(), true, rng)?;
        let out = Self::output(state.feat);
        let (loss, grad_out, correct) = loss_and_grad(&out, target)?;
        let mut grads: Vec<RTensor> = self.params.iter().map(|p| RTensor::zeros(p.value.shape().to_vec())).collect();
        self.run_backward(&Tape { range, caches }, grad_out.into_feat(), &mut grads)?;
        Ok(SampleGradient { loss, grads, correct })
    }

    fn cloud_of(coords: &[Vec3]) -> PointCloud {
        PointCloud::from_points(coords)
    }

    fn param(&self, slot: Option<usize>) -> Option<&RTensor> {
        slot.map(|i| &self.params[i].value)
    }

    fn run(&self, mut state: State, range: Range<usize>, record: bool, mut rng: Option<&mut ChaCha8Rng>) -> Result<(State, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(if record { range.len() } else { 0 });
        for i in range {
            let (next, cache) = self.apply(i, state, rng.as_deref_mut())?;
            state = next;
            if record {
                caches.push(cache);
            }
        }
        Ok((state, caches))
    }

    fn apply(&self, i: usize, state: State, rng: Option<&mut ChaCha8Rng>) -> Result<(State, Cache)> {
        let twin = self.variant == Variant::Twin;
        let slots = self.slots[i];
        let State { coords, feat } = state;
        let x = feat;
        let (feat, coords, cache) = match self.spec.layers[i] {
            LayerSpec::Conv { .. } | LayerSpec::Linear { .. } => {
                let w = self.param(slots.a).expect("weight");
                let y = dense(&x, w, self.param(slots.b));
                (y, coords, Cache::Input(x))
            }
            LayerSpec::Relu { mode } => match (twin, mode.revised()) {
                (false, Some(m)) => {
                    let y = Feat::from_q(layers::qrelu(&x.to_q(), m)?);
                    (y, coords, Cache::Input(x))
                }
                _ => (componentwise_relu(&x), coords, Cache::Input(x)),
            },
            LayerSpec::RealRelu => (componentwise_relu(&x), coords, Cache::Input(x)),
            LayerSpec::BatchNorm { epsilon } => {
                if twin {
                    let gamma = self.param(slots.a).expect("scale");
                    let beta = self.param(slots.b).expect("shift");
                    let (y, xhat, inv_std) = twin_batchnorm(&x, gamma.data(), beta.data(), epsilon);
                    (y, coords, Cache::TwinBatchNorm { xhat, inv_std })
                } else {
                    let q = x.to_q();
                    let (y, inv_sigma) = layers::qbatchnorm_rows(&q, epsilon)?;
                    (Feat::from_q(y), coords, Cache::QBatchNorm { input: q, inv_sigma })
                }
            }
            LayerSpec::Dropout { p } => match rng {
                Some(rng) if p > 0.0 => {
                    let keep = layers::dropout_mask(x.len(), p, rng)?;
                    let scale = 1.0 / (1.0 - p);
                    let y = x.map_planes(x.shape.clone(), |pl| {
                        pl.iter().zip(&keep).map(|(v, &k)| if k { v * scale } else { 0.0 }).collect()
                    });
                    (y, coords, Cache::Dropout { keep, scale })
                }
                _ => (x, coords, Cache::Identity),
            },
            LayerSpec::Group { centers, neighborhood, k, relative } => {
                let cloud = Self::cloud_of(&coords);
                let center_coords = match centers {
                    Centers::All => coords.clone(),
                    Centers::Fps { m } => geometry::farthest_point_sampling(&cloud, m, self.spec.fps_seed)?.coords(&cloud),
                };
                let groups = match neighborhood {
                    Neighborhood::Ball { radius } => {
                        geometry::group_ball_knn_at(&cloud, &center_coords, radius, k, self.spec.ball_query)?
                    }
                    Neighborhood::Knn => geometry::group_knn_at(&cloud, &center_coords, k)?,
                };
                let index: Vec<usize> = groups.concat();
                let c = x.channels();
                let m = center_coords.len();
                let gathered = x.map_planes(vec![m, k, c], |pl| kernels::gather_rows(pl, c, &index));
                let (y, extra) = if relative {
                    let offsets: Vec<Vec3> = index
                        .iter()
                        .enumerate()
                        .map(|(t, &j)| {
                            let (p, ctr) = (coords[j], center_coords[t / k]);
                            [p[0] - ctr[0], p[1] - ctr[1], p[2] - ctr[2]]
                        })
                        .collect();
                    let rel = if twin {
                        Feat::with_planes(vec![m, k, 3], vec![offsets.concat()])
                    } else {
                        Feat::from_q(QTensor::from_points(&offsets).reshape(vec![m, k, 1])?)
                    };
                    let e = rel.channels();
                    let rows = m * k;
                    let planes = gathered
                        .planes
                        .iter()
                        .zip(&rel.planes)
                        .map(|(a, b)| kernels::concat_channels(a, c, b, e, rows))
                        .collect();
                    (Feat::with_planes(vec![m, k, c + e], planes), e)
                } else {
                    (gathered, 0)
                };
                let cache = Cache::Gather {
                    index,
                    rows: x.rows(),
                    channels: c,
                    extra,
                };
                (y, center_coords, cache)
            }
            LayerSpec::EdgeFeatures { k } => {
                let graph = geometry::knn_graph(&Self::cloud_of(&coords), k)?;
                let n = x.rows();
                let c = x.channels();
                let y = x.map_planes(vec![n, k, 2 * c], |pl| {
                    let mut out = Vec::with_capacity(n * k * 2 * c);
                    for (i, nbrs) in graph.neighbors.iter().enumerate() {
                        let fi = &pl[i * c..(i + 1) * c];
                        for &j in nbrs {
                            let fj = &pl[j * c..(j + 1) * c];
                            out.extend(fj.iter().zip(fi).map(|(a, b)| a - b));
                            out.extend_from_slice(fi);
                        }
                    }
                    out
                });
                (y, coords, Cache::Edge { neighbors: graph.neighbors })
            }
            LayerSpec::PoolNeighbors | LayerSpec::GlobalPool => {
                let global = matches!(self.spec.layers[i], LayerSpec::GlobalPool);
                let axis = if global { 0 } else { 1 };
                let (y, winners) = if twin {
                    real_pool_axis(&x, axis)
                } else {
                    let (y, w) = layers::pool_axis(&x.to_q(), axis)?;
                    (Feat::from_q(y), w)
                };
                let mut y = y;
                if global {
                    y.shape = vec![1, x.channels()];
                }
                let coords = if global { vec![geometry::centroid(&coords)] } else { coords };
                (
                    y,
                    coords,
                    Cache::Pool {
                        input_shape: x.shape.clone(),
                        winners,
                    },
                )
            }
            LayerSpec::Bridge { kind } => {
                if twin {
                    (x, coords, Cache::Identity)
                } else {
                    let y = match kind {
                        BridgeKind::NormSquared => Feat::from_r(crate::head::quaternion_to_real(&x.to_q())),
                        BridgeKind::ComponentSum => {
                            let n = x.len();
                            let sum = (0..n).map(|e| x.planes.iter().map(|p| p[e]).sum()).collect();
                            Feat::with_planes(x.shape.clone(), vec![sum])
                        }
                    };
                    (y, coords, Cache::Input(x))
                }
            }
        };
        Ok((State { coords, feat }, cache))
    }

    fn run_backward(&self, tape: &Tape, mut g: Feat, grads: &mut [RTensor]) -> Result<Feat> {
        for (i, cache) in tape.range.clone().zip(&tape.caches).rev() {
            g = self.layer_backward(i, cache, g, grads)?;
        }
        Ok(g)
    }

    fn layer_backward(&self, i: usize, cache: &Cache, g: Feat, grads: &mut [RTensor]) -> Result<Feat> {
        let twin = self.variant == Variant::Twin;
        let slots = self.slots[i];
        Ok(match (&self.spec.layers[i], cache) {
            (_, Cache::Identity) => g,
            (LayerSpec::Conv { .. } | LayerSpec::Linear { .. }, Cache::Input(x)) => {
                let w = self.param(slots.a).expect("weight");
                let (d_in, d_out) = (w.shape()[1], w.shape()[0]);
                let rows = x.rows();
                let gw = slots.a.unwrap();
                let mut dx_planes = Vec::with_capacity(x.planes.len());
                for (p, (xp, gp)) in x.planes.iter().zip(&g.planes).enumerate() {
                    dx_planes.push(kernels::mix_channels_backward(
                        xp,
                        gp,
                        rows,
                        d_in,
                        w.data(),
                        d_out,
                        grads[gw].data_mut(),
                    ));
                    if let Some(b) = slots.b {
                        let db = &mut grads[b].data_mut()[p * d_out..(p + 1) * d_out];
                        for r in 0..rows {
                            for (acc, v) in db.iter_mut().zip(&gp[r * d_out..(r + 1) * d_out]) {
                                *acc += v;
                            }
                        }
                    }
                }
                Feat::with_planes(x.shape.clone(), dx_planes)
            }
            (LayerSpec::Relu { mode }, Cache::Input(x)) => match (twin, mode.revised()) {
                (false, Some(_)) if self.fault == Some(Fault::ReluBackwardIdentity) => g,
                (false, Some(m)) => Feat::from_q(layers::qrelu_backward(&x.to_q(), m, &g.to_q())?),
                _ => componentwise_relu_backward(x, g),
            },
            (LayerSpec::RealRelu, Cache::Input(x)) => componentwise_relu_backward(x, g),
            (LayerSpec::BatchNorm { .. }, Cache::QBatchNorm { input, inv_sigma }) => {
                Feat::from_q(layers::qbatchnorm_rows_backward(input, inv_sigma, &g.to_q())?)
            }
            (LayerSpec::BatchNorm { .. }, Cache::TwinBatchNorm { xhat, inv_std }) => {
                let gamma = self.param(slots.a).expect("scale").data().to_vec();
                let (dx, dgamma, dbeta) = twin_batchnorm_backward(&g, xhat, inv_std, &gamma);
                for (acc, v) in grads[slots.a.unwrap()].data_mut().iter_mut().zip(dgamma) {
                    *acc += v;
                }
                for (acc, v) in grads[slots.b.unwrap()].data_mut().iter_mut().zip(dbeta) {
                    *acc += v;
                }
                dx
            }
            (LayerSpec::Dropout { .. }, Cache::Dropout { keep, scale }) => g.map_planes(g.shape.clone(), |pl| {
                pl.iter().zip(keep).map(|(v, &k)| if k { v * scale } else { 0.0 }).collect()
            }),
            (LayerSpec::Group { .. }, Cache::Gather { index, rows, channels, extra }) => {
                let total = channels + extra;
                let n = index.len();
                g.map_planes(vec![*rows, *channels], |pl| {
                    let own = if *extra > 0 {
                        kernels::split_channels(pl, *channels, *extra, n).0
                    } else {
                        pl[..n * total].to_vec()
                    };
                    kernels::scatter_rows(&own, *channels, index, *rows)
                })
            }
            (LayerSpec::EdgeFeatures { k }, Cache::Edge { neighbors }) => {
                let c = g.channels() / 2;
                let n = neighbors.len();
                g.map_planes(vec![n, c], |pl| {
                    let mut dx = vec![0.0; n * c];
                    for (i, nbrs) in neighbors.iter().enumerate() {
                        for (t, &j) in nbrs.iter().enumerate() {
                            let row = &pl[(i * k + t) * 2 * c..(i * k + t + 1) * 2 * c];
                            for ch in 0..c {
                                dx[j * c + ch] += row[ch];
                                dx[i * c + ch] += row[c + ch] - row[ch];
                            }
                        }
                    }
                    dx
                })
            }
            (LayerSpec::PoolNeighbors | LayerSpec::GlobalPool, Cache::Pool { input_shape, winners }) => {
                let total: usize = input_shape.iter().product();
                g.map_planes(input_shape.clone(), |pl| {
                    let mut dx = vec![0.0; total];
                    for (o, &w) in winners.iter().enumerate() {
                        dx[w] += pl[o];
                    }
                    dx
                })
            }
            (LayerSpec::Bridge { kind }, Cache::Input(x)) => {
                let gp = &g.planes[0];
                match kind {
                    BridgeKind::NormSquared => {
                        x.map_planes(x.shape.clone(), |pl| pl.iter().zip(gp).map(|(v, gv)| 2.0 * v * gv).collect())
                    }
                    BridgeKind::ComponentSum => x.map_planes(x.shape.clone(), |_| gp.clone()),
                }
            }
            (layer, _) => return Err(Error::Tape(tape_mismatch(layer))),
        })
    }
}

fn tape_mismatch(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::BatchNorm { .. } => "batch_norm cache does not match the network variant",
        _ => "tape does not match the network layers",
    }
}

fn dense(x: &Feat, w: &RTensor, bias: Option<&RTensor>) -> Feat {
    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    let mut shape = x.shape.clone();
    *shape.last_mut().unwrap() = d_out;
    let planes = x
        .planes
        .iter()
        .enumerate()
        .map(|(p, pl)| {
            let mut out = kernels::mix_channels(pl, rows, d_in, w.data(), d_out);
            if let Some(b) = bias {
                let b = &b.data()[p * d_out..(p + 1) * d_out];
                for r in 0..rows {
                    for (o, bv) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(b) {
                        *o += bv;
                    }
                }
            }
            out
        })
        .collect();
    Feat::with_planes(shape, planes)
}

fn componentwise_relu(x: &Feat) -> Feat {
    x.map_planes(x.shape.clone(), |pl| pl.iter().map(|v| v.max(0.0)).collect())
}

fn componentwise_relu_backward(x: &Feat, g: Feat) -> Feat {
    let planes = x
        .planes
        .iter()
        .zip(&g.planes)
        .map(|(xp, gp)| xp.iter().zip(gp).map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 }).collect())
        .collect();
    Feat::with_planes(x.shape.clone(), planes)
}

/// Standard batch norm over rows with affine scale and shift.
fn twin_batchnorm(x: &Feat, gamma: &[f64], beta: &[f64], eps: f64) -> (Feat, Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let rows = x.rows();
    let pl = &x.planes[0];
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for r in 0..rows {
        for v in 0..c {
            mean[v] += pl[r * c + v] / rows as f64;
        }
    }
    for r in 0..rows {
        for v in 0..c {
            let d = pl[r * c + v] - mean[v];
            var[v] += d * d / rows as f64;
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
    let xhat: Vec<f64> = (0..rows * c).map(|e| (pl[e] - mean[e % c]) * inv_std[e % c]).collect();
    let y = (0..rows * c).map(|e| gamma[e % c] * xhat[e] + beta[e % c]).collect();
    (Feat::with_planes(x.shape.clone(), vec![y]), xhat, inv_std)
}

fn twin_batchnorm_backward(g: &Feat, xhat: &[f64], inv_std: &[f64], gamma: &[f64]) -> (Feat, Vec<f64>, Vec<f64>) {
    let c = g.channels();
    let rows = g.rows();
    let gp = &g.planes[0];
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for e in 0..rows * c {
        sum_g[e % c] += gp[e];
        sum_gx[e % c] += gp[e] * xhat[e];
    }
    let n = rows as f64;
    let dx = (0..rows * c)
        .map(|e| {
            let v = e % c;
            gamma[v] * inv_std[v] / n * (n * gp[e] - sum_g[v] - xhat[e] * sum_gx[v])
        })
        .collect();
    (Feat::with_planes(g.shape.clone(), vec![dx]), sum_gx, sum_g)
}

/// Real max pooling along `axis` of a single-plane feature.
fn real_pool_axis(x: &Feat, axis: usize) -> (Feat, Vec<usize>) {
    let shape = &x.shape;
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let pl = &x.planes[0];
    let mut out = Vec::with_capacity(outer * inner);
    let mut winners = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = o * len * inner + i;
            for k in 1..len {
                let idx = (o * len + k) * inner + i;
                if pl[idx] > pl[best] {
                    best = idx;
                }
            }
            out.push(pl[best]);
            winners.push(best);
        }
    }
    let mut s = shape.clone();
    s.remove(axis);
    (Feat::with_planes(s, vec![out]), winners)
}

/// Cross-entropy for logits, Chamfer distance for clouds.
pub(crate) fn loss_and_grad(out: &NetworkOutput, target: Target<'_>) -> Result<(f64, NetworkOutput, Option<bool>)> {
    match (out, target) {
        (NetworkOutput::Logits(z), Target::Label(label)) => {
            let (loss, grad) = crate::head::softmax_cross_entropy(z.data(), label)?;
            let correct = crate::head::argmax(z.data()) == label;
            Ok((loss, NetworkOutput::Logits(RTensor::from_vec(grad)), Some(correct)))
        }
        (NetworkOutput::Cloud(pred), Target::Cloud(target)) => {
            let pred_cloud = PointCloud::from_points(&pred.to_points());
            let (loss, grad) = super::chamfer_loss(&pred_cloud, target)?;
            Ok((loss, NetworkOutput::Cloud(QTensor::from_points(&grad)), None))
        }
        _ => Err(invalid("loss", "target kind does not match the network output")),
    }
}

impl Network {
    /// Domain of the final layer's features.
    pub fn output_domain(&self) -> Domain {
        self.shapes.last().expect("input shape").domain
    }
}
