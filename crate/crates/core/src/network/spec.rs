use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BallQuery, FpsSeed};
use crate::layers::ReluMode;

/// ReLU variants available to a network. `Componentwise` is the standard
/// per-component ReLU and breaks equivariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReluKind {
    Constant { c: f64 },
    BatchMean,
    Componentwise,
}

impl Default for ReluKind {
    fn default() -> Self {
        ReluKind::Constant { c: 1.0 }
    }
}

impl ReluKind {
    pub(crate) fn revised(self) -> Option<ReluMode> {
        match self {
            ReluKind::Constant { c } => Some(ReluMode::Constant { c }),
            ReluKind::BatchMean => Some(ReluMode::BatchMean),
            ReluKind::Componentwise => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Centers {
    All,
    Fps { m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Neighborhood {
    Ball { radius: f64 },
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    #[default]
    NormSquared,
    /// Sum of the four components; not rotation-invariant.
    ComponentSum,
}

fn default_epsilon() -> f64 {
    1e-5
}

/// One layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 1×1 channel-mixing convolution. `bias` restores a per-channel
    /// quaternion bias, which breaks equivariance.
    Conv {
        out_channels: usize,
        #[serde(default)]
        bias: bool,
    },
    Relu {
        #[serde(default)]
        mode: ReluKind,
    },
    BatchNorm {
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
    Dropout { p: f64 },
    /// Samples centers and gathers `k` neighbors each: `[n, C] → [m, k, C']`.
    /// With `relative`, the offset from the center is appended as a channel.
    Group {
        centers: Centers,
        neighborhood: Neighborhood,
        k: usize,
        #[serde(default)]
        relative: bool,
    },
    /// Edge features `(f_j − f_i, f_i)` over the coordinate k-NN graph:
    /// `[n, C] → [n, k, 2C]`.
    EdgeFeatures { k: usize },
    /// Norm-argmax pooling over the neighbor axis.
    PoolNeighbors,
    /// Norm-argmax pooling over all points: `[n, C] → [1, C]`.
    GlobalPool,
    Bridge {
        #[serde(default)]
        kind: BridgeKind,
    },
    Linear { out_features: usize },
    RealRelu,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu { .. } => "relu",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Group { .. } => "group",
            LayerSpec::EdgeFeatures { .. } => "edge_features",
            LayerSpec::PoolNeighbors => "pool_neighbors",
            LayerSpec::GlobalPool => "global_pool",
            LayerSpec::Bridge { .. } => "bridge",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::RealRelu => "real_relu",
        }
    }
}

/// Declarative network description, serialized as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub num_points: usize,
    pub layers: Vec<LayerSpec>,
    /// Index of the layer whose output is the latent feature `z`.
    #[serde(default)]
    pub bottleneck: Option<usize>,
    #[serde(default)]
    pub fps_seed: FpsSeed,
    #[serde(default)]
    pub ball_query: BallQuery,
}

/// Feature domain at some point of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Quaternion,
    Real,
}

/// Whether to instantiate the equivariant network or its real-valued twin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Equivariant,
    /// Same topology with real features, `x, y, z` as three channels per
    /// quaternion input channel, conv biases, affine batch norm, standard ReLU
    /// and max pooling, identity bridge.
    Twin,
}

/// Shape of the state flowing out of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    /// Leading (row) dimensions.
    pub dims: Vec<usize>,
    pub channels: usize,
    pub domain: Domain,
    /// Number of coordinate points carried along.
    pub points: usize,
}

impl LayerShape {
    pub fn rows(&self) -> usize {
        self.dims.iter().product()
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes(Variant::Equivariant).map(|_| ())
    }

    pub fn bridge_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Bridge { .. }))
    }

    /// Whether the twin gives convolution `i` a bias. A bias directly ahead of
    /// a batch norm is absorbed by its shift and is left out.
    pub fn twin_conv_bias(&self, i: usize) -> bool {
        !matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. }))
    }

    pub fn is_fully_quaternion(&self) -> bool {
        self.bridge_index().is_none()
    }

    /// Shape after every layer; entry 0 is the input.
    pub fn shapes(&self, variant: Variant) -> Result<Vec<LayerShape>> {
        let fail = |layer: usize, reason: String| Error::InvalidSpec { layer, reason };
        if self.num_points == 0 {
            return Err(fail(0, "num_points must be positive".into()));
        }
        if self.layers.iter().filter(|l| matches!(l, LayerSpec::Bridge { .. })).count() > 1 {
            return Err(fail(self.bridge_index().unwrap_or(0), "at most one bridge is allowed".into()));
        }
        if let Some(b) = self.bottleneck {
            if b >= self.layers.len() {
                return Err(fail(b, "bottleneck index out of range".into()));
            }
        }
        let geo = match variant {
            Variant::Equivariant => 1,
            Variant::Twin => 3,
        };
        let mut cur = LayerShape {
            dims: vec![self.num_points],
            channels: geo,
            domain: Domain::Quaternion,
            points: self.num_points,
        };
        let mut out = vec![cur.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let quaternion_only = !matches!(
                layer,
                LayerSpec::Linear { .. } | LayerSpec::RealRelu | LayerSpec::Dropout { .. }
            );
            if quaternion_only && cur.domain == Domain::Real {
                return Err(fail(i, format!("{} cannot follow the bridge", layer.kind())));
            }
            if matches!(layer, LayerSpec::Linear { .. } | LayerSpec::RealRelu) && cur.domain == Domain::Quaternion {
                return Err(fail(i, format!("{} requires real features; add a bridge first", layer.kind())));
            }
            match *layer {
                LayerSpec::Conv { out_channels, .. } => {
                    if out_channels == 0 {
                        return Err(fail(i, "out_channels must be positive".into()));
                    }
                    cur.channels = out_channels;
                }
                LayerSpec::Linear { out_features } => {
                    if out_features == 0 {
                        return Err(fail(i, "out_features must be positive".into()));
                    }
                    cur.channels = out_features;
                }
                LayerSpec::Relu { mode } => {
                    if let ReluKind::Constant { c } = mode {
                        if !(c > 0.0) || !c.is_finite() {
                            return Err(fail(i, format!("relu threshold must be positive, got {c}")));
                        }
                    }
                }
                LayerSpec::BatchNorm { epsilon } => {
                    if !(epsilon > 0.0) {
                        return Err(fail(i, "epsilon must be positive".into()));
                    }
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(fail(i, format!("dropout p must lie in [0, 1), got {p}")));
                    }
                }
                LayerSpec::RealRelu | LayerSpec::Bridge { .. } => {}
                LayerSpec::Group { centers, neighborhood, k, relative } => {
                    if cur.dims.len() != 1 {
                        return Err(fail(i, "group expects [points, channels] features".into()));
                    }
                    let n = cur.dims[0];
                    let m = match centers {
                        Centers::All => n,
                        Centers::Fps { m } => m,
                    };
                    if m == 0 || m > n {
                        return Err(fail(i, format!("need 1 ≤ m ≤ {n}, got m = {m}")));
                    }
                    if k == 0 {
                        return Err(fail(i, "k must be positive".into()));
                    }
                    match neighborhood {
                        Neighborhood::Knn if k > n => return Err(fail(i, format!("k = {k} exceeds {n} points"))),
                        Neighborhood::Ball { radius } if !(radius > 0.0) => {
                            return Err(fail(i, "radius must be positive".into()))
                        }
                        _ => {}
                    }
                    cur.dims = vec![m, k];
                    cur.points = m;
                    if relative {
                        cur.channels += geo;
                    }
                }
                LayerSpec::EdgeFeatures { k } => {
                    if cur.dims.len() != 1 {
                        return Err(fail(i, "edge_features expects [points, channels] features".into()));
                    }
                    let n = cur.dims[0];
                    if k == 0 || k >= n {
                        return Err(fail(i, format!("need 1 ≤ k < {n}, got k = {k}")));
                    }
                    cur.dims = vec![n, k];
                    cur.channels *= 2;
                }
                LayerSpec::PoolNeighbors => {
                    if cur.dims.len() != 2 {
                        return Err(fail(i, "pool_neighbors needs a neighbor axis".into()));
                    }
                    cur.dims.pop();
                }
                LayerSpec::GlobalPool => {
                    if cur.dims.len() != 1 {
                        return Err(fail(i, "global_pool expects [points, channels] features".into()));
                    }
                    cur.dims = vec![1];
                    cur.points = 1;
                }
            }
            if matches!(layer, LayerSpec::Bridge { .. }) {
                cur.domain = Domain::Real;
            }
            out.push(cur.clone());
        }
        Ok(out)
    }
}

/// Preset size: `Micro` for experiments, `Tiny` (≤ 500 parameters) for
/// finite-difference gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Micro,
    Tiny,
}

pub const PRESETS: [&str; 4] = [
    "micro-pointnet-cls",
    "micro-pointnetpp-cls",
    "micro-edgeconv-cls",
    "micro-pointnet-ae",
];

pub fn preset(name: &str, scale: Scale) -> Result<NetworkSpec> {
    use LayerSpec::*;
    let tiny = scale == Scale::Tiny;
    let w = |micro: usize, small: usize| if tiny { small } else { micro };
    let block = |c: usize| vec![Conv { out_channels: c, bias: false }, BatchNorm { epsilon: 1e-5 }, Relu { mode: ReluKind::default() }];
    let head = |classes: usize| {
        vec![
            Bridge { kind: BridgeKind::NormSquared },
            Linear { out_features: w(32, 6) },
            RealRelu,
            Linear { out_features: w(16, 4) },
            RealRelu,
            Linear { out_features: classes },
        ]
    };
    let num_points = w(64, 16);
    let (layers, bottleneck) = match name {
        "micro-pointnet-cls" => {
            let mut l = Vec::new();
            for c in [w(16, 4), w(32, 6), w(64, 8)] {
                l.extend(block(c));
            }
            l.push(GlobalPool);
            l.extend(head(3));
            (l, None)
        }
        "micro-pointnetpp-cls" => {
            let mut l = vec![Group {
                centers: Centers::Fps { m: w(16, 6) },
                neighborhood: Neighborhood::Ball { radius: 0.4 },
                k: w(8, 4),
                relative: true,
            }];
            l.extend(block(w(16, 4)));
            l.extend(block(w(32, 6)));
            l.push(PoolNeighbors);
            l.push(Group {
                centers: Centers::Fps { m: w(4, 3) },
                neighborhood: Neighborhood::Ball { radius: 0.8 },
                k: w(4, 3),
                relative: true,
            });
            l.extend(block(w(32, 6)));
            l.extend(block(w(64, 8)));
            l.push(PoolNeighbors);
            l.push(GlobalPool);
            l.extend(head(3));
            (l, None)
        }
        "micro-edgeconv-cls" => {
            let mut l = vec![EdgeFeatures { k: w(8, 4) }];
            l.extend(block(w(16, 4)));
            l.push(PoolNeighbors);
            l.push(EdgeFeatures { k: w(8, 4) });
            l.extend(block(w(32, 6)));
            l.push(PoolNeighbors);
            l.push(GlobalPool);
            l.extend(head(3));
            (l, None)
        }
        "micro-pointnet-ae" => {
            let mut l = vec![EdgeFeatures { k: w(8, 4) }];
            l.extend(block(w(16, 4)));
            l.push(PoolNeighbors);
            for c in [w(32, 6), w(64, 8)] {
                l.extend(block(c));
            }
            l.push(GlobalPool);
            let z = l.len() - 1;
            l.push(Conv { out_channels: w(128, 8), bias: false });
            l.push(Relu { mode: ReluKind::default() });
            l.push(Conv { out_channels: num_points, bias: false });
            (l, Some(z))
        }
        other => {
            return Err(Error::InvalidArgument {
                op: "preset",
                reason: format!("unknown preset {other:?}; expected one of {PRESETS:?}"),
            })
        }
    };
    let spec = NetworkSpec {
        name: name.to_string(),
        seed: 0,
        num_points,
        layers,
        bottleneck,
        fps_seed: FpsSeed::Centroid,
        ball_query: BallQuery::Revised,
    };
    spec.validate()?;
    Ok(spec)
}
