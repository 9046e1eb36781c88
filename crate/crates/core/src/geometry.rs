//! Point-set operations: sampling, grouping, density, local frames and
//! coordinate weighting.
//!
//! Every distance tie is broken by the lexicographically largest `(x, y, z)`
//! coordinate, so selections depend only on the point set and never on the
//! input order.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quat::Quaternion;
use crate::rotation::{rotate_tensor, Rotor};
use crate::tensor::{QTensor, RTensor};

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dist_sq(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

#[inline]
fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Orders by ascending distance, then by descending coordinate tuple.
#[inline]
fn nearer_first(da: f64, pa: &Vec3, db: f64, pb: &Vec3) -> Ordering {
    da.total_cmp(&db).then_with(|| cmp_coords(pb, pa))
}

#[inline]
fn cmp_coords(a: &Vec3, b: &Vec3) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// A point cloud of pure quaternions with an optional class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: QTensor,
    label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: QTensor) -> Result<Self> {
        if points.shape().len() != 1 {
            return Err(invalid("PointCloud", format!("expected a 1-D tensor, got {:?}", points.shape())));
        }
        if !points.is_pure() {
            return Err(invalid("PointCloud", "points must be pure quaternions"));
        }
        Ok(Self { points, label: None })
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        Self {
            points: QTensor::from_points(points),
            label: None,
        }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &QTensor {
        &self.points
    }

    #[inline]
    pub fn point(&self, i: usize) -> Vec3 {
        self.points.point(i)
    }

    pub fn coords(&self) -> Vec<Vec3> {
        self.points.to_points()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.coords())
    }

    pub fn rotated(&self, r: &Rotor) -> Self {
        Self {
            points: rotate_tensor(r, &self.points),
            label: self.label,
        }
    }

    /// `out[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pts: Vec<Vec3> = perm.iter().map(|&i| self.point(i)).collect();
        Self {
            points: QTensor::from_points(&pts),
            label: self.label,
        }
    }

    /// Centers on the centroid and scales the largest radius to 1.
    pub fn normalized(&self) -> Self {
        let c = self.centroid();
        let shifted: Vec<Vec3> = self
            .coords()
            .iter()
            .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
            .collect();
        let r = shifted.iter().map(|p| dot(p, p).sqrt()).fold(0.0, f64::max);
        let s = if r > 0.0 { 1.0 / r } else { 1.0 };
        let pts: Vec<Vec3> = shifted.iter().map(|p| [p[0] * s, p[1] * s, p[2] * s]).collect();
        Self {
            points: QTensor::from_points(&pts),
            label: self.label,
        }
    }

    /// Largest distance from the centroid.
    pub fn radius(&self) -> f64 {
        let c = self.centroid();
        self.coords().iter().map(|p| dist_sq(p, &c).sqrt()).fold(0.0, f64::max)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.map(|v| v / n)
}

// --------------------------------------------------------------------------
// Farthest point sampling
// --------------------------------------------------------------------------

/// Seeding rule for farthest point sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpsSeed {
    /// The centroid seeds the first distance computation and is not emitted.
    #[default]
    Centroid,
    /// The centroid is emitted as the first selected (virtual) point.
    CentroidEmitted,
    /// Classic rule: start from input index 0. Order-dependent.
    FirstPoint,
}

/// Result of farthest point sampling. `virtual_first` holds the centroid
/// when it is emitted as the first sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FpsSelection {
    pub virtual_first: Option<Vec3>,
    pub indices: Vec<usize>,
}

impl FpsSelection {
    pub fn coords(&self, cloud: &PointCloud) -> Vec<Vec3> {
        self.virtual_first
            .iter()
            .copied()
            .chain(self.indices.iter().map(|&i| cloud.point(i)))
            .collect()
    }
}

/// Picks `m` points: the first is the point farthest from the centroid, each
/// later one maximizes its minimum distance to those already picked.
pub fn centroid_fps(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    Ok(farthest_point_sampling(cloud, m, FpsSeed::Centroid)?.indices)
}

pub fn farthest_point_sampling(cloud: &PointCloud, m: usize, seed: FpsSeed) -> Result<FpsSelection> {
    let n = cloud.len();
    if n == 0 {
        return Err(Error::EmptyInput { op: "centroid_fps" });
    }
    if m == 0 || m > n {
        return Err(invalid("centroid_fps", format!("need 1 ≤ m ≤ n, got m = {m}, n = {n}")));
    }
    let pts = cloud.coords();
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut indices = Vec::with_capacity(m);
    let mut virtual_first = None;

    let relax = |min_d: &mut Vec<f64>, from: &Vec3| {
        for (i, p) in pts.iter().enumerate() {
            min_d[i] = min_d[i].min(dist_sq(p, from));
        }
    };

    let mut remaining = m;
    match seed {
        FpsSeed::Centroid => relax(&mut min_d, &centroid(&pts)),
        FpsSeed::CentroidEmitted => {
            let c = centroid(&pts);
            relax(&mut min_d, &c);
            virtual_first = Some(c);
            remaining -= 1;
        }
        FpsSeed::FirstPoint => {
            taken[0] = true;
            indices.push(0);
            relax(&mut min_d, &pts[0]);
            remaining -= 1;
        }
    }
    if matches!(seed, FpsSeed::Centroid) {
        // the centroid only seeds the first pick
        let first = argmax_min_dist(&pts, &min_d, &taken);
        taken[first] = true;
        indices.push(first);
        min_d.fill(f64::INFINITY);
        relax(&mut min_d, &pts[first]);
        remaining -= 1;
    }
    for _ in 0..remaining {
        let next = argmax_min_dist(&pts, &min_d, &taken);
        taken[next] = true;
        indices.push(next);
        relax(&mut min_d, &pts[next]);
    }
    Ok(FpsSelection { virtual_first, indices })
}

fn argmax_min_dist(pts: &[Vec3], min_d: &[f64], taken: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for i in 0..pts.len() {
        if taken[i] {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let ord = min_d[i]
                    .total_cmp(&min_d[b])
                    .then_with(|| cmp_coords(&pts[i], &pts[b]));
                if ord == Ordering::Greater {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.expect("at least one untaken point")
}

// --------------------------------------------------------------------------
// Grouping
// --------------------------------------------------------------------------

/// `K` member indices per center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexGroups {
    pub centers: Vec<usize>,
    pub groups: Vec<Vec<usize>>,
}

impl IndexGroups {
    pub fn k(&self) -> usize {
        self.groups.first().map_or(0, Vec::len)
    }

    /// Member coordinates of every group, sorted, for order-free comparison.
    pub fn coordinate_multisets(&self, cloud: &PointCloud) -> Vec<Vec<Vec3>> {
        self.groups
            .iter()
            .map(|g| {
                let mut c: Vec<Vec3> = g.iter().map(|&i| cloud.point(i)).collect();
                c.sort_by(cmp_coords);
                c
            })
            .collect()
    }
}

/// Neighborhood rule of ball-query grouping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallQuery {
    /// Overfull balls keep the `K` nearest; underfull balls repeat the
    /// nearest in-ball point.
    #[default]
    Revised,
    /// Classic rule: first `K` in input order, padded with the first found.
    /// Order-dependent.
    Classic,
}

fn sorted_by_distance(pts: &[Vec3], center: &Vec3, candidates: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = candidates.map(|i| (i, dist_sq(&pts[i], center))).collect();
    v.sort_by(|a, b| nearer_first(a.1, &pts[a.0], b.1, &pts[b.0]).then(a.0.cmp(&b.0)));
    v
}

fn check_centers(cloud: &PointCloud, centers: &[usize]) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput { op: "grouping" });
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= cloud.len()) {
        return Err(invalid("grouping", format!("center index {bad} out of range")));
    }
    Ok(())
}

pub fn group_ball_knn(
    cloud: &PointCloud,
    centers: &[usize],
    radius: f64,
    k: usize,
    rule: BallQuery,
) -> Result<IndexGroups> {
    check_centers(cloud, centers)?;
    let coords: Vec<Vec3> = centers.iter().map(|&c| cloud.point(c)).collect();
    Ok(IndexGroups {
        centers: centers.to_vec(),
        groups: group_ball_knn_at(cloud, &coords, radius, k, rule)?,
    })
}

/// Ball-query grouping around arbitrary center coordinates. An empty ball is
/// filled with the nearest cloud point.
pub fn group_ball_knn_at(
    cloud: &PointCloud,
    centers: &[Vec3],
    radius: f64,
    k: usize,
    rule: BallQuery,
) -> Result<Vec<Vec<usize>>> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid("group_ball_knn", format!("radius must be positive, got {radius}")));
    }
    if k == 0 {
        return Err(invalid("group_ball_knn", "K must be at least 1"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput { op: "group_ball_knn" });
    }
    let pts = cloud.coords();
    let r2 = radius * radius;
    Ok(centers
        .iter()
        .map(|c| {
            let in_ball = (0..pts.len()).filter(|&i| dist_sq(&pts[i], c) <= r2);
            let mut group: Vec<usize> = match rule {
                BallQuery::Revised => sorted_by_distance(&pts, c, in_ball).into_iter().map(|(i, _)| i).collect(),
                BallQuery::Classic => in_ball.collect(),
            };
            group.truncate(k);
            let pad = match group.first() {
                Some(&first) => first,
                None => sorted_by_distance(&pts, c, 0..pts.len())[0].0,
            };
            group.resize(k, pad);
            group
        })
        .collect())
}

pub fn group_knn(cloud: &PointCloud, centers: &[usize], k: usize) -> Result<IndexGroups> {
    check_centers(cloud, centers)?;
    let coords: Vec<Vec3> = centers.iter().map(|&c| cloud.point(c)).collect();
    Ok(IndexGroups {
        centers: centers.to_vec(),
        groups: group_knn_at(cloud, &coords, k)?,
    })
}

pub fn group_knn_at(cloud: &PointCloud, centers: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > cloud.len() {
        return Err(invalid("group_knn", format!("need 1 ≤ K ≤ n, got K = {k}, n = {}", cloud.len())));
    }
    let pts = cloud.coords();
    Ok(centers
        .iter()
        .map(|c| {
            sorted_by_distance(&pts, c, 0..pts.len())
                .into_iter()
                .take(k)
                .map(|(i, _)| i)
                .collect()
        })
        .collect())
}

/// Directed k-nearest-neighbor graph: `neighbors[u]` are the `k` nearest
/// other points of `u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

impl KnnGraph {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().map(move |&v| (u, v)))
            .collect()
    }

    /// Edges as coordinate pairs, sorted.
    pub fn coordinate_edges(&self, cloud: &PointCloud) -> Vec<(Vec3, Vec3)> {
        let mut e: Vec<(Vec3, Vec3)> = self
            .edges()
            .into_iter()
            .map(|(u, v)| (cloud.point(u), cloud.point(v)))
            .collect();
        e.sort_by(|a, b| cmp_coords(&a.0, &b.0).then(cmp_coords(&a.1, &b.1)));
        e
    }
}

pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(invalid("knn_graph", format!("need 1 ≤ k < n, got k = {k}, n = {n}")));
    }
    let pts = cloud.coords();
    let neighbors = (0..n)
        .map(|u| {
            sorted_by_distance(&pts, &pts[u], (0..n).filter(|&v| v != u))
                .into_iter()
                .take(k)
                .map(|(v, _)| v)
                .collect()
        })
        .collect();
    Ok(KnnGraph { k, neighbors })
}

// --------------------------------------------------------------------------
// Density
// --------------------------------------------------------------------------

/// Gaussian kernel density `d_u = (1/n) Σ_v exp(−‖p_u − p_v‖² / 2h²)`.
pub fn density_estimate(cloud: &PointCloud, bandwidth: f64) -> Result<RTensor> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(invalid("density_estimate", format!("bandwidth must be positive, got {bandwidth}")));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput { op: "density_estimate" });
    }
    let pts = cloud.coords();
    let n = pts.len() as f64;
    let denom = 2.0 * bandwidth * bandwidth;
    Ok(RTensor::from_vec(
        pts.iter()
            .map(|p| pts.iter().map(|q| (-dist_sq(p, q) / denom).exp()).sum::<f64>() / n)
            .collect(),
    ))
}

/// One tenth of the diameter of the centroid-centered bounding sphere.
pub fn default_bandwidth(cloud: &PointCloud) -> f64 {
    let r = cloud.radius();
    if r > 0.0 {
        0.2 * r
    } else {
        1.0
    }
}

/// Scales each point's feature row by its inverse density.
pub fn density_scale(cloud: &PointCloud, features: &QTensor, bandwidth: f64) -> Result<QTensor> {
    let dens = density_estimate(cloud, bandwidth)?;
    scale_rows(features, cloud.len(), |u| 1.0 / dens.data()[u])
}

fn scale_rows(features: &QTensor, rows: usize, s: impl Fn(usize) -> f64) -> Result<QTensor> {
    if features.shape().first() != Some(&rows) {
        return Err(Error::ShapeMismatch {
            op: "scale_rows",
            left: features.shape().to_vec(),
            right: vec![rows],
        });
    }
    let per = features.len() / rows.max(1);
    let mut out = features.clone();
    for u in 0..rows {
        let f = s(u);
        for i in u * per..(u + 1) * per {
            out.set(i, features.get(i).scale(f));
        }
    }
    Ok(out)
}

// --------------------------------------------------------------------------
// Local reference frame
// --------------------------------------------------------------------------

/// Relative eigenvalue separation below which the frame is ambiguous.
pub const FRAME_GAP: f64 = 1e-9;

/// Orthonormal right-handed PCA frame. `basis[i]` is the `i`-th principal
/// axis in descending eigenvalue order.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFrame {
    pub origin: Vec3,
    pub basis: [Vec3; 3],
    pub eigenvalues: [f64; 3],
}

impl LocalFrame {
    pub fn express(&self, p: &Vec3) -> Vec3 {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        [dot(&self.basis[0], &d), dot(&self.basis[1], &d), dot(&self.basis[2], &d)]
    }

    pub fn determinant(&self) -> f64 {
        dot(&self.basis[0], &cross(&self.basis[1], &self.basis[2]))
    }
}

/// PCA frame of a point subset and the subset's coordinates in it (`K × 3`).
/// The frame co-rotates with the points, so the coordinates are
/// rotation-invariant.
pub fn pca_lrf(points: &[Vec3]) -> Result<(LocalFrame, RTensor)> {
    if points.len() < 3 {
        return Err(invalid("pca_lrf", "need at least 3 points"));
    }
    let origin = centroid(points);
    let centered: Vec<Vec3> = points
        .iter()
        .map(|p| [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]])
        .collect();
    let mut cov = Matrix3::<f64>::zeros();
    for p in &centered {
        let v = Vector3::new(p[0], p[1], p[2]);
        cov += v * v.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda = order.map(|i| eig.eigenvalues[i]);
    let scale = lambda[0].abs();
    let gap = (lambda[0] - lambda[1]).min(lambda[1] - lambda[2]);
    if !(scale > 0.0) || gap < FRAME_GAP * scale {
        return Err(Error::DegenerateFrame { gap });
    }

    // farthest first; ties by larger coordinates
    let mut by_reach: Vec<usize> = (0..centered.len()).collect();
    by_reach.sort_by(|&a, &b| {
        dot(&centered[b], &centered[b])
            .total_cmp(&dot(&centered[a], &centered[a]))
            .then_with(|| cmp_coords(&centered[b], &centered[a]))
    });
    let reach = dot(&centered[by_reach[0]], &centered[by_reach[0]]).sqrt();

    let axis = |col: usize| -> Vec3 {
        let v = eig.eigenvectors.column(col);
        let mut e = [v[0], v[1], v[2]];
        let n = dot(&e, &e).sqrt();
        e = e.map(|x| x / n);
        for &i in &by_reach {
            let d = dot(&e, &centered[i]);
            if d.abs() > 1e-9 * reach {
                if d < 0.0 {
                    e = e.map(|x| -x);
                }
                break;
            }
        }
        e
    };
    let e1 = axis(order[0]);
    let e2 = axis(order[1]);
    let e3 = cross(&e1, &e2);
    let frame = LocalFrame {
        origin,
        basis: [e1, e2, e3],
        eigenvalues: lambda,
    };
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend_from_slice(&frame.express(p));
    }
    Ok((frame, RTensor::new(vec![points.len(), 3], data)?))
}

// --------------------------------------------------------------------------
// 3-D coordinate weighting
// --------------------------------------------------------------------------

/// Real MLP `3 → hidden → 1` with a ReLU hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightNet {
    pub w1: RTensor,
    pub b1: Vec<f64>,
    pub w2: RTensor,
    pub b2: f64,
}

impl WeightNet {
    pub const HIDDEN: usize = 8;

    pub fn constant(value: f64) -> Self {
        Self {
            w1: RTensor::zeros(vec![Self::HIDDEN, 3]),
            b1: vec![0.0; Self::HIDDEN],
            w2: RTensor::zeros(vec![1, Self::HIDDEN]),
            b2: value,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let s1 = (1.0f64 / 3.0).sqrt();
        let s2 = (1.0 / Self::HIDDEN as f64).sqrt();
        let mut u = |s: f64| rng.random_range(-s..s);
        Self {
            w1: RTensor::new(vec![Self::HIDDEN, 3], (0..3 * Self::HIDDEN).map(|_| u(s1)).collect()).unwrap(),
            b1: (0..Self::HIDDEN).map(|_| u(s1)).collect(),
            w2: RTensor::new(vec![1, Self::HIDDEN], (0..Self::HIDDEN).map(|_| u(s2)).collect()).unwrap(),
            b2: u(s2),
        }
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let mut out = self.b2;
        for h in 0..Self::HIDDEN {
            let a = self.b1[h] + (0..3).map(|k| self.w1.at(h, k) * x[k]).sum::<f64>();
            out += self.w2.at(0, h) * a.max(0.0);
        }
        out
    }
}

/// Multiplies every channel of neighbor `k` by `weight_net(lrf_coords[k])`.
pub fn coords_weighting(lrf_coords: &RTensor, weight_net: &WeightNet, features: &QTensor) -> Result<QTensor> {
    if lrf_coords.shape().len() != 2 || lrf_coords.shape()[1] != 3 {
        return Err(Error::ShapeMismatch {
            op: "coords_weighting",
            left: lrf_coords.shape().to_vec(),
            right: vec![features.shape().first().copied().unwrap_or(0), 3],
        });
    }
    let k = lrf_coords.shape()[0];
    scale_rows(features, k, |row| {
        weight_net.eval(&[lrf_coords.at(row, 0), lrf_coords.at(row, 1), lrf_coords.at(row, 2)])
    })
}

/// Pure-quaternion view of `K × 3` coordinates, for diagnostics.
pub fn coords_as_quaternions(coords: &RTensor) -> QTensor {
    let k = coords.shape()[0];
    let items: Vec<Quaternion> = (0..k)
        .map(|i| Quaternion::pure(coords.at(i, 0), coords.at(i, 1), coords.at(i, 2)))
        .collect();
    QTensor::from_vec(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::random_rotor;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        let pts: Vec<Vec3> = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        PointCloud::from_points(&pts)
    }

    fn sorted(mut v: Vec<Vec3>) -> Vec<Vec3> {
        v.sort_by(cmp_coords);
        v
    }

    /// Brute-force FPS: recompute every min-distance from scratch each step.
    fn fps_oracle(pts: &[Vec3], m: usize) -> Vec<Vec3> {
        let c = centroid(pts);
        let mut chosen: Vec<Vec3> = Vec::new();
        while chosen.len() < m {
            let seeds: Vec<Vec3> = if chosen.is_empty() { vec![c] } else { chosen.clone() };
            let mut best: Option<(f64, Vec3)> = None;
            for p in pts {
                if chosen.contains(p) {
                    continue;
                }
                let d = seeds.iter().map(|s| dist_sq(p, s)).fold(f64::INFINITY, f64::min);
                let better = match best {
                    None => true,
                    Some((bd, bp)) => d > bd || (d == bd && cmp_coords(p, &bp) == Ordering::Greater),
                };
                if better {
                    best = Some((d, *p));
                }
            }
            chosen.push(best.unwrap().1);
        }
        chosen
    }

    #[test]
    fn fps_example() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0]];
        let cloud = PointCloud::from_points(&pts);
        assert_eq!(cloud.centroid(), [2.75, 0.25, 0.0]);
        let sel = centroid_fps(&cloud, 2).unwrap();
        assert_eq!(sel, vec![3, 2]);
        // every ordering selects the same coordinates in the same order
        let oracle = fps_oracle(&pts, 2);
        let mut perm: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..24 {
            perm.shuffle(&mut rng);
            let c = cloud.permuted(&perm);
            let got: Vec<Vec3> = centroid_fps(&c, 2).unwrap().iter().map(|&i| c.point(i)).collect();
            assert_eq!(got, oracle);
        }
        let all = centroid_fps(&cloud, 4).unwrap();
        assert_eq!(sorted(all.iter().map(|&i| cloud.point(i)).collect()), sorted(pts.to_vec()));
        assert!(centroid_fps(&cloud, 5).is_err());
        assert!(centroid_fps(&PointCloud::from_points(&[]), 1).is_err());
    }

    #[test]
    fn fps_matches_oracle_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let cloud = random_cloud(&mut rng, 30);
            let oracle = fps_oracle(&cloud.coords(), 8);
            let got: Vec<Vec3> = centroid_fps(&cloud, 8).unwrap().iter().map(|&i| cloud.point(i)).collect();
            assert_eq!(got, oracle);
            let mut perm: Vec<usize> = (0..30).collect();
            perm.shuffle(&mut rng);
            let p = cloud.permuted(&perm);
            let got_p: Vec<Vec3> = centroid_fps(&p, 8).unwrap().iter().map(|&i| p.point(i)).collect();
            assert_eq!(got_p, oracle);
        }
    }

    #[test]
    fn fps_emitted_centroid() {
        let cloud = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0]]);
        let sel = farthest_point_sampling(&cloud, 2, FpsSeed::CentroidEmitted).unwrap();
        assert_eq!(sel.virtual_first, Some([2.75, 0.25, 0.0]));
        assert_eq!(sel.indices, vec![3]);
        assert_eq!(sel.coords(&cloud).len(), 2);
    }

    #[test]
    fn ball_query_examples() {
        let line: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        let cloud = PointCloud::from_points(&line);
        let g = group_ball_knn(&cloud, &[0, 2, 4], 10.0, 2, BallQuery::Revised).unwrap();
        assert_eq!(g.groups[0], vec![0, 1]);
        // center 2: distance-1 tie between 1 and 3 broken by larger x
        assert_eq!(g.groups[1], vec![2, 3]);
        assert_eq!(g.groups[2], vec![4, 3]);

        let g = group_ball_knn(&cloud, &[0], 0.5, 3, BallQuery::Revised).unwrap();
        assert_eq!(g.groups[0], vec![0, 0, 0]);
        assert!(group_ball_knn(&cloud, &[0], 0.0, 3, BallQuery::Revised).is_err());
        assert!(group_ball_knn(&cloud, &[0], 1.0, 0, BallQuery::Revised).is_err());

        // empty ball around a virtual center pads with the nearest point
        let g = group_ball_knn_at(&cloud, &[[2.2, 5.0, 0.0]], 1.0, 2, BallQuery::Revised).unwrap();
        assert_eq!(g[0], vec![2, 2]);
    }

    /// Brute-force k nearest by exhaustive comparison count.
    fn knn_oracle(pts: &[Vec3], c: &Vec3, k: usize) -> Vec<Vec3> {
        let mut ranked: Vec<(usize, Vec3)> = pts
            .iter()
            .map(|p| {
                let d = dist_sq(p, c);
                let rank = pts
                    .iter()
                    .filter(|q| {
                        let dq = dist_sq(q, c);
                        dq < d || (dq == d && cmp_coords(q, p) == Ordering::Greater)
                    })
                    .count();
                (rank, *p)
            })
            .collect();
        ranked.sort_by_key(|r| r.0);
        ranked.into_iter().take(k).map(|r| r.1).collect()
    }

    #[test]
    fn knn_matches_oracle_and_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let cloud = random_cloud(&mut rng, 25);
            let pts = cloud.coords();
            let centers = [0, 5, 9];
            let g = group_knn(&cloud, &centers, 4).unwrap();
            for (ci, &c) in centers.iter().enumerate() {
                let got: Vec<Vec3> = g.groups[ci].iter().map(|&i| pts[i]).collect();
                assert_eq!(got, knn_oracle(&pts, &pts[c], 4));
            }
            let r = random_rotor(&mut rng);
            assert_eq!(group_knn(&cloud.rotated(&r), &centers, 4).unwrap(), g);

            let mut perm: Vec<usize> = (0..25).collect();
            perm.shuffle(&mut rng);
            let inv: Vec<usize> = {
                let mut inv = vec![0; 25];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                inv
            };
            let p = cloud.permuted(&perm);
            let gp = group_knn(&p, &centers.map(|c| inv[c]), 4).unwrap();
            assert_eq!(gp.coordinate_multisets(&p), g.coordinate_multisets(&cloud));
        }
        let cloud = random_cloud(&mut rng, 3);
        assert!(group_knn(&cloud, &[0], 4).is_err());
        let g = group_knn(&cloud, &[0, 1, 2], 1).unwrap();
        assert_eq!(g.groups, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn ball_query_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let cloud = random_cloud(&mut rng, 40);
            let centers = centroid_fps(&cloud, 6).unwrap();
            let g = group_ball_knn(&cloud, &centers, 0.6, 5, BallQuery::Revised).unwrap();
            let mut perm: Vec<usize> = (0..40).collect();
            perm.shuffle(&mut rng);
            let p = cloud.permuted(&perm);
            let pc = centroid_fps(&p, 6).unwrap();
            let gp = group_ball_knn(&p, &pc, 0.6, 5, BallQuery::Revised).unwrap();
            assert_eq!(gp.coordinate_multisets(&p), g.coordinate_multisets(&cloud));
        }
    }

    #[test]
    fn knn_graph_examples() {
        let two = PointCloud::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(knn_graph(&two, 1).unwrap().edges(), vec![(0, 1), (1, 0)]);
        assert!(knn_graph(&two, 2).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = random_cloud(&mut rng, 20);
        let g = knn_graph(&cloud, 3).unwrap();
        let r = random_rotor(&mut rng);
        assert_eq!(knn_graph(&cloud.rotated(&r), 3).unwrap(), g);
        let mut perm: Vec<usize> = (0..20).collect();
        perm.shuffle(&mut rng);
        let p = cloud.permuted(&perm);
        assert_eq!(knn_graph(&p, 3).unwrap().coordinate_edges(&p), g.coordinate_edges(&cloud));
    }

    #[test]
    fn density_examples() {
        let one = PointCloud::from_points(&[[1.0, 2.0, 3.0]]);
        assert_eq!(density_estimate(&one, 0.5).unwrap().data(), &[1.0]);
        let two = PointCloud::from_points(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]);
        assert_eq!(density_estimate(&two, 0.5).unwrap().data(), &[1.0, 1.0]);
        assert!(density_estimate(&two, 0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = random_cloud(&mut rng, 30);
        let h = default_bandwidth(&cloud);
        let d = density_estimate(&cloud, h).unwrap();
        let r = random_rotor(&mut rng);
        let rc = cloud.rotated(&r);
        assert!((default_bandwidth(&rc) - h).abs() < 1e-12);
        assert!(density_estimate(&rc, h).unwrap().max_abs_diff(&d) <= 1e-12);
    }

    #[test]
    fn pca_frame_hand_spectrum() {
        let pts = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1e-3, 0.0], [0.0, -1e-3, 0.0], [0.2, 0.0, 1e-5]];
        let (frame, coords) = pca_lrf(&pts).unwrap();
        // covariance oracle
        let c = centroid(&pts);
        let mut cov = [[0.0; 3]; 3];
        for p in &pts {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (p[i] - c[i]) * (p[j] - c[j]) / pts.len() as f64;
                }
            }
        }
        for (axis, lambda) in frame.basis.iter().zip(frame.eigenvalues) {
            for i in 0..3 {
                let cv: f64 = (0..3).map(|j| cov[i][j] * axis[j]).sum();
                assert!((cv - lambda * axis[i]).abs() < 1e-12);
            }
        }
        assert!(frame.basis[0][0].abs() > 0.999_999);
        // the centroid sits at x = 0.04, so (-1, 0, 0) is farthest
        let far = pts[1];
        assert!(dot(&frame.basis[0], &[far[0] - c[0], far[1] - c[1], far[2] - c[2]]) > 0.0);
        assert!((frame.determinant() - 1.0).abs() < 1e-12);
        assert_eq!(coords.shape(), &[5, 3]);

        let collinear: Vec<Vec3> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert!(matches!(pca_lrf(&collinear), Err(Error::DegenerateFrame { .. })));
    }

    #[test]
    fn pca_frame_is_rotation_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<Vec3> = (0..12)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)])
            .collect();
        let (frame, base) = pca_lrf(&pts).unwrap();
        for b in &frame.basis {
            assert!((dot(b, b) - 1.0).abs() < 1e-10);
        }
        assert!(dot(&frame.basis[0], &frame.basis[1]).abs() < 1e-10);
        for _ in 0..100 {
            let r = random_rotor(&mut rng);
            let rotated: Vec<Vec3> = pts.iter().map(|p| crate::rotation::rotate_point(&r, *p)).collect();
            let (_, coords) = pca_lrf(&rotated).unwrap();
            assert!(coords.max_abs_diff(&base) <= 1e-8);
        }
        // coordinates already in their own frame map to themselves
        let own: Vec<Vec3> = (0..12).map(|i| [base.at(i, 0), base.at(i, 1), base.at(i, 2)]).collect();
        let (_, again) = pca_lrf(&own).unwrap();
        assert!(again.max_abs_diff(&base) <= 1e-10);
    }

    #[test]
    fn coords_weighting_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let coords = RTensor::new(vec![4, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let f = QTensor::from_quaternions(
            vec![4, 2],
            &(0..8).map(|i| Quaternion::pure(i as f64, 1.0, -1.0)).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(coords_weighting(&coords, &WeightNet::constant(1.0), &f).unwrap(), f);
        let zero = coords_weighting(&coords, &WeightNet::constant(0.0), &f).unwrap();
        assert!(zero.iter().all(|q| q.norm() == 0.0));
        let bad = QTensor::zeros(vec![3, 2]);
        assert!(coords_weighting(&coords, &WeightNet::constant(1.0), &bad).is_err());
    }
}
