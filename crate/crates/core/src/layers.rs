//! Rotation-equivariant layer operations on quaternion features.
//!
//! Feature tensors use the last axis as the channel axis; every leading axis
//! is treated as a row. Each operation has a matching `*_backward` that maps
//! an output gradient (one real per quaternion component) to input and weight
//! gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels;
use crate::quat::Quaternion;
use crate::tensor::{QTensor, RTensor};

/// `‖f‖ → sqrt(‖f‖² + NORM_GUARD)` inside backward passes.
pub const NORM_GUARD: f64 = 1e-20;

/// How the ReLU threshold `c` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReluMode {
    Constant { c: f64 },
    /// `c = (1/d) Σ_v ‖f_v‖` over the channel vector of each row.
    BatchMean,
}

impl Default for ReluMode {
    fn default() -> Self {
        ReluMode::Constant { c: 1.0 }
    }
}

/// Hyperparameters for one quaternion layer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `D × d`; the revised convolution has no bias term at all.
    pub weight: RTensor,
    pub relu_mode: ReluMode,
    pub bn_epsilon: f64,
    pub dropout_p: f64,
    pub dropout_scale: bool,
}

impl LayerParams {
    pub fn new(weight: RTensor) -> Self {
        Self {
            weight,
            relu_mode: ReluMode::default(),
            bn_epsilon: 1e-5,
            dropout_p: 0.0,
            dropout_scale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.shape().len() != 2 {
            return Err(invalid("LayerParams", "weight must be a D×d matrix"));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(invalid("LayerParams", "bn_epsilon must be positive"));
        }
        check_dropout_p(self.dropout_p)?;
        if let ReluMode::Constant { c } = self.relu_mode {
            check_relu_c(c)?;
        }
        Ok(())
    }
}

fn rows_and_channels(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&d, lead)) => (lead.iter().product(), d),
        None => (1, 1),
    }
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

fn check_relu_c(c: f64) -> Result<()> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(invalid("qrelu", format!("threshold c must be positive, got {c}")));
    }
    Ok(())
}

fn check_dropout_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid("qdropout", format!("p must lie in [0, 1), got {p}")));
    }
    Ok(())
}

// --------------------------------------------------------------------------
// Convolution
// --------------------------------------------------------------------------

fn conv_dims(weight: &RTensor, f_shape: &[usize]) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    let (rows, d) = rows_and_channels(f_shape);
    if ws.len() != 2 || f_shape.is_empty() || ws[1] != d {
        return Err(Error::ShapeMismatch {
            op: "qconv",
            left: ws.to_vec(),
            right: f_shape.to_vec(),
        });
    }
    Ok((rows, d, ws[0]))
}

/// 1×1 convolution `out_u = Σ_v w[u,v] f_v`: one real weight scales all four
/// components.
pub fn qconv(weight: &RTensor, f: &QTensor) -> Result<QTensor> {
    let (rows, d, d_out) = conv_dims(weight, f.shape())?;
    let mut shape = f.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    let channels = f
        .channels()
        .map(|c| kernels::mix_channels(c, rows, d, weight.data(), d_out));
    QTensor::from_channels(shape, channels)
}

/// Returns `(∂L/∂weight, ∂L/∂f)`.
pub fn qconv_backward(weight: &RTensor, f: &QTensor, grad_out: &QTensor) -> Result<(RTensor, QTensor)> {
    let (rows, d, d_out) = conv_dims(weight, f.shape())?;
    let mut grad_w = RTensor::zeros(weight.shape().to_vec());
    let fc = f.channels();
    let gc = grad_out.channels();
    if grad_out.len() != rows * d_out {
        return Err(Error::ShapeMismatch {
            op: "qconv_backward",
            left: grad_out.shape().to_vec(),
            right: vec![rows, d_out],
        });
    }
    let mut grad_f = [vec![], vec![], vec![], vec![]];
    for k in 0..4 {
        grad_f[k] = kernels::mix_channels_backward(fc[k], gc[k], rows, d, weight.data(), d_out, grad_w.data_mut());
    }
    Ok((grad_w, QTensor::from_channels(f.shape().to_vec(), grad_f)?))
}

// --------------------------------------------------------------------------
// ReLU
// --------------------------------------------------------------------------

fn row_threshold(f: &QTensor, start: usize, d: usize, mode: ReluMode) -> f64 {
    match mode {
        ReluMode::Constant { c } => c,
        ReluMode::BatchMean => (start..start + d).map(|i| f.get(i).norm()).sum::<f64>() / d as f64,
    }
}

/// `ReLU(f_v) = ‖f_v‖ / max(‖f_v‖, c) · f_v`.
pub fn qrelu(f: &QTensor, mode: ReluMode) -> Result<QTensor> {
    match mode {
        ReluMode::Constant { c } => check_relu_c(c)?,
        ReluMode::BatchMean if f.is_empty() => return Err(Error::EmptyInput { op: "qrelu" }),
        ReluMode::BatchMean => {}
    }
    let (rows, d) = rows_and_channels(f.shape());
    let mut out = f.clone();
    for r in 0..rows {
        let c = row_threshold(f, r * d, d, mode);
        for i in r * d..(r + 1) * d {
            let q = f.get(i);
            let n = q.norm();
            if n < c {
                out.set(i, q.scale(n / c));
            }
        }
    }
    Ok(out)
}

pub fn qrelu_backward(f: &QTensor, mode: ReluMode, grad_out: &QTensor) -> Result<QTensor> {
    check_same_shape("qrelu_backward", f.shape(), grad_out.shape())?;
    let (rows, d) = rows_and_channels(f.shape());
    let mut grad = grad_out.clone();
    for r in 0..rows {
        let c = row_threshold(f, r * d, d, mode);
        let mut dl_dc = 0.0;
        for i in r * d..(r + 1) * d {
            let q = f.get(i);
            let n = q.norm();
            if n < c {
                let g = grad_out.get(i);
                let guarded = (n * n + NORM_GUARD).sqrt();
                let fg = q.dot(&g);
                grad.set(i, (g.scale(guarded) + q.scale(fg / guarded)).scale(1.0 / c));
                dl_dc -= n * fg / (c * c);
            }
        }
        if matches!(mode, ReluMode::BatchMean) && dl_dc != 0.0 {
            for i in r * d..(r + 1) * d {
                let q = f.get(i);
                let guarded = (q.norm_sqr() + NORM_GUARD).sqrt();
                grad.set(i, grad.get(i) + q.scale(dl_dc / (d as f64 * guarded)));
            }
        }
    }
    Ok(grad)
}

// --------------------------------------------------------------------------
// Batch normalization
// --------------------------------------------------------------------------

/// Normalizes every channel (last axis) by `sqrt(mean_rows ‖f‖² + ε)`.
/// Returns the output and the per-channel reciprocal divisors.
pub fn qbatchnorm_rows(f: &QTensor, epsilon: f64) -> Result<(QTensor, Vec<f64>)> {
    if !(epsilon > 0.0) {
        return Err(invalid("qbatchnorm", "epsilon must be positive"));
    }
    let (rows, d) = rows_and_channels(f.shape());
    if rows == 0 || f.is_empty() {
        return Err(Error::EmptyInput { op: "qbatchnorm" });
    }
    let mut mean_sq = vec![0.0; d];
    for r in 0..rows {
        for (v, m) in mean_sq.iter_mut().enumerate() {
            *m += f.get(r * d + v).norm_sqr();
        }
    }
    let inv: Vec<f64> = mean_sq
        .iter()
        .map(|m| 1.0 / (m / rows as f64 + epsilon).sqrt())
        .collect();
    let mut out = f.clone();
    for r in 0..rows {
        for (v, s) in inv.iter().enumerate() {
            let i = r * d + v;
            out.set(i, f.get(i).scale(*s));
        }
    }
    Ok((out, inv))
}

pub fn qbatchnorm_rows_backward(f: &QTensor, inv_sigma: &[f64], grad_out: &QTensor) -> Result<QTensor> {
    check_same_shape("qbatchnorm_backward", f.shape(), grad_out.shape())?;
    let (rows, d) = rows_and_channels(f.shape());
    let mut gf = vec![0.0; d];
    for r in 0..rows {
        for (v, acc) in gf.iter_mut().enumerate() {
            let i = r * d + v;
            *acc += grad_out.get(i).dot(&f.get(i));
        }
    }
    let mut grad = grad_out.clone();
    for r in 0..rows {
        for v in 0..d {
            let i = r * d + v;
            let s = inv_sigma[v];
            let coef = gf[v] * s * s * s / rows as f64;
            grad.set(i, grad_out.get(i).scale(s) - f.get(i).scale(coef));
        }
    }
    Ok(grad)
}

/// Batch form: every sample is scaled element-wise by statistics pooled
/// across the batch.
pub fn qbatchnorm(batch: &[QTensor], epsilon: f64) -> Result<Vec<QTensor>> {
    let first = batch.first().ok_or(Error::EmptyInput { op: "qbatchnorm" })?;
    for s in batch {
        check_same_shape("qbatchnorm", first.shape(), s.shape())?;
    }
    let per = first.len();
    let mut stacked = QTensor::zeros(vec![batch.len(), per]);
    for (j, s) in batch.iter().enumerate() {
        for i in 0..per {
            stacked.set(j * per + i, s.get(i));
        }
    }
    let (out, _) = qbatchnorm_rows(&stacked, epsilon)?;
    Ok((0..batch.len())
        .map(|j| {
            let items: Vec<Quaternion> = (0..per).map(|i| out.get(j * per + i)).collect();
            QTensor::from_quaternions(first.shape().to_vec(), &items).expect("shape")
        })
        .collect())
}

// --------------------------------------------------------------------------
// Norm-argmax pooling
// --------------------------------------------------------------------------

/// True if `a` wins against `b`: larger norm, then larger `(x, y, z, w)`.
#[inline]
pub(crate) fn beats(a: Quaternion, b: Quaternion) -> bool {
    let (na, nb) = (a.norm_sqr(), b.norm_sqr());
    na > nb || (na == nb && a.tie_key() > b.tie_key())
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Pools `axis` away, keeping at each position the element with the largest
/// norm. Returns the pooled tensor and the flat input index of each winner.
pub fn pool_axis(f: &QTensor, axis: usize) -> Result<(QTensor, Vec<usize>)> {
    if axis >= f.shape().len() {
        return Err(invalid("pool_axis", format!("axis {axis} out of range for {:?}", f.shape())));
    }
    let (outer, len, inner) = axis_split(f.shape(), axis);
    if len == 0 {
        return Err(Error::EmptyInput { op: "qmaxpool" });
    }
    let mut shape = f.shape().to_vec();
    shape.remove(axis);
    let mut out = QTensor::zeros(shape);
    let mut winners = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let mut best = o * len * inner + i;
            for k in 1..len {
                let idx = (o * len + k) * inner + i;
                if beats(f.get(idx), f.get(best)) {
                    best = idx;
                }
            }
            out.set(o * inner + i, f.get(best));
            winners.push(best);
        }
    }
    Ok((out, winners))
}

pub fn pool_axis_backward(input_shape: &[usize], winners: &[usize], grad_out: &QTensor) -> QTensor {
    let mut grad = QTensor::zeros(input_shape.to_vec());
    for (o, &w) in winners.iter().enumerate() {
        grad.set(w, grad.get(w) + grad_out.get(o));
    }
    grad
}

/// Smallest gap between the winning norm and the runner-up over all pooled
/// positions; `∞` when every pool has a single candidate.
pub fn pool_axis_norm_gap(f: &QTensor, axis: usize) -> f64 {
    let (outer, len, inner) = axis_split(f.shape(), axis);
    let mut gap = f64::INFINITY;
    for o in 0..outer {
        for i in 0..inner {
            let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for k in 0..len {
                let n = f.get((o * len + k) * inner + i).norm();
                if n > first {
                    second = first;
                    first = n;
                } else if n > second {
                    second = n;
                }
            }
            if len > 1 {
                gap = gap.min(first - second);
            }
        }
    }
    gap
}

/// `f_v̂` with `v̂ = argmax_v ‖f_v‖` over every element of `f`.
pub fn qmaxpool(f: &QTensor) -> Result<Quaternion> {
    if f.is_empty() {
        return Err(Error::EmptyInput { op: "qmaxpool" });
    }
    let flat = f.clone().reshape(vec![f.len()])?;
    Ok(pool_axis(&flat, 0)?.0.get(0))
}

/// Per-channel pooling of a `D × K` tensor over its `K` columns.
pub fn qmaxpool_elementwise(f: &QTensor) -> Result<QTensor> {
    if f.shape().len() != 2 {
        return Err(invalid("qmaxpool_elementwise", format!("expected D×K, got {:?}", f.shape())));
    }
    if f.is_empty() {
        return Err(Error::EmptyInput { op: "qmaxpool_elementwise" });
    }
    Ok(pool_axis(f, 1)?.0)
}

// --------------------------------------------------------------------------
// Dropout
// --------------------------------------------------------------------------

/// Keep-mask with one entry per quaternion element.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<bool>> {
    check_dropout_p(p)?;
    Ok((0..len).map(|_| rng.random::<f64>() >= p).collect())
}

/// Zeroes every component of dropped elements; survivors are multiplied by
/// `1/(1−p)` when `scale` is set.
pub fn qdropout_with_mask(f: &QTensor, keep: &[bool], p: f64, scale: bool) -> Result<QTensor> {
    check_dropout_p(p)?;
    if keep.len() != f.len() {
        return Err(Error::ShapeMismatch {
            op: "qdropout",
            left: f.shape().to_vec(),
            right: vec![keep.len()],
        });
    }
    let s = if scale { 1.0 / (1.0 - p) } else { 1.0 };
    let mut out = f.clone();
    for (i, &k) in keep.iter().enumerate() {
        out.set(i, if k { f.get(i).scale(s) } else { Quaternion::ZERO });
    }
    Ok(out)
}

pub fn qdropout<R: Rng + ?Sized>(f: &QTensor, p: f64, training: bool, rng: &mut R) -> Result<QTensor> {
    check_dropout_p(p)?;
    if !training || p == 0.0 {
        return Ok(f.clone());
    }
    let keep = dropout_mask(f.len(), p, rng)?;
    qdropout_with_mask(f, &keep, p, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quaternion as Q;
    use crate::rotation::{random_rotor, rotate_tensor, Rotor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_q(rng: &mut ChaCha8Rng, shape: Vec<usize>, pure: bool) -> QTensor {
        let n: usize = shape.iter().product();
        let items: Vec<Q> = (0..n)
            .map(|_| {
                let w = if pure { 0.0 } else { rng.random_range(-1.0..1.0) };
                Q::new(w, rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))
            })
            .collect();
        QTensor::from_quaternions(shape, &items).unwrap()
    }

    fn rand_r(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> RTensor {
        let n: usize = shape.iter().product();
        RTensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn equiv_err(op: impl Fn(&QTensor) -> QTensor, f: &QTensor, r: &Rotor) -> f64 {
        let lhs = op(&rotate_tensor(r, f));
        let rhs = rotate_tensor(r, &op(f));
        lhs.max_relative_error(&rhs).unwrap()
    }

    #[test]
    fn conv_examples() {
        let f = QTensor::from_vec(&[Q::I, Q::J]);
        let eye = RTensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(qconv(&eye, &f).unwrap(), f);
        let sum = RTensor::matrix(&[vec![1.0, 1.0]]);
        assert_eq!(qconv(&sum, &f).unwrap().get(0), Q::pure(1.0, 1.0, 0.0));
        let bad = RTensor::matrix(&[vec![1.0, 1.0, 1.0]]);
        assert!(matches!(qconv(&bad, &f), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn conv_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let w = rand_r(&mut rng, vec![3, 4]);
            let f = rand_q(&mut rng, vec![5, 4], false);
            let g = rand_q(&mut rng, vec![5, 4], false);
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let lhs = qconv(&w, &f.scale(a).add(&g.scale(b)).unwrap()).unwrap();
            let rhs = qconv(&w, &f).unwrap().scale(a).add(&qconv(&w, &g).unwrap().scale(b)).unwrap();
            assert!(lhs.max_relative_error(&rhs).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn relu_examples() {
        let mode = ReluMode::Constant { c: 1.0 };
        let small = QTensor::from_vec(&[Q::pure(0.5, 0.0, 0.0)]);
        assert_eq!(qrelu(&small, mode).unwrap().get(0), Q::pure(0.25, 0.0, 0.0));
        let big = QTensor::from_vec(&[Q::pure(0.0, 2.0, 0.0)]);
        assert_eq!(qrelu(&big, mode).unwrap().get(0), Q::pure(0.0, 2.0, 0.0));
        assert!(qrelu(&big, ReluMode::Constant { c: 0.0 }).is_err());
        assert!(qrelu(&big, ReluMode::Constant { c: -1.0 }).is_err());
        assert!(qrelu(&QTensor::zeros(vec![0]), ReluMode::BatchMean).is_err());

        // c = mean norm = 1.25 → 0.5i ↦ 0.2i, 2j unchanged
        let mixed = QTensor::from_vec(&[Q::pure(0.5, 0.0, 0.0), Q::pure(0.0, 2.0, 0.0)]);
        let out = qrelu(&mixed, ReluMode::BatchMean).unwrap();
        assert!((out.get(0).x - 0.2).abs() < 1e-15);
        assert_eq!(out.get(1), Q::pure(0.0, 2.0, 0.0));
        let zeros = QTensor::zeros(vec![3]);
        assert_eq!(qrelu(&zeros, ReluMode::BatchMean).unwrap(), zeros);
    }

    #[test]
    fn relu_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = 1.3;
        let f = rand_q(&mut rng, vec![200], false);
        let out = qrelu(&f, ReluMode::Constant { c }).unwrap();
        for i in 0..f.len() {
            let (n_in, n_out) = (f.get(i).norm(), out.get(i).norm());
            assert!(n_out <= n_in + 1e-15);
            if n_in < c {
                assert!(n_out <= n_in * n_in / c + 1e-15);
            }
        }
    }

    #[test]
    fn batchnorm_examples() {
        let out = qbatchnorm(
            &[QTensor::from_vec(&[Q::pure(2.0, 0.0, 0.0)]), QTensor::from_vec(&[Q::ZERO])],
            1e-300,
        )
        .unwrap();
        assert!((out[0].get(0).x - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(out[1].get(0), Q::ZERO);

        let single = qbatchnorm(&[QTensor::from_vec(&[Q::I])], 1e-5).unwrap();
        assert!((single[0].get(0).x - 1.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-16);
        assert!(qbatchnorm(&[], 1e-5).is_err());
        assert!(qbatchnorm(&[QTensor::zeros(vec![1]), QTensor::zeros(vec![2])], 1e-5).is_err());
    }

    #[test]
    fn batchnorm_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-3;
        let f = rand_q(&mut rng, vec![9, 4], true);
        let (out, _) = qbatchnorm_rows(&f, eps).unwrap();
        for v in 0..4 {
            let m_in: f64 = (0..9).map(|r| f.get(r * 4 + v).norm_sqr()).sum::<f64>() / 9.0;
            let m_out: f64 = (0..9).map(|r| out.get(r * 4 + v).norm_sqr()).sum::<f64>() / 9.0;
            assert!((m_out - m_in / (m_in + eps)).abs() <= 1e-10);
            assert!(m_out <= 1.0);
        }
    }

    #[test]
    fn maxpool_examples() {
        let f = QTensor::from_vec(&[Q::pure(3.0, 0.0, 0.0), Q::pure(0.0, 4.0, 0.0), Q::ZERO]);
        assert_eq!(qmaxpool(&f).unwrap(), Q::pure(0.0, 4.0, 0.0));
        assert_eq!(qmaxpool(&QTensor::from_vec(&[Q::pure(0.0, 0.0, 5.0)])).unwrap(), Q::pure(0.0, 0.0, 5.0));
        assert!(qmaxpool(&QTensor::zeros(vec![0])).is_err());

        let row = QTensor::from_quaternions(vec![1, 3], &[Q::I, Q::pure(0.0, 2.0, 0.0), Q::ZERO]).unwrap();
        assert_eq!(qmaxpool_elementwise(&row).unwrap().get(0), Q::pure(0.0, 2.0, 0.0));
        let two = QTensor::from_quaternions(
            vec![2, 2],
            &[Q::pure(3.0, 0.0, 0.0), Q::K, Q::J, Q::pure(0.0, 0.0, 5.0)],
        )
        .unwrap();
        let pooled = qmaxpool_elementwise(&two).unwrap();
        assert_eq!(pooled.get(0), Q::pure(3.0, 0.0, 0.0));
        assert_eq!(pooled.get(1), Q::pure(0.0, 0.0, 5.0));
        assert!(qmaxpool_elementwise(&QTensor::zeros(vec![2, 0])).is_err());
    }

    #[test]
    fn maxpool_tie_break_is_order_independent() {
        let a = Q::pure(1.0, 0.0, 0.0);
        let b = Q::pure(0.0, 1.0, 0.0);
        let fwd = qmaxpool(&QTensor::from_vec(&[a, b])).unwrap();
        let rev = qmaxpool(&QTensor::from_vec(&[b, a])).unwrap();
        assert_eq!(fwd, rev);
        assert_eq!(fwd, a);
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = rand_q(&mut rng, vec![10], false);
        assert_eq!(qdropout(&f, 0.5, false, &mut rng).unwrap(), f);
        assert_eq!(qdropout(&f, 0.0, true, &mut rng).unwrap(), f);
        assert!(qdropout(&f, 1.0, true, &mut rng).is_err());
        assert!(qdropout(&f, -0.1, true, &mut rng).is_err());

        let out = qdropout(&f, 0.5, true, &mut rng).unwrap();
        for i in 0..f.len() {
            let o = out.get(i);
            assert!(o == Q::ZERO || (o - f.get(i).scale(2.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn layers_commute_with_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let r = random_rotor(&mut rng);
            let f = rand_q(&mut rng, vec![6, 5], true);
            let w = rand_r(&mut rng, vec![4, 5]);
            assert!(equiv_err(|x| qconv(&w, x).unwrap(), &f, &r) <= 1e-11);
            for mode in [ReluMode::Constant { c: 1.0 }, ReluMode::BatchMean] {
                assert!(equiv_err(|x| qrelu(x, mode).unwrap(), &f, &r) <= 1e-11);
            }
            assert!(equiv_err(|x| qbatchnorm_rows(x, 1e-5).unwrap().0, &f, &r) <= 1e-11);
            let keep = dropout_mask(f.len(), 0.3, &mut rng).unwrap();
            assert!(equiv_err(|x| qdropout_with_mask(x, &keep, 0.3, true).unwrap(), &f, &r) <= 1e-11);
            if pool_axis_norm_gap(&f, 1) > 1e-9 {
                assert!(equiv_err(|x| qmaxpool_elementwise(x).unwrap(), &f, &r) <= 1e-11);
            }
        }
    }

    // ---- finite-difference checks -------------------------------------------

    const H: f64 = 1e-4;

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / (a.abs() + n.abs() + 1e-12)
    }

    /// Scalar probe `L = Σ_i ⟨g_i, out_i⟩`.
    fn probe(out: &QTensor, g: &QTensor) -> f64 {
        (0..out.len()).map(|i| out.get(i).dot(&g.get(i))).sum()
    }

    fn check_input_grad(f: &QTensor, g: &QTensor, op: impl Fn(&QTensor) -> QTensor, analytic: &QTensor) {
        for i in 0..f.len() {
            for k in 0..4 {
                let mut plus = f.clone();
                let mut minus = f.clone();
                let mut qp = plus.get(i).to_array();
                let mut qm = minus.get(i).to_array();
                qp[k] += H;
                qm[k] -= H;
                plus.set(i, Q::new(qp[0], qp[1], qp[2], qp[3]));
                minus.set(i, Q::new(qm[0], qm[1], qm[2], qm[3]));
                let num = (probe(&op(&plus), g) - probe(&op(&minus), g)) / (2.0 * H);
                let ana = analytic.get(i).to_array()[k];
                assert!(rel_err(ana, num) <= 1e-4, "elem {i} comp {k}: analytic {ana} numeric {num}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = rand_r(&mut rng, vec![3, 4]);
        let f = rand_q(&mut rng, vec![2, 4], false);
        let g = rand_q(&mut rng, vec![2, 3], false);
        let (gw, gf) = qconv_backward(&w, &f, &g).unwrap();
        check_input_grad(&f, &g, |x| qconv(&w, x).unwrap(), &gf);
        for j in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp.data_mut()[j] += H;
            wm.data_mut()[j] -= H;
            let num = (probe(&qconv(&wp, &f).unwrap(), &g) - probe(&qconv(&wm, &f).unwrap(), &g)) / (2.0 * H);
            assert!(rel_err(gw.data()[j], num) <= 1e-4);
        }
    }

    #[test]
    fn relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for mode in [ReluMode::Constant { c: 1.0 }, ReluMode::BatchMean] {
            let f = rand_q(&mut rng, vec![3, 5], false);
            let g = rand_q(&mut rng, vec![3, 5], false);
            let gf = qrelu_backward(&f, mode, &g).unwrap();
            check_input_grad(&f, &g, |x| qrelu(x, mode).unwrap(), &gf);
        }
    }

    #[test]
    fn batchnorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = rand_q(&mut rng, vec![4, 3], false);
        let g = rand_q(&mut rng, vec![4, 3], false);
        let (_, inv) = qbatchnorm_rows(&f, 1e-5).unwrap();
        let gf = qbatchnorm_rows_backward(&f, &inv, &g).unwrap();
        check_input_grad(&f, &g, |x| qbatchnorm_rows(x, 1e-5).unwrap().0, &gf);
    }

    #[test]
    fn pool_and_dropout_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let f = rand_q(&mut rng, vec![3, 4, 2], false);
        let g = rand_q(&mut rng, vec![3, 2], false);
        let (_, winners) = pool_axis(&f, 1).unwrap();
        let gf = pool_axis_backward(f.shape(), &winners, &g);
        check_input_grad(&f, &g, |x| pool_axis(x, 1).unwrap().0, &gf);

        let keep = dropout_mask(f.len(), 0.4, &mut rng).unwrap();
        let g = rand_q(&mut rng, vec![3, 4, 2], false);
        let ones = QTensor::from_quaternions(vec![f.len()], &vec![Q::new(1.0, 1.0, 1.0, 1.0); f.len()]).unwrap();
        let mask_out = qdropout_with_mask(&ones, &keep, 0.4, true).unwrap();
        let gf = QTensor::from_quaternions(
            f.shape().to_vec(),
            &(0..f.len()).map(|i| Q::new(
                g.get(i).w * mask_out.get(i).w,
                g.get(i).x * mask_out.get(i).x,
                g.get(i).y * mask_out.get(i).y,
                g.get(i).z * mask_out.get(i).z,
            )).collect::<Vec<_>>(),
        )
        .unwrap();
        check_input_grad(&f, &g, |x| qdropout_with_mask(x, &keep, 0.4, true).unwrap(), &gf);
    }
}
