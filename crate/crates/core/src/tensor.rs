//! Quaternion and real tensors.
//!
//! [`QTensor`] keeps the four quaternion components in separate contiguous
//! channels (structure of arrays). Every revised layer multiplies all four
//! channels by the same real weights, so kernels run once per channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quat::Quaternion;

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::ShapeMismatch {
                op: "RTensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows. Panics on ragged input.
    pub fn matrix(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "RTensor::reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element `[r, c]` of a 2-D tensor.
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// N-dimensional array of quaternions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTensor {
    shape: Vec<usize>,
    w: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl QTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            w: vec![0.0; n],
            x: vec![0.0; n],
            y: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    pub fn from_channels(shape: Vec<usize>, channels: [Vec<f64>; 4]) -> Result<Self> {
        let n = numel(&shape);
        if let Some(bad) = channels.iter().find(|c| c.len() != n) {
            return Err(Error::ShapeMismatch {
                op: "QTensor::from_channels",
                left: shape,
                right: vec![bad.len()],
            });
        }
        let [w, x, y, z] = channels;
        Ok(Self { shape, w, x, y, z })
    }

    pub fn from_quaternions(shape: Vec<usize>, items: &[Quaternion]) -> Result<Self> {
        if numel(&shape) != items.len() {
            return Err(Error::ShapeMismatch {
                op: "QTensor::from_quaternions",
                left: shape,
                right: vec![items.len()],
            });
        }
        let mut t = Self::zeros(shape);
        for (i, q) in items.iter().enumerate() {
            t.set(i, *q);
        }
        Ok(t)
    }

    /// 1-D tensor of the given quaternions.
    pub fn from_vec(items: &[Quaternion]) -> Self {
        Self::from_quaternions(vec![items.len()], items).expect("length matches")
    }

    /// 1-D tensor of pure quaternions built from 3-D points.
    pub fn from_points(points: &[[f64; 3]]) -> Self {
        let n = points.len();
        Self {
            shape: vec![n],
            w: vec![0.0; n],
            x: points.iter().map(|p| p[0]).collect(),
            y: points.iter().map(|p| p[1]).collect(),
            z: points.iter().map(|p| p[2]).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Quaternion {
        Quaternion::new(self.w[i], self.x[i], self.y[i], self.z[i])
    }

    #[inline]
    pub fn set(&mut self, i: usize, q: Quaternion) {
        self.w[i] = q.w;
        self.x[i] = q.x;
        self.y[i] = q.y;
        self.z[i] = q.z;
    }

    #[inline]
    pub fn point(&self, i: usize) -> [f64; 3] {
        [self.x[i], self.y[i], self.z[i]]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Quaternion> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    pub fn to_points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Channels in `(w, x, y, z)` order.
    pub fn channels(&self) -> [&[f64]; 4] {
        [&self.w, &self.x, &self.y, &self.z]
    }

    pub fn channels_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w, &mut self.x, &mut self.y, &mut self.z]
    }

    pub fn into_channels(self) -> (Vec<usize>, [Vec<f64>; 4]) {
        (self.shape, [self.w, self.x, self.y, self.z])
    }

    pub fn is_pure(&self) -> bool {
        self.w.iter().all(|&v| v == 0.0)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.len() {
            return Err(Error::ShapeMismatch {
                op: "QTensor::reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(Quaternion) -> Quaternion) -> Self {
        let mut out = Self::zeros(self.shape.clone());
        for i in 0..self.len() {
            out.set(i, f(self.get(i)));
        }
        out
    }

    pub fn zip(
        &self,
        other: &Self,
        f: impl Fn(Quaternion, Quaternion) -> Quaternion,
    ) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "QTensor::zip",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = Self::zeros(self.shape.clone());
        for i in 0..self.len() {
            out.set(i, f(self.get(i), other.get(i)));
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|q| q.scale(s))
    }

    pub fn conj(&self) -> Self {
        self.map(Quaternion::conj)
    }

    /// Element-wise norms, same shape.
    pub fn norms(&self) -> RTensor {
        RTensor {
            shape: self.shape.clone(),
            data: self.iter().map(|q| q.norm()).collect(),
        }
    }

    /// Largest element-wise distance `‖a_v − b_v‖ / (1 + ‖b_v‖)`.
    pub fn max_relative_error(&self, reference: &Self) -> Result<f64> {
        if self.shape != reference.shape {
            return Err(Error::ShapeMismatch {
                op: "QTensor::max_relative_error",
                left: self.shape.clone(),
                right: reference.shape.clone(),
            });
        }
        Ok((0..self.len())
            .map(|i| {
                let r = reference.get(i);
                (self.get(i) - r).norm() / (1.0 + r.norm())
            })
            .fold(0.0, f64::max))
    }

    /// Raw little-endian bytes of all four channels, for digests.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 32);
        for c in self.channels() {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}
