//! Unit-quaternion rotors and the sandwich product `R q R̄`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quat::{qconj, qmul, Quaternion};
use crate::tensor::QTensor;

/// Residual real parts at or below this magnitude are snapped to zero when a
/// pure quaternion is rotated.
pub const PURE_CLAMP: f64 = 1e-12;

/// A rotation of 3-space stored as the unit quaternion
/// `cos(θ/2) + sin(θ/2)(o₁i + o₂j + o₃k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotor {
    q: Quaternion,
    axis: [f64; 3],
    angle: f64,
}

impl Rotor {
    pub const IDENTITY: Self = Self {
        q: Quaternion::ONE,
        axis: [0.0, 0.0, 1.0],
        angle: 0.0,
    };

    pub fn from_axis_angle(axis: [f64; 3], theta: f64) -> Result<Self> {
        let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if !(len > 0.0) || !len.is_finite() {
            return Err(invalid("rotor_from_axis_angle", "axis must have nonzero finite length"));
        }
        if !theta.is_finite() {
            return Err(invalid("rotor_from_axis_angle", "angle must be finite"));
        }
        let o = [axis[0] / len, axis[1] / len, axis[2] / len];
        let angle = theta.rem_euclid(2.0 * std::f64::consts::PI);
        let (s, c) = (angle / 2.0).sin_cos();
        let q = Quaternion::new(c, s * o[0], s * o[1], s * o[2]);
        Ok(Self {
            q: normalize(q),
            axis: o,
            angle,
        })
    }

    /// Builds a rotor from any nonzero quaternion, normalizing it and recovering
    /// axis and angle.
    pub fn from_quaternion(q: Quaternion) -> Result<Self> {
        let n = q.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(invalid("Rotor::from_quaternion", "quaternion must be nonzero"));
        }
        let q = normalize(q);
        let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        let angle = 2.0 * s.atan2(q.w);
        let axis = if s > 0.0 {
            [q.x / s, q.y / s, q.z / s]
        } else {
            [0.0, 0.0, 1.0]
        };
        Ok(Self { q, axis, angle })
    }

    #[inline]
    pub fn quaternion(&self) -> Quaternion {
        self.q
    }

    pub fn axis(&self) -> [f64; 3] {
        self.axis
    }

    /// Angle in `[0, 2π)`.
    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn inverse(&self) -> Self {
        Self::from_quaternion(self.q.conj()).expect("unit quaternion")
    }

    /// The same rotation, represented by `−q`.
    pub fn antipode(&self) -> Self {
        Self::from_quaternion(-self.q).expect("unit quaternion")
    }

    /// Row-major 3×3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = self.q;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

fn normalize(q: Quaternion) -> Quaternion {
    q.scale(1.0 / q.norm())
}

pub fn rotor_from_axis_angle(axis: [f64; 3], theta: f64) -> Result<Rotor> {
    Rotor::from_axis_angle(axis, theta)
}

/// `R q R̄`. Pure inputs stay pure.
#[inline]
pub fn rotate(r: &Rotor, q: Quaternion) -> Quaternion {
    let mut out = qmul(qmul(r.q, q), qconj(r.q));
    if q.is_pure() && out.w.abs() <= PURE_CLAMP {
        out.w = 0.0;
    }
    out
}

pub fn rotate_point(r: &Rotor, p: [f64; 3]) -> [f64; 3] {
    rotate(r, Quaternion::from_vec3(p)).imag()
}

/// Element-wise sandwich product over a tensor.
pub fn rotate_tensor(r: &Rotor, t: &QTensor) -> QTensor {
    t.map(|q| rotate(r, q))
}

/// Rotor for "apply `r1`, then `r2`".
pub fn compose(r2: &Rotor, r1: &Rotor) -> Rotor {
    Rotor::from_quaternion(qmul(r2.q, r1.q)).expect("product of unit quaternions is nonzero")
}

/// Uniform random rotation: a normalized 4-D standard Gaussian sample.
pub fn random_rotor<R: Rng + ?Sized>(rng: &mut R) -> Rotor {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if q.norm() > 1e-8 {
            return Rotor::from_quaternion(q).expect("nonzero");
        }
    }
}
