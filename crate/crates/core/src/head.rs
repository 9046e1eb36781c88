//! Quaternion-to-real bridge and the real-valued task head.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quat::Quaternion;
use crate::tensor::{QTensor, RTensor};

/// Element-wise squared norm. Rotations preserve norms, so the result is
/// rotation-invariant.
pub fn quaternion_to_real(f: &QTensor) -> RTensor {
    RTensor::new(f.shape().to_vec(), f.iter().map(|q| q.norm_sqr()).collect()).expect("same element count")
}

pub fn quaternion_to_real_backward(f: &QTensor, grad_out: &RTensor) -> Result<QTensor> {
    if f.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "quaternion_to_real_backward",
            left: f.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let items: Vec<Quaternion> = f
        .iter()
        .zip(grad_out.data())
        .map(|(q, &g)| q.scale(2.0 * g))
        .collect();
    QTensor::from_quaternions(f.shape().to_vec(), &items)
}

/// Dense layer `y = W x + b` with `W: out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: RTensor,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: RTensor, bias: Vec<f64>) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 || s[0] != bias.len() {
            return Err(Error::ShapeMismatch {
                op: "DenseLayer::new",
                left: s.to_vec(),
                right: vec![bias.len()],
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Applies a dense layer to every row of `x` (last axis = features).
pub fn real_linear(layer: &DenseLayer, x: &RTensor) -> Result<RTensor> {
    let (d_in, d_out) = (layer.in_features(), layer.out_features());
    if x.shape().last() != Some(&d_in) {
        return Err(Error::ShapeMismatch {
            op: "real_linear",
            left: layer.weight.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let rows = x.len() / d_in.max(1);
    let mut out = crate::kernels::mix_channels(x.data(), rows, d_in, layer.weight.data(), d_out);
    for r in 0..rows {
        for (o, b) in out[r * d_out..(r + 1) * d_out].iter_mut().zip(&layer.bias) {
            *o += b;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    RTensor::new(shape, out)
}

/// Returns `(dW, db, dx)`.
pub fn real_linear_backward(layer: &DenseLayer, x: &RTensor, grad_out: &RTensor) -> Result<(RTensor, Vec<f64>, RTensor)> {
    let (d_in, d_out) = (layer.in_features(), layer.out_features());
    let rows = x.len() / d_in.max(1);
    if grad_out.len() != rows * d_out {
        return Err(Error::ShapeMismatch {
            op: "real_linear_backward",
            left: x.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let mut dw = RTensor::zeros(vec![d_out, d_in]);
    let dx = crate::kernels::mix_channels_backward(
        x.data(),
        grad_out.data(),
        rows,
        d_in,
        layer.weight.data(),
        d_out,
        dw.data_mut(),
    );
    let mut db = vec![0.0; d_out];
    for r in 0..rows {
        for (acc, g) in db.iter_mut().zip(&grad_out.data()[r * d_out..(r + 1) * d_out]) {
            *acc += g;
        }
    }
    Ok((dw, db, RTensor::new(x.shape().to_vec(), dx)?))
}

/// Stack of dense layers with ReLU between consecutive layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskHeadParams {
    pub layers: Vec<DenseLayer>,
}

impl TaskHeadParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_features() != pair[1].in_features() {
                return Err(invalid(
                    "TaskHeadParams",
                    format!(
                        "layer {i} emits {} features but layer {} expects {}",
                        pair[0].out_features(),
                        i + 1,
                        pair[1].in_features()
                    ),
                ));
            }
        }
        Ok(Self { layers })
    }

    pub fn forward(&self, x: &RTensor) -> Result<RTensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = real_linear(layer, &h)?;
            if i + 1 < self.layers.len() {
                h = h.map(|v| v.max(0.0));
            }
        }
        Ok(h)
    }
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient
/// `softmax − onehot`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(invalid(
            "softmax_cross_entropy",
            format!("label {label} out of range for {} classes", logits.len()),
        ));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| (z - m).exp()).sum();
    let lse = m + sum.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok(((lse - logits[label]).max(0.0), grad))
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{random_rotor, rotate_tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bridge_examples() {
        let f = QTensor::from_vec(&[Quaternion::pure(1.0, 2.0, 2.0), Quaternion::ZERO]);
        assert_eq!(quaternion_to_real(&f).data(), &[9.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let items: Vec<Quaternion> = (0..6)
                .map(|_| Quaternion::pure(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
                .collect();
            let f = QTensor::from_quaternions(vec![2, 3], &items).unwrap();
            let r = random_rotor(&mut rng);
            let a = quaternion_to_real(&f);
            let b = quaternion_to_real(&rotate_tensor(&r, &f));
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() / (1.0 + y.abs()) <= 1e-11);
            }
        }
    }

    #[test]
    fn linear_examples() {
        let x = RTensor::matrix(&[vec![1.0, -2.0], vec![0.5, 4.0]]);
        let id = DenseLayer::new(RTensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![0.0, 0.0]).unwrap();
        assert_eq!(real_linear(&id, &x).unwrap(), x);
        let zero = DenseLayer::new(RTensor::zeros(vec![3, 2]), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(real_linear(&zero, &x).unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(real_linear(&zero, &RTensor::zeros(vec![2, 3])).is_err());
        assert!(DenseLayer::new(RTensor::zeros(vec![3, 2]), vec![0.0]).is_err());
    }

    #[test]
    fn linear_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut u = || rng.random_range(-1.0..1.0);
        let layer = DenseLayer::new(
            RTensor::new(vec![3, 4], (0..12).map(|_| u()).collect()).unwrap(),
            (0..3).map(|_| u()).collect(),
        )
        .unwrap();
        let x = RTensor::new(vec![2, 4], (0..8).map(|_| u()).collect()).unwrap();
        let probe = RTensor::new(vec![2, 3], (0..6).map(|_| u()).collect()).unwrap();
        let loss = |l: &DenseLayer, x: &RTensor| -> f64 {
            real_linear(l, x).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let (dw, db, dx) = real_linear_backward(&layer, &x, &probe).unwrap();
        let h = 1e-4;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs() + 1e-12);
        for i in 0..12 {
            let (mut p, mut m) = (layer.clone(), layer.clone());
            p.weight.data_mut()[i] += h;
            m.weight.data_mut()[i] -= h;
            assert!(rel(dw.data()[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) <= 1e-4);
        }
        for i in 0..3 {
            let (mut p, mut m) = (layer.clone(), layer.clone());
            p.bias[i] += h;
            m.bias[i] -= h;
            assert!(rel(db[i], (loss(&p, &x) - loss(&m, &x)) / (2.0 * h)) <= 1e-4);
        }
        for i in 0..8 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            assert!(rel(dx.data()[i], (loss(&layer, &p) - loss(&layer, &m)) / (2.0 * h)) <= 1e-4);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = softmax_cross_entropy(&[0.3, 0.3], 1).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((grad[0] - 0.5).abs() < 1e-15 && (grad[1] + 0.5).abs() < 1e-15);
        let (loss, _) = softmax_cross_entropy(&[0.0, 800.0], 1).unwrap();
        assert_eq!(loss, 0.0);
        assert!(softmax_cross_entropy(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn head_checks_dimensions() {
        let a = DenseLayer::new(RTensor::zeros(vec![4, 2]), vec![0.0; 4]).unwrap();
        let b = DenseLayer::new(RTensor::zeros(vec![3, 5]), vec![0.0; 3]).unwrap();
        assert!(TaskHeadParams::new(vec![a.clone(), b]).is_err());
        let c = DenseLayer::new(RTensor::zeros(vec![3, 4]), vec![1.0, 2.0, 3.0]).unwrap();
        let head = TaskHeadParams::new(vec![a, c]).unwrap();
        assert_eq!(head.forward(&RTensor::zeros(vec![1, 2])).unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    proptest! {
        #[test]
        fn cross_entropy_properties(logits in proptest::collection::vec(-30.0f64..30.0, 2..8), pick in 0usize..8) {
            let label = pick % logits.len();
            let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
            let h = 1e-6;
            for i in 0..logits.len() {
                let mut p = logits.clone();
                let mut m = logits.clone();
                p[i] += h;
                m[i] -= h;
                let num = (softmax_cross_entropy(&p, label).unwrap().0 - softmax_cross_entropy(&m, label).unwrap().0) / (2.0 * h);
                prop_assert!((num - grad[i]).abs() <= 1e-6);
            }
        }
    }
}
