use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{Network, NetworkOutput, SampleGradient, Target};
use super::spec::Domain;
use crate::error::{invalid, Error, Result};
use crate::geometry::{dist_sq, PointCloud, Vec3};
use crate::head::argmax;

/// Symmetric Chamfer distance
/// `½ (mean_p min_t ‖p − t‖² + mean_t min_p ‖p − t‖²)` and its gradient
/// with respect to every predicted point.
pub fn chamfer_loss(pred: &PointCloud, target: &PointCloud) -> Result<(f64, Vec<Vec3>)> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput { op: "chamfer_loss" });
    }
    let p = pred.coords();
    let t = target.coords();
    let nearest = |from: &Vec3, to: &[Vec3]| -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, q) in to.iter().enumerate() {
            let d = dist_sq(from, q);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    let (np, nt) = (p.len() as f64, t.len() as f64);
    let mut grad = vec![[0.0; 3]; p.len()];
    let mut forward = 0.0;
    for (i, pi) in p.iter().enumerate() {
        let (j, d) = nearest(pi, &t);
        forward += d;
        for k in 0..3 {
            grad[i][k] += (pi[k] - t[j][k]) / np;
        }
    }
    let mut backward = 0.0;
    for tj in &t {
        let (i, d) = nearest(tj, &p);
        backward += d;
        for k in 0..3 {
            grad[i][k] += (p[i][k] - tj[k]) / nt;
        }
    }
    Ok((0.5 * (forward / np + backward / nt), grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc: Option<f64>,
}

fn target_of<'a>(net: &Network, cloud: &'a PointCloud) -> Result<Target<'a>> {
    match net.output_domain() {
        Domain::Real => cloud
            .label()
            .map(Target::Label)
            .ok_or_else(|| invalid("train", "classification samples need labels")),
        Domain::Quaternion => Ok(Target::Cloud(cloud)),
    }
}

fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mini-batch SGD with momentum. Classification networks minimize
/// cross-entropy against labels; quaternion-output networks reconstruct their
/// input under the Chamfer loss. Per-sample gradients run in parallel and are
/// reduced in sample order, so results depend only on the seed.
pub fn train(net: &mut Network, data: &[PointCloud], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(invalid("train", "need batch_size ≥ 1, lr > 0 and 0 ≤ momentum < 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.value.len()]).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        let mut counted = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &Network = net;
            let results: Vec<SampleGradient> = batch
                .par_iter()
                .map(|&i| {
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, epoch, i));
                    frozen.sample_gradient(&data[i], target_of(frozen, &data[i])?, Some(&mut drop_rng))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            for (k, v) in velocity.iter_mut().enumerate() {
                for (e, ve) in v.iter_mut().enumerate() {
                    let g: f64 = results.iter().map(|r| r.grads[k].data()[e]).sum::<f64>() * scale;
                    *ve = cfg.momentum * *ve + g;
                }
            }
            for (p, v) in net.params_mut().iter_mut().zip(&velocity) {
                for (w, ve) in p.value.data_mut().iter_mut().zip(v) {
                    *w -= cfg.lr * ve;
                }
            }
            for r in &results {
                total_loss += r.loss;
                if let Some(c) = r.correct {
                    counted += 1;
                    correct += c as usize;
                }
            }
        }
        log.push(EpochLog {
            epoch,
            loss: total_loss / data.len() as f64,
            acc: (counted > 0).then(|| correct as f64 / counted as f64),
        });
    }
    Ok(log)
}

/// Predicted class of every cloud, evaluated in parallel.
pub fn predict(net: &Network, data: &[PointCloud]) -> Result<Vec<usize>> {
    data.par_iter()
        .map(|c| match net.forward(c)? {
            NetworkOutput::Logits(z) => Ok(argmax(z.data())),
            NetworkOutput::Cloud(_) => Err(invalid("predict", "network has no classification output")),
        })
        .collect()
}

/// Fraction of labeled clouds classified correctly.
pub fn accuracy(net: &Network, data: &[PointCloud]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "accuracy" });
    }
    let pred = predict(net, data)?;
    let hits = pred
        .iter()
        .zip(data)
        .filter(|(p, c)| c.label() == Some(**p))
        .count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean Chamfer distance between each cloud and its reconstruction.
pub fn reconstruction_error(net: &Network, data: &[PointCloud]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "reconstruction_error" });
    }
    let losses: Vec<f64> = data
        .par_iter()
        .map(|c| match net.forward(c)? {
            NetworkOutput::Cloud(q) => Ok(chamfer_loss(&PointCloud::from_points(&q.to_points()), c)?.0),
            NetworkOutput::Logits(_) => Err(invalid("reconstruction_error", "network does not output clouds")),
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / data.len() as f64)
}
