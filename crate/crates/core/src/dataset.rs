//! Labeled point-cloud datasets: procedurally generated shapes or a directory
//! of cloud files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{centroid_fps, PointCloud, Vec3};
use crate::io::{load_cloud, CloudFormat};
use crate::rotation::random_rotor;

/// Synthetic shapes are drawn this many times denser than requested and
/// thinned with farthest point sampling, giving even surface coverage.
pub const OVERSAMPLE: usize = 8;

pub const SHAPE_CLASSES: [&str; 3] = ["sphere", "cube", "planes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetKind {
    SyntheticShapes,
    /// `root/{train,test}/<class>/<cloud files>`; classes are the sorted
    /// subdirectory names of `root/train`.
    FileDir { root: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub points: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    pub normalize: bool,
    /// Rotated copies stored per test cloud.
    pub test_rotations: usize,
    /// Standard deviation of the per-point Gaussian jitter.
    pub jitter: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::SyntheticShapes,
            classes: 3,
            points: 64,
            train: 300,
            test: 150,
            seed: 0,
            normalize: true,
            test_rotations: 10,
            jitter: 0.01,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.train == 0 || self.test == 0 {
            return Err(invalid("DatasetSpec", "classes, train and test counts must be at least 1"));
        }
        if self.points < 8 {
            return Err(invalid("DatasetSpec", format!("need at least 8 points, got {}", self.points)));
        }
        if matches!(self.kind, DatasetKind::SyntheticShapes) && self.classes > SHAPE_CLASSES.len() {
            return Err(invalid("DatasetSpec", format!("synthetic data has {} classes", SHAPE_CLASSES.len())));
        }
        if !(self.jitter >= 0.0) {
            return Err(invalid("DatasetSpec", "jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
    /// `test_rotations` randomly rotated copies of every test cloud, grouped
    /// by source cloud.
    pub test_rotated: Vec<PointCloud>,
}

impl Dataset {
    /// SHA-256 prefix over labels and coordinate bits of every cloud.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        for c in self.train.iter().chain(&self.test).chain(&self.test_rotated) {
            bytes.extend_from_slice(&(c.label().unwrap_or(usize::MAX) as u64).to_le_bytes());
            bytes.extend_from_slice(&c.points().to_le_bytes());
        }
        crate::certify::digest(&bytes)
    }
}

/// Splits `total` over `classes` as evenly as possible, earlier classes first.
pub fn class_counts(total: usize, classes: usize) -> Vec<usize> {
    (0..classes).map(|c| total / classes + usize::from(c < total % classes)).collect()
}

fn labels(total: usize, classes: usize) -> Vec<usize> {
    class_counts(total, classes)
        .into_iter()
        .enumerate()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect()
}

fn sample_seed(seed: u64, split: u64, index: usize) -> u64 {
    crate::certify::trial_seed(seed ^ split.wrapping_mul(0xD1B5_4A32_D192_ED03), index)
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v: Vec3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|x| x / n);
        }
    }
}

/// One shape sample: sphere surface, cube surface or two parallel planes.
pub fn sample_shape(class: usize, points: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let gap = rng.random_range(0.2..0.5);
    let mut pts: Vec<Vec3> = (0..points)
        .map(|_| match class {
            0 => unit_vector(rng),
            1 => {
                let axis = rng.random_range(0..3);
                let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                p[axis] = side;
                p
            }
            _ => {
                let side = if rng.random::<bool>() { gap } else { -gap };
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), side]
            }
        })
        .collect();
    if jitter > 0.0 {
        let noise = Normal::new(0.0, jitter).expect("valid jitter");
        for p in &mut pts {
            for v in p.iter_mut() {
                *v += noise.sample(rng);
            }
        }
    }
    pts
}

/// Generates the three-shape dataset. Every sample draws from its own seed,
/// so generation parallelizes without changing the result.
pub fn synth_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    if !matches!(spec.kind, DatasetKind::SyntheticShapes) {
        return Err(invalid("synth_dataset", "spec kind is not synthetic-shapes"));
    }
    let make = |split: u64, labels: Vec<usize>| -> Vec<PointCloud> {
        labels
            .par_iter()
            .enumerate()
            .map(|(i, &label)| {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(spec.seed, split, i));
                let dense = PointCloud::from_points(&sample_shape(label, OVERSAMPLE * spec.points, spec.jitter, &mut rng));
                let cloud = dense.permuted(&centroid_fps(&dense, spec.points).expect("dense cloud is non-empty"));
                let cloud = if spec.normalize { cloud.normalized() } else { cloud };
                cloud.with_label(label)
            })
            .collect()
    };
    let train = make(1, labels(spec.train, spec.classes));
    let test = make(2, labels(spec.test, spec.classes));
    let test_rotated = rotated_copies(&test, spec.test_rotations, spec.seed);
    Ok(Dataset {
        class_names: SHAPE_CLASSES[..spec.classes].iter().map(|s| s.to_string()).collect(),
        train,
        test,
        test_rotated,
    })
}

/// `copies` uniformly random rotations of every cloud.
pub fn rotated_copies(clouds: &[PointCloud], copies: usize, seed: u64) -> Vec<PointCloud> {
    clouds
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, 3, i));
            (0..copies).map(move |_| c.rotated(&random_rotor(&mut rng))).collect::<Vec<_>>()
        })
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn load_split(root: &Path, split: &str, classes: &[String], spec: &DatasetSpec) -> Result<Vec<PointCloud>> {
    let mut out = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(split).join(class);
        if !dir.is_dir() {
            continue;
        }
        for path in sorted_entries(&dir)? {
            let Some(format) = CloudFormat::from_path(&path) else {
                continue;
            };
            let cloud = load_cloud(&path, format, false)?;
            if cloud.len() < spec.points {
                return Err(invalid(
                    "load_dataset",
                    format!("{} has {} points, need {}", path.display(), cloud.len(), spec.points),
                ));
            }
            let cloud = if cloud.len() > spec.points {
                cloud.permuted(&centroid_fps(&cloud, spec.points)?)
            } else {
                cloud
            };
            let cloud = if spec.normalize { cloud.normalized() } else { cloud };
            out.push(cloud.with_label(label));
        }
    }
    Ok(out)
}

/// Loads a file-dir dataset, subsampling larger clouds with centroid FPS.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = match &spec.kind {
        DatasetKind::FileDir { root } => root,
        DatasetKind::SyntheticShapes => return synth_dataset(spec),
    };
    let classes: Vec<String> = sorted_entries(&root.join("train"))?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(str::to_string))
        .collect();
    if classes.is_empty() {
        return Err(Error::EmptyInput { op: "load_dataset" });
    }
    let train = load_split(root, "train", &classes, spec)?;
    let test = load_split(root, "test", &classes, spec)?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyInput { op: "load_dataset" });
    }
    let test_rotated = rotated_copies(&test, spec.test_rotations, spec.seed);
    Ok(Dataset {
        class_names: classes,
        train,
        test,
        test_rotated,
    })
}
