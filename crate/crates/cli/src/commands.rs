use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqnn::certify::{
    certify_geometry_permutation, certify_layer_equivariance, certify_network_equivariance, certify_network_permutation,
    certify_output_invariance, gradcheck, random_cloud, random_pure, standard_layer_suite, CertReport, GeometryOp,
    GradScope, GRAD_STEP, GRAD_TOL, LAYER_TOL, NETWORK_TOL, PERMUTATION_TOL,
};
use reqnn::dataset::{load_dataset, DatasetKind, DatasetSpec};
use reqnn::experiment::{feature_rotation, train_autoencoder, AutoencoderProtocol, DEMO_ROTATIONS};
use reqnn::geometry::{self, centroid_fps, BallQuery, FpsSeed, PointCloud};
use reqnn::io::{format_cloud, load_cloud, CloudFormat};
use reqnn::layers::{self, ReluMode};
use reqnn::network::{
    accuracy, count_complexity, load_checkpoint, preset, reconstruction_error, save_checkpoint, train, Domain, LayerSpec,
    Network, NetworkSpec, Scale, TrainConfig, Variant, PRESETS,
};
use reqnn::{rotor_from_axis_angle, Error, RTensor, Result};
use serde::Serialize;
use serde_json::json;

use crate::{Command, Common, DataArgs, ScaleArg, Status, Suite, VariantArg};

pub fn run(command: Command) -> Result<Status> {
    match command {
        Command::Certify { common, suite } => certify(&common, suite),
        Command::Train {
            common,
            data,
            epochs,
            lr,
            momentum,
            batch_size,
            variant,
        } => {
            let cfg = TrainConfig {
                epochs,
                lr,
                momentum,
                batch_size,
                seed: common.seed,
            };
            train_cmd(&common, &data, &cfg, variant)
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            variant,
        } => eval(&common, &data, checkpoint.as_deref(), variant),
        Command::Reconstruct {
            common,
            axis,
            angle,
            checkpoint,
            input,
            format,
        } => reconstruct(&common, &axis, &angle, checkpoint.as_deref(), input.as_deref(), format),
        Command::Complexity { common, points } => complexity(&common, points),
        Command::Bench { common, points } => bench(&common, points),
    }
}

fn usage(reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op: "reqnn",
        reason: reason.into(),
    }
}

fn load_spec(common: &Common, default_preset: &str) -> Result<NetworkSpec> {
    let mut spec = match &common.spec {
        Some(path) => NetworkSpec::from_json(&fs::read_to_string(path)?)?,
        None => {
            let scale = match common.scale {
                ScaleArg::Micro => Scale::Micro,
                ScaleArg::Tiny => Scale::Tiny,
            };
            preset(common.preset.as_deref().unwrap_or(default_preset), scale)?
        }
    };
    if common.fps_emit_centroid {
        spec.fps_seed = FpsSeed::CentroidEmitted;
    }
    spec.validate()?;
    Ok(spec)
}

fn variant(v: VariantArg) -> Variant {
    match v {
        VariantArg::Equivariant => Variant::Equivariant,
        VariantArg::Twin => Variant::Twin,
    }
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn dataset_spec(common: &Common, data: &DataArgs, points: usize) -> DatasetSpec {
    DatasetSpec {
        kind: match &data.data_dir {
            Some(root) => DatasetKind::FileDir { root: root.clone() },
            None => DatasetKind::SyntheticShapes,
        },
        points,
        train: data.train_size,
        test: data.test_size,
        seed: common.seed,
        test_rotations: data.rotations,
        ..DatasetSpec::default()
    }
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

fn certify(common: &Common, suite: Suite) -> Result<Status> {
    let spec = load_spec(common, "micro-pointnet-cls")?;
    let net = Network::build(spec.clone())?;
    let trials = common.trials.unwrap_or(100);
    let seed = common.seed;
    let tol = |default: f64| common.tol.unwrap_or(default);
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let pooled = spec.layers.iter().any(|l| matches!(l, LayerSpec::GlobalPool));
    let mut reports: Vec<CertReport> = Vec::new();
    let mut skipped: Vec<String> = Vec::new();

    if wants(Suite::Layers) {
        for case in standard_layer_suite(seed) {
            reports.push(certify_layer_equivariance(&case, trials, tol(LAYER_TOL), seed));
        }
    }
    if wants(Suite::Network) {
        reports.push(certify_network_equivariance(&net, trials, tol(NETWORK_TOL), seed)?);
    }
    if wants(Suite::Invariance) {
        if spec.bridge_index().is_some() {
            reports.push(certify_output_invariance(&net, trials, tol(NETWORK_TOL), seed)?);
        } else {
            skipped.push("output rotation invariance: network has no bridge".into());
        }
    }
    if wants(Suite::Permutation) {
        let n = spec.num_points;
        let m = (n / 4).max(1);
        let k = 8.min(n - 1).max(1);
        for op in [
            GeometryOp::Fps { m, seed: FpsSeed::Centroid },
            GeometryOp::BallQuery {
                m,
                radius: 0.4,
                k,
                rule: BallQuery::Revised,
            },
            GeometryOp::Knn { m, k },
            GeometryOp::KnnGraph { k },
        ] {
            reports.push(certify_geometry_permutation(op, n, trials, seed));
        }
        if pooled {
            reports.push(certify_network_permutation(&net, trials, tol(PERMUTATION_TOL), seed));
        } else {
            skipped.push("network permutation invariance: output is per point".into());
        }
    }
    if wants(Suite::Gradients) {
        if suite == Suite::Gradients || net.num_params() <= 500 {
            reports.push(gradcheck(&net, GRAD_STEP, tol(GRAD_TOL), seed, GradScope::All)?);
        } else {
            reports.push(gradcheck(&net, GRAD_STEP, tol(GRAD_TOL), seed, GradScope::Head)?);
            skipped.push(format!(
                "full gradient check: {} parameters (run --suite gradients or --scale tiny)",
                net.num_params()
            ));
        }
    }

    for r in &reports {
        println!("{}", r.summary());
    }
    for s in &skipped {
        println!("skipped {s}");
    }
    let passed = reports.iter().all(CertReport::passed);
    write_json(
        &common.out,
        "certify.json",
        &json!({
            "network": spec.name,
            "seed": seed,
            "verdict": if passed { "pass" } else { "fail" },
            "reports": reports,
            "skipped": skipped,
        }),
    )?;
    Ok(if passed { Status::Success } else { Status::PropertyFailure })
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

fn train_cmd(common: &Common, data: &DataArgs, cfg: &TrainConfig, v: VariantArg) -> Result<Status> {
    let mut spec = load_spec(common, "micro-pointnet-cls")?;
    if common.spec.is_none() {
        spec.seed = common.seed;
    }
    let ds_spec = dataset_spec(common, data, spec.num_points);
    let ds = load_dataset(&ds_spec)?;
    let mut net = Network::build_variant(spec.clone(), variant(v))?;
    let log = train(&mut net, &ds.train, cfg)?;

    fs::create_dir_all(&common.out)?;
    let mut jsonl = fs::File::create(common.out.join("train.jsonl"))?;
    for entry in &log {
        writeln!(jsonl, "{}", serde_json::to_string(entry)?)?;
    }
    save_checkpoint(&net, &common.out.join("checkpoint.rqnn"))?;
    fs::write(common.out.join("spec.json"), spec.to_json() + "\n")?;
    write_json(&common.out, "dataset.json", &ds_spec)?;
    if let Some(last) = log.last() {
        match last.acc {
            Some(acc) => println!("{}: epoch {} loss {:.4} train accuracy {:.3}", spec.name, last.epoch, last.loss, acc),
            None => println!("{}: epoch {} loss {:.4}", spec.name, last.epoch, last.loss),
        }
    }
    Ok(Status::Success)
}

fn eval(common: &Common, data: &DataArgs, checkpoint: Option<&Path>, v: VariantArg) -> Result<Status> {
    let mut spec = load_spec(common, "micro-pointnet-cls")?;
    if common.spec.is_none() {
        spec.seed = common.seed;
    }
    let ds = load_dataset(&dataset_spec(common, data, spec.num_points))?;
    let mut net = Network::build_variant(spec.clone(), variant(v))?;
    let default_ckpt = common.out.join("checkpoint.rqnn");
    load_checkpoint(&mut net, checkpoint.unwrap_or(&default_ckpt))?;
    let report = match net.output_domain() {
        Domain::Real => {
            let upright = accuracy(&net, &ds.test)?;
            let rotated = accuracy(&net, &ds.test_rotated)?;
            println!("{}: test accuracy {upright:.4}, rotated test accuracy {rotated:.4}", spec.name);
            json!({"network": spec.name, "test_accuracy": upright, "rotated_test_accuracy": rotated})
        }
        Domain::Quaternion => {
            let upright = reconstruction_error(&net, &ds.test)?;
            let rotated = reconstruction_error(&net, &ds.test_rotated)?;
            println!("{}: test Chamfer {upright:.5}, rotated test Chamfer {rotated:.5}", spec.name);
            json!({"network": spec.name, "test_chamfer": upright, "rotated_test_chamfer": rotated})
        }
    };
    write_json(&common.out, "eval.json", &report)?;
    Ok(Status::Success)
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

fn reconstruct(
    common: &Common,
    axes: &[[f64; 3]],
    angles: &[f64],
    checkpoint: Option<&Path>,
    input: Option<&Path>,
    format: CloudFormat,
) -> Result<Status> {
    if axes.len() != angles.len() {
        return Err(usage(format!("{} --axis values but {} --angle values", axes.len(), angles.len())));
    }
    let pairs: Vec<([f64; 3], f64)> = if axes.is_empty() {
        DEMO_ROTATIONS.to_vec()
    } else {
        axes.iter().copied().zip(angles.iter().copied()).collect()
    };
    let mut spec = load_spec(common, "micro-pointnet-ae")?;
    if spec.bottleneck.is_none() {
        return Err(usage(format!("network {:?} declares no bottleneck", spec.name)));
    }
    if common.spec.is_none() {
        spec.seed = common.seed;
    }
    let mut net = Network::build(spec.clone())?;
    let protocol = AutoencoderProtocol {
        dataset: DatasetSpec {
            points: spec.num_points,
            seed: common.seed,
            ..AutoencoderProtocol::default().dataset
        },
        train: TrainConfig {
            seed: common.seed,
            ..AutoencoderProtocol::default().train
        },
        ..AutoencoderProtocol::default()
    };
    let shapes = reqnn::dataset::synth_dataset(&protocol.dataset)?;
    let training = match checkpoint {
        Some(path) => {
            load_checkpoint(&mut net, path)?;
            None
        }
        None => {
            let outcome = train_autoencoder(&mut net, &shapes.train, &protocol)?;
            if !outcome.reached {
                eprintln!(
                    "warning: training stopped at Chamfer {:.4}, above the target {}",
                    outcome.chamfer, protocol.target_chamfer
                );
            }
            save_checkpoint(&net, &common.out_dir()?.join("checkpoint.rqnn"))?;
            Some(outcome)
        }
    };
    let cloud = match input {
        Some(path) => {
            let format = CloudFormat::from_path(path).unwrap_or(CloudFormat::XyzAscii);
            fit_points(load_cloud(path, format, true)?, spec.num_points)?
        }
        None => shapes.train[0].clone(),
    };

    let out = common.out_dir()?;
    let ext = format.extension();
    let save = |name: String, c: &PointCloud| fs::write(out.join(format!("{name}.{ext}")), format_cloud(c, format));
    save("original".into(), &cloud)?;
    let tol = common.tol.unwrap_or(1e-9);
    let mut rows = Vec::new();
    let mut passed = true;
    for (i, (axis, angle)) in pairs.iter().enumerate() {
        let demo = feature_rotation(&net, &cloud, &rotor_from_axis_angle(*axis, *angle)?)?;
        save(format!("rotated_{i}"), &demo.rotated_input)?;
        save(format!("reconstructed_{i}"), &demo.rotated_reconstruction)?;
        save(format!("synthesized_{i}"), &demo.synthesized)?;
        let ok = demo.chamfer <= tol;
        passed &= ok;
        println!(
            "axis [{:.2}, {:.2}, {:.2}] angle {:.4}: Chamfer(synthesized, rotated reconstruction) = {:.3e} [{}]",
            axis[0],
            axis[1],
            axis[2],
            angle,
            demo.chamfer,
            if ok { "pass" } else { "FAIL" }
        );
        rows.push(json!({"axis": axis, "angle": angle, "chamfer": demo.chamfer, "pass": ok}));
    }
    write_json(
        out,
        "reconstruct.json",
        &json!({
            "network": spec.name,
            "seed": common.seed,
            "tolerance": tol,
            "training": training,
            "rotations": rows,
            "verdict": if passed { "pass" } else { "fail" },
        }),
    )?;
    Ok(if passed { Status::Success } else { Status::PropertyFailure })
}

fn fit_points(cloud: PointCloud, n: usize) -> Result<PointCloud> {
    if cloud.len() < n {
        return Err(usage(format!("input has {} points, the network needs {n}", cloud.len())));
    }
    Ok(if cloud.len() == n {
        cloud
    } else {
        cloud.permuted(&centroid_fps(&cloud, n)?).normalized()
    })
}

impl Common {
    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

// ---------------------------------------------------------------------------
// complexity / bench
// ---------------------------------------------------------------------------

fn complexity(common: &Common, points: Option<usize>) -> Result<Status> {
    let specs: Vec<NetworkSpec> = if common.spec.is_some() || common.preset.is_some() {
        vec![load_spec(common, "")?]
    } else {
        let mut all = Vec::new();
        for name in PRESETS {
            let c = Common {
                preset: Some(name.to_string()),
                ..common.clone()
            };
            all.push(load_spec(&c, name)?);
        }
        all
    };
    let mut rows = Vec::new();
    for spec in &specs {
        let c = count_complexity(spec, points.unwrap_or(spec.num_points))?;
        println!(
            "{:<22} params {:>7} vs twin {:>7}   MACs {:>10} vs twin {:>10}   ratio {:.3}",
            c.network,
            c.equivariant.param_count,
            c.twin.param_count,
            c.equivariant.flop_count,
            c.twin.flop_count,
            c.flop_ratio()
        );
        rows.push(c);
    }
    write_json(&common.out, "complexity.json", &rows)?;
    Ok(Status::Success)
}

fn time_median(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        f()?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

fn bench(common: &Common, points: usize) -> Result<Status> {
    if points < 16 {
        return Err(usage("bench needs at least 16 points"));
    }
    let reps = common.trials.unwrap_or(20).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let cloud = random_cloud(&mut rng, points);
    let feats = random_pure(&mut rng, vec![points, 64]);
    let weight = RTensor::new(vec![64, 64], (0..64 * 64).map(|i| ((i * 37 % 101) as f64 - 50.0) / 400.0).collect())?;
    let groups = random_pure(&mut rng, vec![points / 16, 16, 64]);
    let centers = centroid_fps(&cloud, points / 16)?;
    let spec = load_spec(common, "micro-pointnet-cls")?;
    let net = Network::build(spec.clone())?;
    let net_cloud = random_cloud(&mut rng, spec.num_points);

    let mut rows: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, ms: Result<f64>| -> Result<()> {
        rows.push((name.to_string(), ms?));
        Ok(())
    };
    record("qconv 64->64", time_median(reps, || layers::qconv(&weight, &feats).map(drop)))?;
    record("qrelu", time_median(reps, || layers::qrelu(&feats, ReluMode::Constant { c: 1.0 }).map(drop)))?;
    record("qbatchnorm", time_median(reps, || layers::qbatchnorm_rows(&feats, 1e-5).map(drop)))?;
    record("qmaxpool_elementwise", time_median(reps, || layers::qmaxpool_elementwise(&groups).map(drop)))?;
    record("centroid_fps", time_median(reps, || centroid_fps(&cloud, points / 16).map(drop)))?;
    record(
        "group_ball_knn",
        time_median(reps, || geometry::group_ball_knn(&cloud, &centers, 0.3, 16, BallQuery::Revised).map(drop)),
    )?;
    record("knn_graph k=16", time_median(reps, || geometry::knn_graph(&cloud, 16).map(drop)))?;
    record(
        "density_estimate",
        time_median(reps, || geometry::density_estimate(&cloud, geometry::default_bandwidth(&cloud)).map(drop)),
    )?;
    record(
        &format!("forward {}", spec.name),
        time_median(reps, || net.forward(&net_cloud).map(drop)),
    )?;

    println!("{points} points, {} threads, median of {reps}", rayon::current_num_threads());
    for (name, ms) in &rows {
        println!("{name:<28} {ms:>10.3} ms");
    }
    let report: Vec<_> = rows.iter().map(|(op, ms)| json!({"op": op, "median_ms": ms})).collect();
    write_json(
        &common.out,
        "bench.json",
        &json!({"points": points, "repetitions": reps, "threads": rayon::current_num_threads(), "results": report}),
    )?;
    Ok(Status::Success)
}
