use krfws::align::*;
use krfws::config::Config;
use krfws::data::*;
use krfws::geom::*;
use krfws::par::Executor;
use nalgebra::{DMatrix, DVector, Point3, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normalized(count: usize, seed: u64, mean3d: &MeanShape3D) -> Vec<NormalizedFace> {
    synth_faces(count, seed, mean3d, &SynthConfig::default())
        .unwrap()
        .iter()
        .map(|f| normalize_face(f).unwrap())
        .collect()
}

fn cheap_stage(cfg: &mut Config, stage: &str, iterations: usize, trees: usize) {
    cfg.set(&format!("{stage}.iterations"), &iterations.to_string())
        .unwrap();
    cfg.set(&format!("{stage}.trees"), &trees.to_string()).unwrap();
}

fn cheap_config() -> Config {
    let mut cfg = Config::default();
    cheap_stage(&mut cfg, "apr", 1, 2);
    cheap_stage(&mut cfg, "3dapr", 1, 2);
    cheap_stage(&mut cfg, "lbf", 2, 2);
    cfg.set("lbf.max_depth", "4").unwrap();
    cfg.set("perturb.count", "2").unwrap();
    cfg.set("lbf.inits", "2").unwrap();
    cfg
}

fn max_move(a: &Shape2D, b: &Shape2D) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max)
}

fn samples<'a>(faces: &'a [NormalizedFace], inits: impl Fn(usize, &Shape2D) -> Vec<Shape2D>) -> Vec<Sample<'a>> {
    faces
        .iter()
        .enumerate()
        .flat_map(|(i, f)| {
            let gt = f.shape.as_ref().unwrap();
            inits(i, gt).into_iter().map(move |current| Sample {
                image: &f.image,
                gt,
                current,
                group: i,
            })
        })
        .collect()
}

#[test]
fn stages_trained_on_exact_inits_predict_no_update() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(12, 1, &m);
    let test = normalized(4, 2, &m);
    let cfg = cheap_config();

    let mut s = samples(&faces, |_, gt| vec![gt.clone()]);
    let apr = AprModel::train(&mut s, &cfg.apr_stage(), Executor::default()).unwrap();
    let mut s = samples(&faces, |_, gt| vec![gt.clone()]);
    let apr3d = Apr3dModel::train(&mut s, &m, &cfg.apr3d_stage(), Executor::default()).unwrap();
    let gts = frame_shapes(&faces).unwrap();
    let reference = Shape2D::mean_of(&gts).unwrap();
    let mut s = samples(&faces, |_, gt| vec![gt.clone()]);
    let lbf = LbfModel::train(&mut s, &reference, &cfg.lbf_config(), Executor::default()).unwrap();

    for f in &test {
        let gt = f.shape.as_ref().unwrap();
        assert!(max_move(&apr.apply(&f.image, gt).unwrap(), gt) < 1e-3 * 64.0);
        assert!(max_move(&apr3d.apply(&f.image, gt).unwrap(), gt) < 1e-3 * 64.0);
        assert!(max_move(&lbf.apply(&f.image, gt).unwrap(), gt) < 1e-3 * 64.0);
    }
}

#[test]
fn translation_only_apr_removes_the_offset() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(12, 3, &m);
    let test = normalized(6, 4, &m);
    let shift = |s: &Shape2D| s.translated(Vector2::new(8.0, 0.0));
    let mut s = samples(&faces, |_, gt| vec![shift(gt)]);
    let apr = AprModel::train(&mut s, &cheap_config().apr_stage(), Executor::default()).unwrap();
    for f in &test {
        let gt = f.shape.as_ref().unwrap();
        let init = shift(gt);
        let before = init.mean_distance(gt).unwrap();
        let after = apr.apply(&f.image, &init).unwrap().mean_distance(gt).unwrap();
        assert!(after < 0.2 * before, "{after} vs {before}");
    }
}

/// Least-squares affine map from `a` to `b` and its largest residual.
fn affine_residual(a: &Shape2D, b: &Shape2D) -> f64 {
    let n = a.len();
    let x = DMatrix::from_fn(n, 3, |r, c| match c {
        0 => a.points()[r].x,
        1 => a.points()[r].y,
        _ => 1.0,
    });
    let svd = x.clone().svd(true, true);
    let mut worst = 0.0f64;
    for axis in 0..2 {
        let y = DVector::from_fn(n, |r, _| if axis == 0 { b.points()[r].x } else { b.points()[r].y });
        let coef = svd.solve(&y, 1e-12).unwrap();
        worst = worst.max((&x * coef - y).amax());
    }
    worst
}

#[test]
fn apr_output_is_an_affine_image_of_its_input() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(12, 5, &m);
    let cfg = cheap_config();
    let gts = frame_shapes(&faces).unwrap();
    let reference = Shape2D::mean_of(&gts).unwrap();
    let mut s = samples(&faces, |i, gt| {
        perturbed_inits(&reference, gt, &cfg.perturb, 7, i).unwrap()
    });
    let mut stage = cfg.apr_stage();
    stage.iterations = 2;
    let apr = AprModel::train(&mut s, &stage, Executor::default()).unwrap();
    let test = normalized(4, 6, &m);
    for (i, f) in test.iter().enumerate() {
        let init = &perturbed_inits(&reference, f.shape.as_ref().unwrap(), &cfg.perturb, 8, i).unwrap()[0];
        let out = apr.apply(&f.image, init).unwrap();
        assert!(affine_residual(init, &out) < 1e-9);
        let stepped = apr
            .iterations
            .iter()
            .fold(init.clone(), |s, it| apr.step(it, &f.image, &s).unwrap());
        assert_eq!(stepped, out);
    }
}

#[test]
fn apr3d_output_lies_on_the_projection_manifold() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(12, 9, &m);
    let cfg = cheap_config();
    let gts = frame_shapes(&faces).unwrap();
    let reference = Shape2D::mean_of(&gts).unwrap();
    let mut s = samples(&faces, |i, gt| {
        perturbed_inits(&reference, gt, &cfg.perturb, 3, i).unwrap()
    });
    let model = Apr3dModel::train(&mut s, &m, &cfg.apr3d_stage(), Executor::default()).unwrap();
    for f in &normalized(4, 10, &m) {
        let out = model.apply(&f.image, &reference).unwrap();
        let fit = fit_pose_default(&m, &out).unwrap();
        assert!(fit.residual < 1e-6, "residual {}", fit.residual);
    }
}

#[test]
fn apr3d_recovers_a_yaw_offset() {
    let m = MeanShape3D::builtin_68();
    let (x0, x1) = m
        .points()
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
    let base_k = 64.0 / (x1 - x0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draw = |yaw: f64, rng: &mut ChaCha8Rng| {
        let pose = OrthoPose::new(
            base_k * rng.gen_range(0.95..1.05),
            yaw,
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            64.0 + rng.gen_range(-2.0..2.0),
            64.0 + rng.gen_range(-2.0..2.0),
        );
        let (img, gt) = render_face(&m, &pose, 128, 0.02, rng).unwrap();
        let init = project(&m, &OrthoPose { yaw: 0.0, ..pose });
        (img, gt, init)
    };
    let train: Vec<_> = (0..150).map(|_| draw(rng.gen_range(-0.5..0.5), &mut rng)).collect();
    let mut s: Vec<Sample> = train
        .iter()
        .enumerate()
        .map(|(i, (img, gt, init))| Sample {
            image: img,
            gt,
            current: init.clone(),
            group: i,
        })
        .collect();
    let mut stage = Config::default().apr3d_stage();
    stage.forest.trees = 5;
    let model = Apr3dModel::train(&mut s, &m, &stage, Executor::default()).unwrap();
    let mut err = 0.0;
    let count = 20;
    for _ in 0..count {
        let (img, _, init) = draw(0.4, &mut rng);
        let out = model.apply(&img, &init).unwrap();
        let yaw = fit_pose_default(&m, &out).unwrap().pose.yaw;
        err += (yaw - 0.4).abs() / count as f64;
    }
    assert!(err < 0.1, "mean yaw error {err}");
}

/// Eye corners, nose tip and mouth corners of the 68-point shape.
fn five_point_shape() -> MeanShape3D {
    let m = MeanShape3D::builtin_68();
    let pts: Vec<Point3<f64>> = [36, 45, 30, 48, 54].iter().map(|&i| m.points()[i]).collect();
    MeanShape3D::new(pts).unwrap()
}

#[test]
fn lbf_error_decreases_every_iteration_on_five_landmarks() {
    let m = five_point_shape();
    let faces = normalized(60, 20, &m);
    let test = normalized(30, 21, &m);
    let mut cfg = Config::default();
    cfg.perturb.count = 8;
    cfg.perturb.translation = 0.1;
    let gts = frame_shapes(&faces).unwrap();
    let reference = Shape2D::mean_of(&gts).unwrap();
    let mut s = samples(&faces, |i, gt| {
        perturbed_inits(&reference, gt, &cfg.perturb, 1, i).unwrap()
    });
    let model = LbfModel::train(&mut s, &reference, &cfg.lbf_config(), Executor::default()).unwrap();
    assert_eq!(model.iterations.len(), 5);

    let mut errs = vec![0.0; 6];
    for (i, f) in test.iter().enumerate() {
        let gt = f.shape.as_ref().unwrap();
        let init = &perturbed_inits(&reference, gt, &cfg.perturb, 2, i).unwrap()[0];
        for (k, s) in model.apply_trace(&f.image, init).unwrap().iter().enumerate() {
            errs[k] += s.mean_distance(gt).unwrap();
        }
    }
    for w in errs.windows(2) {
        assert!(w[1] < w[0], "{errs:?}");
    }
}

#[test]
fn zero_regression_leaves_the_shape_unchanged() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(10, 30, &m);
    let gts = frame_shapes(&faces).unwrap();
    let reference = Shape2D::mean_of(&gts).unwrap();
    let cfg = cheap_config();
    let mut s = samples(&faces, |i, _| other_shape_inits(&gts, i, 2, 5).unwrap());
    let mut model = LbfModel::train(&mut s, &reference, &cfg.lbf_config(), Executor::default()).unwrap();
    for it in &mut model.iterations {
        let dim: usize = it.forests.iter().map(|f| f.code_len()).sum();
        it.ridge = Ridge::zero(dim, 2 * reference.len());
    }
    let start = &gts[3];
    assert_eq!(&model.apply(&faces[0].image, start).unwrap(), start);
}

fn cheap_pipeline(faces: &[NormalizedFace], exec: Executor) -> Pipeline {
    train_pipeline(faces, &cheap_config(), &MeanShape3D::builtin_68(), Stages::ALL, exec).unwrap()
}

#[test]
fn pipeline_without_stages_places_the_reference_in_the_box() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(8, 40, &m);
    let p = Pipeline {
        reference: Shape2D::mean_of(&frame_shapes(&faces).unwrap()).unwrap(),
        apr: None,
        apr3d: None,
        lbf: None,
    };
    let img = &faces[0].image;
    let bbox = BBox::new(10.0, 20.0, 50.0, 50.0).unwrap();
    let out = p.align(img, &bbox, Stages::NONE).unwrap();
    let expect = FaceFrame::from_bbox(&bbox).shape_from_frame(&p.reference).unwrap();
    assert!(max_move(&out, &expect) < 1e-9);
    assert!(p.align(img, &bbox, Stages::ALL).is_err());
    assert!(p
        .align(
            img,
            &bbox,
            Stages {
                apr: false,
                apr3d: false,
                lbf: true
            }
        )
        .is_err());
}

#[test]
fn training_is_deterministic_across_executors() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(10, 50, &m);
    let a = cheap_pipeline(&faces, Executor::Sequential);
    let b = cheap_pipeline(&faces, Executor::default());
    assert_eq!(a.apr.as_ref().unwrap().to_bytes(), b.apr.as_ref().unwrap().to_bytes());
    assert_eq!(
        a.apr3d.as_ref().unwrap().to_bytes(),
        b.apr3d.as_ref().unwrap().to_bytes()
    );
    assert_eq!(a.lbf.as_ref().unwrap().to_bytes(), b.lbf.as_ref().unwrap().to_bytes());
}

#[test]
fn bundle_round_trip_is_exact() {
    let m = MeanShape3D::builtin_68();
    let faces = normalized(10, 60, &m);
    let pipeline = cheap_pipeline(&faces, Executor::default());
    let labels: Vec<PoseLabel> = faces.iter().map(|_| PoseLabel { yaw: 10.0, pitch: -5.0 }).collect();
    let images: Vec<_> = faces.iter().map(|f| &f.image).collect();
    let cfg = cheap_config();
    let pose = PoseModel::train(
        &images,
        &labels,
        &cfg.pose.phog,
        &cfg.pose_forest(),
        Executor::default(),
    )
    .unwrap();
    let mut bundle = Bundle::new(Some(pipeline), Some(pose));
    bundle.manifest.set("seed", "7");

    let tmp = tempfile::tempdir().unwrap();
    bundle.save(tmp.path()).unwrap();
    let back = Bundle::load(tmp.path()).unwrap();
    assert_eq!(back.pipeline, bundle.pipeline);
    assert_eq!(back.pose, bundle.pose);
    assert_eq!(back.manifest.get("seed"), Some("7"));
    assert_eq!(back.manifest.get("stages"), Some("apr,3dapr,lbf,pose"));

    let other = tempfile::tempdir().unwrap();
    back.save(other.path()).unwrap();
    for f in [
        "manifest.txt",
        "reference.txt",
        "apr/model.bin",
        "3dapr/model.bin",
        "lbf/model.bin",
        "pose/model.bin",
    ] {
        assert_eq!(
            std::fs::read(tmp.path().join(f)).unwrap(),
            std::fs::read(other.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let img = &faces[0].image;
    let p = back.pipeline.as_ref().unwrap();
    assert_eq!(
        p.run_normalized(img, Stages::ALL).unwrap(),
        bundle
            .pipeline
            .as_ref()
            .unwrap()
            .run_normalized(img, Stages::ALL)
            .unwrap()
    );
    let constant = back.pose.unwrap().predict(img).unwrap();
    assert!((constant.yaw - 10.0).abs() < 1e-9 && (constant.pitch + 5.0).abs() < 1e-9);
}

#[test]
fn bundle_with_unknown_version_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("manifest.txt"), "format_version = 99\nstages = \n").unwrap();
    assert!(Bundle::load(tmp.path()).is_err());
}
