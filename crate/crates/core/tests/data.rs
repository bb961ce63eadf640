use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use krfws::data::*;
use krfws::geom::{fit_pose_default, MeanShape3D, OrthoPose, Shape2D};
use krfws::imgproc::GrayImage;
use krfws::par::Executor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn synthetic_faces_are_reproducible_for_any_executor() {
    let m = MeanShape3D::builtin_68();
    let cfg = SynthConfig::default();
    let a = synth_faces_with(Executor::Sequential, 10, 42, &m, &cfg).unwrap();
    let b = synth_faces_with(Executor::default(), 10, 42, &m, &cfg).unwrap();
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.face, y.face);
    }
    let other = synth_faces(10, 43, &m, &cfg).unwrap();
    assert_ne!(a[0].image, other[0].image);
}

#[test]
fn identity_pose_renders_the_frontal_projection() {
    let m = MeanShape3D::builtin_68();
    let pose = OrthoPose::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (_, shape) = render_face(&m, &pose, 64, 0.0, &mut rng).unwrap();
    for (p, q) in shape.points().iter().zip(m.points()) {
        assert_eq!((p.x, p.y), (q.x, q.y));
    }
}

#[test]
fn ground_truth_matches_generating_pose() {
    let m = MeanShape3D::builtin_68();
    let faces = synth_faces(20, 9, &m, &SynthConfig::default()).unwrap();
    for f in &faces {
        let fit = fit_pose_default(&m, f.face.shape.as_ref().unwrap()).unwrap();
        let label = f.face.pose.unwrap();
        assert!(fit.residual < 1e-6, "residual {}", fit.residual);
        assert!((fit.pose.yaw - label.yaw.to_radians()).abs() < 1e-6);
        assert!((fit.pose.pitch - label.pitch.to_radians()).abs() < 1e-6);
    }
}

#[test]
fn annotation_noise_is_opt_in() {
    let m = MeanShape3D::builtin_68();
    let cfg = SynthConfig {
        annotation_noise: 1.0,
        ..SynthConfig::default()
    };
    let f = &synth_faces(1, 9, &m, &cfg).unwrap()[0];
    let fit = fit_pose_default(&m, f.face.shape.as_ref().unwrap()).unwrap();
    assert!(fit.residual > 1.0);
}

#[test]
fn shape_jitter_deforms_the_face() {
    let m = MeanShape3D::builtin_68();
    let cfg = SynthConfig {
        shape_jitter: 0.03,
        ..SynthConfig::default()
    };
    let f = &synth_faces(1, 9, &m, &cfg).unwrap()[0];
    let fit = fit_pose_default(&m, f.face.shape.as_ref().unwrap()).unwrap();
    assert!(fit.residual > 1e-3);
    let plain = &synth_faces(1, 9, &m, &SynthConfig::default()).unwrap()[0];
    assert_ne!(plain.face.shape, f.face.shape);
}

fn touch(path: &Path) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, b"").unwrap();
}

fn annotated(dir: &Path, names: &[&str]) {
    for n in names {
        touch(&dir.join(format!("{n}.png")));
        touch(&dir.join(format!("{n}.pts")));
    }
}

#[test]
fn w300_layout_gives_disjoint_subsets() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    annotated(&root.join("afw"), &["a1", "a2"]);
    annotated(&root.join("helen/trainset"), &["h1"]);
    annotated(&root.join("lfpw/trainset"), &["l1"]);
    annotated(&root.join("helen/testset"), &["ht1", "ht2"]);
    annotated(&root.join("lfpw/testset"), &["lt1"]);
    annotated(&root.join("ibug"), &["i1", "i2"]);
    // Images without annotations are ignored.
    touch(&root.join("ibug/stray.jpg"));

    let s = make_300w_splits(root).unwrap();
    assert_eq!(s.train.len(), 4);
    assert_eq!(s.common.members.len(), 3);
    assert_eq!(s.challenging.members.len(), 2);
    let full = s.full();
    assert_eq!(full.name, SplitName::Full);
    assert_eq!(full.members.len(), 5);
    for m in &s.common.members {
        assert!(!s.challenging.members.contains(m));
        assert!(!s.train.contains(m));
    }

    fs::remove_dir_all(root.join("ibug")).unwrap();
    let s = make_300w_splits(root).unwrap();
    assert!(s.challenging.members.is_empty());
    assert_eq!(s.full().members, s.common.members);
}

#[test]
fn custom_split_lists_exact_members() {
    let tmp = tempfile::tempdir().unwrap();
    let list = tmp.path().join("mine.txt");
    fs::write(&list, "# held out\nx/one.png\n\nx/two.jpg\n").unwrap();
    let s = DatasetSplit::from_list(&list).unwrap();
    assert_eq!(s.name, SplitName::Custom);
    assert_eq!(
        s.members,
        vec![tmp.path().join("x/one.png"), tmp.path().join("x/two.jpg")]
    );
}

fn write_png(path: &Path, w: usize, h: usize) {
    let img = GrayImage::from_fn(w, h, |x, y| ((x + y) % 7) as f32 / 7.0).unwrap();
    img.to_luma8().save(path).unwrap();
}

#[test]
fn pointing04_scan_uses_box_file_or_whole_image() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("Person01");
    fs::create_dir_all(&dir).unwrap();
    write_png(&dir.join("personne01146+0-30.png"), 40, 30);
    write_png(&dir.join("personne01246-15+60.png"), 40, 30);
    write_png(&dir.join("notes.png"), 8, 8);
    let mut boxes = BTreeMap::new();
    boxes.insert(
        "personne01246-15+60.png".to_string(),
        BBox::new(5.0, 6.0, 20.0, 18.0).unwrap(),
    );

    let faces = load_pointing04(tmp.path(), &boxes).unwrap();
    assert_eq!(faces.len(), 2);
    let (a, meta_a) = &faces[0];
    assert_eq!(a.name, "personne01146+0-30.png");
    assert_eq!(a.bbox, BBox::new(0.0, 0.0, 40.0, 30.0).unwrap());
    assert_eq!(a.pose, Some(PoseLabel { yaw: -30.0, pitch: 0.0 }));
    assert_eq!((meta_a.person, meta_a.series), (1, 1));
    let (b, meta_b) = &faces[1];
    assert_eq!(b.bbox, BBox::new(5.0, 6.0, 20.0, 18.0).unwrap());
    assert_eq!(
        b.pose,
        Some(PoseLabel {
            yaw: 60.0,
            pitch: -15.0
        })
    );
    assert_eq!(meta_b.series, 2);

    let folds = session_folds(&faces.iter().map(|f| f.1).collect::<Vec<_>>());
    assert_eq!(folds.len(), 2);
    assert_eq!(folds[0].test, vec![0]);
    assert_eq!(folds[1].test, vec![1]);
}

#[test]
fn landmark_face_loads_image_annotation_and_box() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("face.png");
    write_png(&img, 50, 40);
    let shape = Shape2D::from_xy(&[(10.0, 10.0), (30.0, 12.0), (20.0, 30.0)]).unwrap();
    save_pts(&tmp.path().join("face.pts"), &shape).unwrap();

    let f = load_landmark_face(&img, &BTreeMap::new()).unwrap();
    assert_eq!((f.image.width(), f.image.height()), (50, 40));
    assert_eq!(f.face.bbox, BBox::around(&shape).unwrap());
    let loaded = f.face.shape.unwrap();
    for (p, q) in loaded.points().iter().zip(shape.points()) {
        assert!((p - q).norm() < 1e-6);
    }

    let boxes = parse_bboxes("face.png 1 2 30 31\n", Path::new("boxes.txt")).unwrap();
    let f = load_landmark_face(&img, &boxes).unwrap();
    assert_eq!(f.face.bbox, BBox::new(1.0, 2.0, 30.0, 31.0).unwrap());
}

#[test]
fn pts_round_trip_to_six_decimals() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("s.pts");
    let pts: Vec<(f64, f64)> = (0..68)
        .map(|i| (i as f64 * 1.234_567_89, 200.0 - i as f64 / 3.0))
        .collect();
    let shape = Shape2D::from_xy(&pts).unwrap();
    save_pts(&path, &shape).unwrap();
    let back = load_pts(&path).unwrap();
    assert_eq!(back.len(), 68);
    for (p, q) in back.points().iter().zip(shape.points()) {
        assert!((p.x - q.x).abs() <= 5e-7 && (p.y - q.y).abs() <= 5e-7);
    }
}
