use nalgebra::{Point2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AnnotatedFace, BBox, FaceImage, PoseLabel};
use crate::error::{Error, Result};
use crate::geom::{project, MeanShape3D, OrthoPose, Shape2D};
use crate::imgproc::GrayImage;
use crate::par::{derive_seed, Executor};

/// Rendering parameters of the procedural face generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub image_side: usize,
    /// Width in pixels of the frontal face before the random scale.
    pub face_width: f64,
    /// Relative scale jitter (uniform in `1 +- scale_jitter`).
    pub scale_jitter: f64,
    /// Uniform angle ranges in radians (`+-`).
    pub yaw_range: f64,
    pub pitch_range: f64,
    pub roll_range: f64,
    /// Per-face deformation: standard deviation of independent 3D landmark
    /// offsets, as a fraction of the mean shape width.
    pub shape_jitter: f64,
    /// Face centre offset from the image centre, pixels (`+-`).
    pub center_jitter: f64,
    /// Box jitter as a fraction of the face box size.
    pub bbox_jitter: f64,
    /// Standard deviation of the additive pixel noise.
    pub pixel_noise: f64,
    /// Standard deviation of Gaussian noise added to the annotations.
    pub annotation_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_side: 160,
            face_width: 80.0,
            scale_jitter: 0.1,
            yaw_range: 0.6,
            pitch_range: 0.4,
            roll_range: 0.3,
            shape_jitter: 0.0,
            center_jitter: 8.0,
            bbox_jitter: 0.05,
            pixel_noise: 0.03,
            annotation_noise: 0.0,
        }
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Convex hull (monotone chain), counter-clockwise in a y-down frame.
fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Point2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

fn inside_convex(hull: &[Point2<f64>], p: &Point2<f64>) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let c = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if c != 0.0 {
            if sign != 0.0 && c.signum() != sign {
                return false;
            }
            sign = c.signum();
        }
    }
    true
}

/// Renders the face of `mean3d` at `pose` on a `side` x `side` canvas. The
/// returned shape is the exact projection.
pub fn render_face<R: Rng>(
    mean3d: &MeanShape3D,
    pose: &OrthoPose,
    side: usize,
    pixel_noise: f64,
    rng: &mut R,
) -> Result<(GrayImage, Shape2D)> {
    let shape = project(mean3d, pose);
    let c = shape.centroid();
    let hull: Vec<Point2<f64>> = convex_hull(shape.points())
        .into_iter()
        .map(|p| c + (p - c) * 1.2)
        .collect();
    let background = rng.gen_range(0.25..0.45f32);
    let (gx, gy) = (rng.gen_range(-0.1..0.1f32), rng.gen_range(-0.1..0.1f32));
    let skin = rng.gen_range(0.55..0.7f32);
    let shading = (pose.yaw.sin() * 0.1) as f32;
    let sigma = (0.04 * pose.k * 136.0).max(1.5);
    let wavelength = 2.5 * sigma;
    let reach = (3.0 * sigma).ceil() as isize;

    let mut data = vec![0f32; side * side];
    for yy in 0..side {
        for xx in 0..side {
            let u = xx as f32 / side as f32 - 0.5;
            let v = yy as f32 / side as f32 - 0.5;
            let p = Point2::new(xx as f64, yy as f64);
            data[yy * side + xx] = if inside_convex(&hull, &p) {
                skin + shading * ((p.x - c.x) / 40.0) as f32
            } else {
                background + gx * u + gy * v
            };
        }
    }
    for (i, p) in shape.points().iter().enumerate() {
        let theta = i as f64 * GOLDEN_ANGLE + pose.roll;
        let (st, ct) = theta.sin_cos();
        let amp = if i % 2 == 0 { 0.25 } else { -0.25 };
        let (cx, cy) = (p.x.round() as isize, p.y.round() as isize);
        for yy in (cy - reach)..=(cy + reach) {
            for xx in (cx - reach)..=(cx + reach) {
                if xx < 0 || yy < 0 || xx >= side as isize || yy >= side as isize {
                    continue;
                }
                let (du, dv) = (xx as f64 - p.x, yy as f64 - p.y);
                let env = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
                let wave = (std::f64::consts::TAU * (du * ct + dv * st) / wavelength).cos();
                data[yy as usize * side + xx as usize] += (amp * env * wave) as f32;
            }
        }
    }
    if pixel_noise > 0.0 {
        let noise = Normal::new(0.0, pixel_noise as f32).map_err(|e| Error::invalid(e.to_string()))?;
        for d in &mut data {
            *d += noise.sample(rng);
        }
    }
    data.iter_mut().for_each(|d| *d = d.clamp(0.0, 1.0));
    Ok((GrayImage::new(side, side, data)?, shape))
}

fn synth_one(index: usize, seed: u64, mean3d: &MeanShape3D, cfg: &SynthConfig) -> Result<FaceImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index as u64));
    let (x0, x1) = mean3d
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let k = cfg.face_width / (x1 - x0).max(f64::EPSILON) * (1.0 + rng.gen_range(-1.0..=1.0) * cfg.scale_jitter);
    let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    let half = cfg.image_side as f64 / 2.0;
    let pose = OrthoPose::new(
        k,
        sym(&mut rng, cfg.yaw_range),
        sym(&mut rng, cfg.pitch_range),
        sym(&mut rng, cfg.roll_range),
        half + sym(&mut rng, cfg.center_jitter),
        half + sym(&mut rng, cfg.center_jitter),
    );
    let deformed;
    let face3d = if cfg.shape_jitter > 0.0 {
        let noise = Normal::new(0.0, cfg.shape_jitter * (x1 - x0)).map_err(|e| Error::invalid(e.to_string()))?;
        let pts = mean3d
            .points()
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        deformed = MeanShape3D::new(pts)?;
        &deformed
    } else {
        mean3d
    };
    let (image, mut shape) = render_face(face3d, &pose, cfg.image_side, cfg.pixel_noise, &mut rng)?;
    let tight = BBox::around(&shape)?;
    let size = tight.w.max(tight.h);
    let s = size * (1.0 + sym(&mut rng, cfg.bbox_jitter));
    let c = tight.center();
    let bbox = BBox::new(
        c.x + sym(&mut rng, cfg.bbox_jitter) * size - s / 2.0,
        c.y + sym(&mut rng, cfg.bbox_jitter) * size - s / 2.0,
        s,
        s,
    )?;
    if cfg.annotation_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.annotation_noise).map_err(|e| Error::invalid(e.to_string()))?;
        for p in shape.points_mut() {
            p.x += noise.sample(&mut rng);
            p.y += noise.sample(&mut rng);
        }
    }
    Ok(FaceImage {
        image,
        face: AnnotatedFace {
            name: format!("synth_{index:05}"),
            image_path: None,
            shape: Some(shape),
            bbox,
            pose: Some(PoseLabel {
                yaw: pose.yaw.to_degrees(),
                pitch: pose.pitch.to_degrees(),
            }),
        },
    })
}

/// Procedural faces: `mean3d` projected at random poses, an oriented
/// texture stamp at every landmark, background gradient and pixel noise.
/// Face `i` depends only on `(seed, i)`, so the output is identical for any
/// executor.
pub fn synth_faces(count: usize, seed: u64, mean3d: &MeanShape3D, cfg: &SynthConfig) -> Result<Vec<FaceImage>> {
    synth_faces_with(Executor::default(), count, seed, mean3d, cfg)
}

pub fn synth_faces_with(
    exec: Executor,
    count: usize,
    seed: u64,
    mean3d: &MeanShape3D,
    cfg: &SynthConfig,
) -> Result<Vec<FaceImage>> {
    if count == 0 {
        return Err(Error::invalid("face count must be at least 1"));
    }
    if mean3d.len() < 3 {
        return Err(Error::invalid("the mean shape needs at least 3 points"));
    }
    exec.try_map(count, |i| synth_one(i, seed, mean3d, cfg))
}

/// Shape of the mixture regression problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureConfig {
    pub train: usize,
    pub test: usize,
    pub components: usize,
    pub target_dim: usize,
    pub feature_dim: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            train: 200,
            test: 200,
            components: 4,
            target_dim: 2,
            feature_dim: 5,
            noise: 2.0,
        }
    }
}

/// One train/test draw.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDraw {
    pub x_train: Vec<Vec<f64>>,
    pub y_train: Vec<Vec<f64>>,
    pub x_test: Vec<Vec<f64>>,
    pub y_test: Vec<Vec<f64>>,
}

/// Targets from a Gaussian mixture (centres uniform in `[-10, 10]^d`,
/// isotropic spreads in `[0.5, 4]`, random unequal mixing weights);
/// features are a random linear map of the target plus Gaussian noise.
pub fn mixture_regression(seed: u64, cfg: &MixtureConfig) -> Result<RegressionDraw> {
    if cfg.components == 0 || cfg.target_dim == 0 || cfg.feature_dim == 0 || cfg.train == 0 {
        return Err(Error::invalid("mixture problem dimensions must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centers: Vec<Vec<f64>> = (0..cfg.components)
        .map(|_| (0..cfg.target_dim).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let spreads: Vec<f64> = (0..cfg.components).map(|_| rng.gen_range(0.5..4.0)).collect();
    let mix: Vec<f64> = (0..cfg.components)
        .map(|_| rng.gen_range(0.1..1.0f64).powi(2))
        .collect();
    let total: f64 = mix.iter().sum();
    let map: Vec<Vec<f64>> = (0..cfg.feature_dim)
        .map(|_| (0..cfg.target_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut draw = |n: usize| {
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.gen::<f64>() * total;
            let comp = mix
                .iter()
                .position(|&w| {
                    u -= w;
                    u < 0.0
                })
                .unwrap_or(cfg.components - 1);
            let y: Vec<f64> = centers[comp]
                .iter()
                .map(|c| c + spreads[comp] * unit.sample(&mut rng))
                .collect();
            let x: Vec<f64> = map
                .iter()
                .map(|row| row.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() + cfg.noise * unit.sample(&mut rng))
                .collect();
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    };
    let (x_train, y_train) = draw(cfg.train);
    let (x_test, y_test) = draw(cfg.test);
    Ok(RegressionDraw {
        x_train,
        y_train,
        x_test,
        y_test,
    })
}
