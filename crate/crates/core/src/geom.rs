//! Landmark shapes and the rigid transforms used to move them around:
//! 2-D affine/similarity transforms of a whole shape and the scaled
//! orthographic projection of a 3-D mean shape, including Gauss-Newton
//! fitting of the projection parameters to an observed 2-D shape.
//!
//! Rotations use intrinsic Euler angles composed as
//! `R = Rz(roll) * Ry(yaw) * Rx(pitch)`. Image axes are x to the right and
//! y down, and the 3-D mean shape has z pointing away from the viewer.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix6, Point2, Point3, Vector2, Vector3, Vector6};

use crate::error::{check_dim, Error, Result};

/// A 2-D landmark shape in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape2D {
    points: Vec<Point2<f64>>,
}

impl Shape2D {
    pub fn new(points: Vec<Point2<f64>>) -> Result<Self> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid("shape contains non-finite coordinates"));
        }
        Ok(Shape2D { points })
    }

    pub fn from_xy(xy: &[(f64, f64)]) -> Result<Self> {
        Self::new(xy.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    /// Builds a shape from an interleaved `[x0, y0, x1, y1, ...]` vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(2) {
            return Err(Error::invalid("flat shape vector has odd length"));
        }
        Self::new(flat.chunks(2).map(|c| Point2::new(c[0], c[1])).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [Point2<f64>] {
        &mut self.points
    }

    pub fn centroid(&self) -> Point2<f64> {
        let n = self.points.len().max(1) as f64;
        let sum = self.points.iter().fold(Vector2::zeros(), |acc, p| acc + p.coords);
        Point2::from(sum / n)
    }

    /// Root-mean-square distance of the points from their centroid.
    pub fn rms_extent(&self) -> f64 {
        let c = self.centroid();
        let n = self.points.len().max(1) as f64;
        (self.points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / n).sqrt()
    }

    /// Applies `f` to every point.
    pub fn map(&self, f: impl Fn(&Point2<f64>) -> Point2<f64>) -> Shape2D {
        Shape2D {
            points: self.points.iter().map(f).collect(),
        }
    }

    pub fn translated(&self, t: Vector2<f64>) -> Shape2D {
        self.map(|p| p + t)
    }

    /// Mean Euclidean distance between corresponding points.
    pub fn mean_distance(&self, other: &Shape2D) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        let n = self.len().max(1) as f64;
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n)
    }

    /// Point-wise mean of a set of equally sized shapes.
    pub fn mean_of(shapes: &[Shape2D]) -> Result<Shape2D> {
        let first = shapes
            .first()
            .ok_or_else(|| Error::invalid("mean of an empty shape set"))?;
        let mut acc = vec![Vector2::zeros(); first.len()];
        for s in shapes {
            check_dim(first.len(), s.len())?;
            for (a, p) in acc.iter_mut().zip(&s.points) {
                *a += p.coords;
            }
        }
        let n = shapes.len() as f64;
        Ok(Shape2D {
            points: acc.into_iter().map(|a| Point2::from(a / n)).collect(),
        })
    }
}

/// Parameters of the affine shape transform
/// `S' = [a b; c d] S + [tx; ty]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64, tx: f64, ty: f64) -> Self {
        AffineParams { a, b, c, d, tx, ty }
    }

    /// Similarity with uniform `scale`, counter-clockwise `angle` (radians,
    /// in the x-right/y-down frame this appears clockwise) and translation.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineParams::new(scale * c, -scale * s, scale * s, scale * c, tx, ty)
    }

    pub fn linear(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.b, self.c, self.d)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.tx, self.ty)
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply_point(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }

    /// The transform that applies `self` first and then `next`.
    pub fn then(&self, next: &AffineParams) -> AffineParams {
        let m = next.linear() * self.linear();
        let t = next.linear() * self.translation() + next.translation();
        AffineParams::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)], t.x, t.y)
    }

    pub fn inverse(&self) -> Result<AffineParams> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() <= 1e-8 {
            return Err(Error::Degenerate(format!(
                "affine transform is not invertible (det = {det})"
            )));
        }
        let inv = Matrix2::new(self.d, -self.b, -self.c, self.a) / det;
        let t = -(inv * self.translation());
        Ok(AffineParams::new(
            inv[(0, 0)],
            inv[(0, 1)],
            inv[(1, 0)],
            inv[(1, 1)],
            t.x,
            t.y,
        ))
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.tx, self.ty]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Applies the affine shape transform to every landmark.
pub fn apply_affine(shape: &Shape2D, params: &AffineParams) -> Result<Shape2D> {
    if !params.is_finite() {
        return Err(Error::invalid("non-finite affine parameters"));
    }
    Ok(shape.map(|p| params.apply_point(p)))
}

/// Least-squares similarity transform (scale, rotation, translation; no
/// reflection) mapping `src` onto `dst`.
pub fn similarity_align(src: &Shape2D, dst: &Shape2D) -> Result<AffineParams> {
    check_dim(src.len(), dst.len())?;
    if src.len() < 2 {
        return Err(Error::invalid("similarity alignment needs at least 2 points"));
    }
    let cs = src.centroid();
    let cd = dst.centroid();
    let mut norm = 0.0;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (s, d) in src.points().iter().zip(dst.points()) {
        let s = s - cs;
        let d = d - cd;
        norm += s.norm_squared();
        dot += s.x * d.x + s.y * d.y;
        cross += s.x * d.y - s.y * d.x;
    }
    if norm <= 1e-12 * src.len() as f64 {
        return Err(Error::Degenerate("source shape points coincide".into()));
    }
    let a = dot / norm;
    let b = cross / norm;
    let lin = Matrix2::new(a, -b, b, a);
    let t = cd.coords - lin * cs.coords;
    Ok(AffineParams::new(a, -b, b, a, t.x, t.y))
}

/// Scale and in-plane rotation part of a similarity, as returned by
/// [`similarity_align`].
pub fn similarity_scale_angle(p: &AffineParams) -> (f64, f64) {
    (p.a.hypot(p.c), p.c.atan2(p.a))
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// A 3-D mean face shape, centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShape3D {
    points: Vec<Point3<f64>>,
}

const BUILTIN_MEAN_SHAPE_68: &str = include_str!("../data/mean_shape_68.txt");

impl MeanShape3D {
    /// Builds a mean shape, translating it so the centroid is at the origin.
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("empty 3-D shape"));
        }
        if points
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::invalid("3-D shape contains non-finite coordinates"));
        }
        let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
        Ok(MeanShape3D {
            points: points.into_iter().map(|p| p - c).collect(),
        })
    }

    /// Builds a shape from `x y z` triples. Points already centred (to
    /// 1e-9 of their extent) are kept bit-exact; otherwise they are
    /// recentred as in [`MeanShape3D::new`].
    pub fn from_flat(xyz: &[f64]) -> Result<Self> {
        if xyz.is_empty() || !xyz.len().is_multiple_of(3) {
            return Err(Error::invalid("3-D shape needs a positive multiple of 3 coordinates"));
        }
        let points: Vec<Point3<f64>> = xyz.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let shape = Self::new(points.clone())?;
        let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / points.len() as f64;
        let extent = points.iter().map(|p| p.coords.norm()).fold(0.0, f64::max);
        if c.norm() <= 1e-9 * extent.max(1.0) {
            Ok(MeanShape3D { points })
        } else {
            Ok(shape)
        }
    }

    /// The 68-point mean shape shipped with the crate
    /// (`data/mean_shape_68.txt`).
    pub fn builtin_68() -> Self {
        Self::parse(BUILTIN_MEAN_SHAPE_68, Path::new("<builtin mean_shape_68.txt>"))
            .expect("builtin mean shape is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Parses the plain-text format: first line `n`, then `n` lines of
    /// `x y z`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (first_no, first) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "missing point count"))?;
        let n: usize = first
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, first_no + 1, "point count is not an integer"))?;
        let mut points = Vec::with_capacity(n);
        for (no, line) in lines {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, no + 1, "expected three floats"))?;
            if vals.len() != 3 {
                return Err(Error::parse(path, no + 1, "expected three floats"));
            }
            points.push(Point3::new(vals[0], vals[1], vals[2]));
        }
        if points.len() != n {
            return Err(Error::parse(
                path,
                text.lines().count(),
                format!("expected {n} points, found {}", points.len()),
            ));
        }
        Self::new(points)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{:.6} {:.6} {:.6}", p.x, p.y, p.z);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// RMS extent of the x/y coordinates (the frontal projection).
    pub fn frontal_rms_extent(&self) -> f64 {
        let n = self.points.len() as f64;
        (self.points.iter().map(|p| p.x * p.x + p.y * p.y).sum::<f64>() / n).sqrt()
    }
}

/// Parameters of a scaled orthographic projection: scale, Euler angles
/// (radians) and image translation (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoPose {
    pub k: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub tx: f64,
    pub ty: f64,
}

impl OrthoPose {
    pub fn new(k: f64, yaw: f64, pitch: f64, roll: f64, tx: f64, ty: f64) -> Self {
        OrthoPose {
            k,
            yaw,
            pitch,
            roll,
            tx,
            ty,
        }
    }

    /// Parameter vector in the order `(k, yaw, pitch, roll, tx, ty)`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.k, self.yaw, self.pitch, self.roll, self.tx, self.ty)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        OrthoPose::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    /// Brings the pose into canonical form: `k > 0`, yaw in `[-pi/2, pi/2]`
    /// and pitch and roll in `(-pi, pi]`.
    pub fn normalized(&self) -> Self {
        let mut p = *self;
        if p.k < 0.0 {
            // -R and Rz(pi) R share their first two rows up to sign.
            p.k = -p.k;
            p.roll += PI;
        }
        p.yaw = wrap_angle(p.yaw);
        if p.yaw.abs() > FRAC_PI_2 {
            // Rz(r + pi) Ry(pi - y) Rx(p + pi) is the same rotation.
            p.yaw = PI.copysign(p.yaw) - p.yaw;
            p.pitch += PI;
            p.roll += PI;
        }
        p.yaw = wrap_angle(p.yaw);
        p.pitch = wrap_angle(p.pitch);
        p.roll = wrap_angle(p.roll);
        p
    }

    pub fn is_valid(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite()) && self.k > 0.0
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn d_rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn d_rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn d_rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Full rotation `Rz(roll) * Ry(yaw) * Rx(pitch)`.
pub fn rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    rot_z(roll) * rot_y(yaw) * rot_x(pitch)
}

/// The 2x3 matrix `k * P`, where `P` holds the first two rows of the pose
/// rotation.
pub fn euler_to_projection(pose: &OrthoPose) -> Matrix2x3<f64> {
    let r = rotation(pose.yaw, pose.pitch, pose.roll);
    r.fixed_rows::<2>(0).into_owned() * pose.k
}

/// Scaled orthographic projection of the mean shape.
pub fn project(mean3d: &MeanShape3D, pose: &OrthoPose) -> Shape2D {
    let kp = euler_to_projection(pose);
    let t = Vector2::new(pose.tx, pose.ty);
    Shape2D {
        points: mean3d.points.iter().map(|p| Point2::from(kp * p.coords + t)).collect(),
    }
}

/// Jacobian of the flattened projection `[x0, y0, x1, y1, ...]` with
/// respect to `(k, yaw, pitch, roll, tx, ty)`; shape `2n x 6`, row-major.
pub fn projection_jacobian(mean3d: &MeanShape3D, pose: &OrthoPose) -> Vec<[f64; 6]> {
    let (rx, ry, rz) = (rot_x(pose.pitch), rot_y(pose.yaw), rot_z(pose.roll));
    let r = rz * ry * rx;
    let d_yaw = rz * d_rot_y(pose.yaw) * rx * pose.k;
    let d_pitch = rz * ry * d_rot_x(pose.pitch) * pose.k;
    let d_roll = d_rot_z(pose.roll) * ry * rx * pose.k;
    let mut jac = Vec::with_capacity(2 * mean3d.len());
    for p in &mean3d.points {
        let rp = r * p.coords;
        let dy = d_yaw * p.coords;
        let dp = d_pitch * p.coords;
        let dr = d_roll * p.coords;
        for row in 0..2 {
            let (tx, ty) = if row == 0 { (1.0, 0.0) } else { (0.0, 1.0) };
            jac.push([rp[row], dy[row], dp[row], dr[row], tx, ty]);
        }
    }
    jac
}

/// Starting pose for [`fit_pose`]: zero angles, scale from the ratio of RMS
/// extents, translation from the 2-D centroid.
pub fn initial_pose(mean3d: &MeanShape3D, shape: &Shape2D) -> OrthoPose {
    let c = shape.centroid();
    let denom = mean3d.frontal_rms_extent();
    let k = if denom > 0.0 { shape.rms_extent() / denom } else { 1.0 };
    OrthoPose::new(if k > 0.0 { k } else { 1.0 }, 0.0, 0.0, 0.0, c.x, c.y)
}

/// Stopping parameters for [`fit_pose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Result of a Gauss-Newton pose fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseFit {
    pub pose: OrthoPose,
    /// Euclidean norm of the final residual vector.
    pub residual: f64,
    pub iterations: usize,
    /// Set when the normal equations became singular; `pose` is then the
    /// best estimate found before the failure.
    pub degenerate: bool,
}

fn residual_sq(mean3d: &MeanShape3D, shape: &Shape2D, pose: &OrthoPose) -> f64 {
    project(mean3d, pose)
        .points
        .iter()
        .zip(shape.points())
        .map(|(a, b)| (a - b).norm_squared())
        .sum()
}

/// Fits the scaled orthographic pose minimizing `||project(mean3d, pose) - shape||^2`
/// by damped Gauss-Newton. Each step is halved (at most 10 times) until the
/// residual decreases; iteration stops once the accepted step norm falls
/// below `params.tol`, no decreasing step exists, or `params.max_iter` is
/// reached.
pub fn fit_pose(mean3d: &MeanShape3D, shape: &Shape2D, init: &OrthoPose, params: FitParams) -> Result<PoseFit> {
    check_dim(mean3d.len(), shape.len())?;
    if shape.len() < 3 {
        return Err(Error::invalid("pose fitting needs at least 3 landmarks"));
    }
    if !init.is_valid() {
        return Err(Error::invalid("initial pose is not valid"));
    }
    let mut pose = *init;
    let mut cost = residual_sq(mean3d, shape, &pose);
    let mut iterations = 0;
    let mut degenerate = false;

    while iterations < params.max_iter {
        iterations += 1;
        let jac = projection_jacobian(mean3d, &pose);
        let proj = project(mean3d, &pose);
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (i, (p, s)) in proj.points.iter().zip(shape.points()).enumerate() {
            let r = [p.x - s.x, p.y - s.y];
            for (row, res) in r.iter().enumerate() {
                let j = Vector6::from_row_slice(&jac[2 * i + row]);
                jtj += j * j.transpose();
                jtr += j * *res;
            }
        }
        let Some(chol) = jtj.cholesky() else {
            degenerate = true;
            break;
        };
        let step = -chol.solve(&jtr);
        if !step.iter().all(|v| v.is_finite()) {
            degenerate = true;
            break;
        }

        let base = pose.to_vector();
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=10 {
            let cand = OrthoPose::from_vector(&(base + step * scale));
            let c = residual_sq(mean3d, shape, &cand);
            if c < cost {
                accepted = Some((cand, c, step.norm() * scale));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, c, norm)) => {
                pose = cand;
                cost = c;
                if norm < params.tol {
                    break;
                }
            }
            None => break,
        }
    }

    Ok(PoseFit {
        pose: pose.normalized(),
        residual: cost.sqrt(),
        iterations,
        degenerate,
    })
}

/// [`fit_pose`] from [`initial_pose`] with default stopping parameters.
pub fn fit_pose_default(mean3d: &MeanShape3D, shape: &Shape2D) -> Result<PoseFit> {
    fit_pose(mean3d, shape, &initial_pose(mean3d, shape), FitParams::default())
}
