//! Dataset ingestion: `.pts` landmark files, detector boxes, image lists,
//! the 300-W and Pointing'04 layouts, cross-validation folds and the
//! synthetic generators used by tests and benchmarks.

mod pointing04;
mod synth;
mod w300;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::geom::{apply_affine, AffineParams, Shape2D};
use crate::imgproc::GrayImage;

pub use pointing04::{load_pointing04, parse_pointing04_name, session_folds, shuffled_folds, Fold, Pointing04Name};
pub use synth::{
    mixture_regression, render_face, synth_faces, synth_faces_with, MixtureConfig, RegressionDraw, SynthConfig,
};
pub use w300::{make_300w_splits, DatasetSplit, SplitName, W300Splits, W300_CHALLENGING, W300_COMMON, W300_TRAIN};

/// Axis-aligned face box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!("bounding box ({x}, {y}, {w}, {h}) has no area")));
        }
        Ok(BBox { x, y, w, h })
    }

    /// Tight box around a shape.
    pub fn around(shape: &Shape2D) -> Result<Self> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in shape.points() {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }
}

/// Head pose label in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLabel {
    pub yaw: f64,
    pub pitch: f64,
}

/// One annotated face. `shape` is absent for pose-only datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFace {
    pub name: String,
    pub image_path: Option<PathBuf>,
    pub shape: Option<Shape2D>,
    pub bbox: BBox,
    pub pose: Option<PoseLabel>,
}

/// An annotated face together with its decoded image.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub face: AnnotatedFace,
    pub image: GrayImage,
}

/// Side of the normalized face canvas.
pub const FRAME_SIDE: usize = 128;
/// Diagonal of the face box inside the normalized canvas (a 64x64 face).
pub const FRAME_FACE_DIAGONAL: f64 = 64.0 * std::f64::consts::SQRT_2;

/// Similarity mapping image pixels to the normalized face canvas: the box
/// centre goes to the canvas centre and the box diagonal to
/// [`FRAME_FACE_DIAGONAL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceFrame {
    to_frame: AffineParams,
    from_frame: AffineParams,
}

impl FaceFrame {
    pub fn from_bbox(bbox: &BBox) -> Self {
        let s = FRAME_FACE_DIAGONAL / bbox.diagonal();
        let c = bbox.center();
        let half = FRAME_SIDE as f64 / 2.0;
        let to_frame = AffineParams::new(s, 0.0, 0.0, s, half - s * c.x, half - s * c.y);
        let from_frame = AffineParams::new(1.0 / s, 0.0, 0.0, 1.0 / s, c.x - half / s, c.y - half / s);
        FaceFrame { to_frame, from_frame }
    }

    pub fn to_frame(&self) -> &AffineParams {
        &self.to_frame
    }

    pub fn from_frame(&self) -> &AffineParams {
        &self.from_frame
    }

    /// Resamples the image into the canvas.
    pub fn warp_image(&self, img: &GrayImage) -> Result<GrayImage> {
        img.warp(FRAME_SIDE, FRAME_SIDE, &self.from_frame)
    }

    pub fn shape_to_frame(&self, s: &Shape2D) -> Result<Shape2D> {
        apply_affine(s, &self.to_frame)
    }

    pub fn shape_from_frame(&self, s: &Shape2D) -> Result<Shape2D> {
        apply_affine(s, &self.from_frame)
    }
}

/// A face resampled into its normalized frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFace {
    pub frame: FaceFrame,
    pub image: GrayImage,
    /// Ground truth in frame coordinates, when annotated.
    pub shape: Option<Shape2D>,
}

pub fn normalize_face(face: &FaceImage) -> Result<NormalizedFace> {
    let frame = FaceFrame::from_bbox(&face.face.bbox);
    let image = frame.warp_image(&face.image)?;
    let shape = face.face.shape.as_ref().map(|s| frame.shape_to_frame(s)).transpose()?;
    Ok(NormalizedFace { frame, image, shape })
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path, 0, e.to_string()))
}

/// Reads a 300-W style `.pts` file. Coordinates in the file are 1-based
/// and are shifted to 0-based pixel coordinates.
pub fn load_pts(path: &Path) -> Result<Shape2D> {
    parse_pts(&read_text(path)?, path)
}

pub fn parse_pts(text: &str, path: &Path) -> Result<Shape2D> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
    };
    let (ln, version) = next("version")?;
    if !version.starts_with("version:") {
        return Err(Error::parse(path, ln, "expected `version:` header"));
    }
    let (ln, count) = next("n_points")?;
    let n: usize = count
        .strip_prefix("n_points:")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, ln, "expected `n_points: <count>`"))?;
    let (ln, open) = next("{")?;
    if open != "{" {
        return Err(Error::parse(path, ln, "expected `{`"));
    }
    let mut points = Vec::with_capacity(n);
    loop {
        let (ln, line) = next("}")?;
        if line == "}" {
            if points.len() != n {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("header declares {n} points but {} were listed", points.len()),
                ));
            }
            break;
        }
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, ln, format!("bad coordinate line `{line}`")))?;
        if xy.len() != 2 || !xy.iter().all(|v| v.is_finite()) {
            return Err(Error::parse(path, ln, format!("bad coordinate line `{line}`")));
        }
        if points.len() == n {
            return Err(Error::parse(path, ln, format!("more than {n} points listed")));
        }
        points.push(Point2::new(xy[0] - 1.0, xy[1] - 1.0));
    }
    if let Ok((ln, _)) = next("end") {
        return Err(Error::parse(path, ln, "trailing content after `}`"));
    }
    Shape2D::new(points)
}

pub fn format_pts(shape: &Shape2D) -> String {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", shape.len());
    for p in shape.points() {
        s.push_str(&format!("{:.6} {:.6}\n", p.x + 1.0, p.y + 1.0));
    }
    s.push_str("}\n");
    s
}

pub fn save_pts(path: &Path, shape: &Shape2D) -> Result<()> {
    fs::write(path, format_pts(shape))?;
    Ok(())
}

/// Reads a box file with one `name x y w h` entry per line. Blank lines
/// and lines starting with `#` are ignored.
pub fn load_bboxes(path: &Path) -> Result<BTreeMap<String, BBox>> {
    parse_bboxes(&read_text(path)?, path)
}

pub fn parse_bboxes(text: &str, path: &Path) -> Result<BTreeMap<String, BBox>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, i + 1, "expected `name x y w h`"));
        }
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, i + 1, "box coordinates must be numbers"))?;
        let bbox = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if out.insert(fields[0].to_string(), bbox).is_some() {
            return Err(Error::parse(path, i + 1, format!("duplicate entry `{}`", fields[0])));
        }
    }
    Ok(out)
}

pub fn format_bboxes<'a>(entries: impl IntoIterator<Item = (&'a str, &'a BBox)>) -> String {
    entries
        .into_iter()
        .map(|(n, b)| format!("{n} {} {} {} {}\n", b.x, b.y, b.w, b.h))
        .collect()
}

/// Reads a plain list of image paths, one per line, resolved against the
/// list file's directory. Blank lines and `#` comments are skipped.
pub fn load_list(path: &Path) -> Result<Vec<PathBuf>> {
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Decodes an 8-bit PNG or JPEG file to grayscale.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return Err(Error::invalid(format!(
            "{}: only PNG and JPEG images are supported",
            path.display()
        )));
    }
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    Ok(GrayImage::from_dynamic(&img))
}

pub(crate) fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Display name used as the key in box files and CSV rows.
pub fn face_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads an annotated landmark face: the image, its sibling `.pts` file and
/// the box from `bboxes` (keyed by file name). Without a box entry the
/// tight box around the ground truth is used.
pub fn load_landmark_face(path: &Path, bboxes: &BTreeMap<String, BBox>) -> Result<FaceImage> {
    let name = face_name(path);
    let shape = load_pts(&path.with_extension("pts"))?;
    let bbox = match bboxes.get(&name) {
        Some(b) => *b,
        None => BBox::around(&shape)?,
    };
    Ok(FaceImage {
        image: load_image(path)?,
        face: AnnotatedFace {
            name,
            image_path: Some(path.to_path_buf()),
            shape: Some(shape),
            bbox,
            pose: None,
        },
    })
}
