//! The alignment pipeline: affine pose regression (APR), 3-D affine pose
//! regression (3D-APR) and the LBF cascade, plus head-pose regression.
//!
//! All stages work in the normalized face frame produced by
//! [`crate::data::FaceFrame`]: the detector box is mapped to a 64x64 face
//! centred in a 128x128 canvas.

mod apr;
mod apr3d;
mod bundle;
mod lbf;
mod perturb;
mod pipeline;
mod pose;
mod ridge;
mod train;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::forest::{ForestParams, KForest};
use crate::geom::Shape2D;
use crate::imgproc::{BlockLayout, GrayImage, HogParams, HogVariant, PhogConfig};

pub use apr::{AprIteration, AprModel};
pub use apr3d::Apr3dModel;
pub use bundle::{Bundle, Manifest, BUNDLE_VERSION};
pub use lbf::{LbfConfig, LbfIteration, LbfModel};
pub use perturb::{other_shape_inits, perturbed_inits, PerturbConfig};
pub use pipeline::{Pipeline, Stages};
pub use pose::PoseModel;
pub use ridge::{ridge_fit, Ridge};
pub use train::{extend_pipeline, frame_shapes, train_pipeline};

/// One training sample: a normalized image, its ground truth and the
/// current shape estimate. `group` identifies the source image so that
/// held-out splits never separate samples of the same image.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub image: &'a GrayImage,
    pub gt: &'a Shape2D,
    pub current: Shape2D,
    pub group: usize,
}

/// Iterations, forest hyperparameters and descriptor of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub iterations: usize,
    pub forest: ForestParams,
    pub phog: PhogConfig,
}

pub(crate) fn check_samples(samples: &[Sample<'_>]) -> Result<usize> {
    let first = samples.first().ok_or_else(|| Error::invalid("no training samples"))?;
    let n = first.gt.len();
    for s in samples {
        if s.gt.len() != n || s.current.len() != n {
            return Err(Error::invalid(format!(
                "landmark count mismatch: expected {n}, found {} / {}",
                s.gt.len(),
                s.current.len()
            )));
        }
    }
    Ok(n)
}

/// Face descriptor at the centroid of the current shape.
pub(crate) fn face_feature(phog: &PhogConfig, image: &GrayImage, shape: &Shape2D) -> Result<Vec<f64>> {
    phog.describe(image, shape.centroid())
}

pub(crate) fn encode_phog(w: &mut Writer, p: &PhogConfig) {
    w.usize(p.patch_side);
    w.usizes(&p.levels);
    w.usize(p.hog.cell_size);
    match p.hog.block {
        BlockLayout::WholePatch => w.usize(0),
        BlockLayout::Cells(c) => w.usize(c),
    }
    w.usize(p.hog.orientation_bins);
    w.bool(p.hog.signed);
    w.u8(match p.hog.variant {
        HogVariant::Basic => 0,
        HogVariant::Extended => 1,
    });
}

pub(crate) fn decode_phog(r: &mut Reader<'_>) -> Result<PhogConfig> {
    let patch_side = r.usize()?;
    let levels = r.usizes()?;
    let cell_size = r.usize()?;
    let block = match r.usize()? {
        0 => BlockLayout::WholePatch,
        c => BlockLayout::Cells(c),
    };
    let orientation_bins = r.usize()?;
    let signed = r.bool()?;
    let variant = match r.u8()? {
        0 => HogVariant::Basic,
        1 => HogVariant::Extended,
        v => return Err(Error::Format(format!("unknown HOG variant {v}"))),
    };
    let cfg = PhogConfig {
        patch_side,
        levels,
        hog: HogParams {
            cell_size,
            block,
            orientation_bins,
            signed,
            variant,
        },
    };
    cfg.descriptor_len()
        .map_err(|e| Error::Format(format!("invalid descriptor config: {e}")))?;
    Ok(cfg)
}

pub(crate) fn encode_shape(w: &mut Writer, s: &Shape2D) {
    w.f64s(&s.to_flat());
}

pub(crate) fn decode_shape(r: &mut Reader<'_>) -> Result<Shape2D> {
    Shape2D::from_flat(&r.f64s()?).map_err(|e| Error::Format(e.to_string()))
}

pub(crate) fn encode_forest(w: &mut Writer, f: &KForest) {
    f.encode(w);
}

pub(crate) fn decode_forest(r: &mut Reader<'_>) -> Result<KForest> {
    KForest::decode(r)
}
