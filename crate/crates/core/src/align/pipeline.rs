use super::{Apr3dModel, AprModel, LbfModel};
use crate::data::{BBox, FaceFrame};
use crate::error::{Error, Result};
use crate::geom::Shape2D;
use crate::imgproc::GrayImage;

/// Which stages of a [`Pipeline`] to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub apr: bool,
    pub apr3d: bool,
    pub lbf: bool,
}

impl Stages {
    pub const NONE: Stages = Stages {
        apr: false,
        apr3d: false,
        lbf: false,
    };
    pub const ALL: Stages = Stages {
        apr: true,
        apr3d: true,
        lbf: true,
    };
}

/// Reference shape placed in the detector box, followed by APR, 3D-APR
/// and the LBF cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    /// Initial shape in the normalized frame.
    pub reference: Shape2D,
    pub apr: Option<AprModel>,
    pub apr3d: Option<Apr3dModel>,
    pub lbf: Option<LbfModel>,
}

fn missing(stage: &str) -> Error {
    Error::invalid(format!("the {stage} stage is enabled but no model was trained for it"))
}

impl Pipeline {
    /// Shapes in the normalized frame after every executed step, labelled
    /// `init`, `apr`, `3dapr`, `lbf1`, `lbf2`, ...
    pub fn trace(&self, image: &GrayImage, stages: Stages) -> Result<Vec<(String, Shape2D)>> {
        let mut s = self.reference.clone();
        let mut out = vec![("init".to_string(), s.clone())];
        if stages.apr {
            let m = self.apr.as_ref().ok_or_else(|| missing("APR"))?;
            s = m.apply(image, &s)?;
            out.push(("apr".into(), s.clone()));
        }
        if stages.apr3d {
            let m = self.apr3d.as_ref().ok_or_else(|| missing("3D-APR"))?;
            s = m.apply(image, &s)?;
            out.push(("3dapr".into(), s.clone()));
        }
        if stages.lbf {
            let m = self.lbf.as_ref().ok_or_else(|| missing("LBF"))?;
            for (i, shape) in m.apply_trace(image, &s)?.into_iter().enumerate() {
                out.push((format!("lbf{}", i + 1), shape));
            }
        }
        Ok(out)
    }

    /// Final shape in the normalized frame.
    pub fn run_normalized(&self, image: &GrayImage, stages: Stages) -> Result<Shape2D> {
        Ok(self.trace(image, stages)?.pop().expect("trace starts with init").1)
    }

    /// Aligns a face in original image coordinates.
    pub fn align(&self, image: &GrayImage, bbox: &BBox, stages: Stages) -> Result<Shape2D> {
        let frame = FaceFrame::from_bbox(bbox);
        let canvas = frame.warp_image(image)?;
        frame.shape_from_frame(&self.run_normalized(&canvas, stages)?)
    }
}
