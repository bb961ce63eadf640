use nalgebra::Point2;

use super::{decode_forest, decode_phog, encode_forest, encode_phog};
use crate::codec::{Reader, Writer};
use crate::data::{PoseLabel, FRAME_SIDE};
use crate::error::{check_dim, Error, Result};
use crate::forest::{ForestParams, KForest};
use crate::imgproc::{GrayImage, PhogConfig};
use crate::par::Executor;

/// Head-pose regression: one forest from the face descriptor (taken at the
/// centre of the normalized canvas) to `(yaw, pitch)` in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseModel {
    pub phog: PhogConfig,
    pub forest: KForest,
}

fn canvas_center() -> Point2<f64> {
    let c = FRAME_SIDE as f64 / 2.0;
    Point2::new(c, c)
}

impl PoseModel {
    /// Descriptor of a normalized face image.
    pub fn feature(phog: &PhogConfig, image: &GrayImage) -> Result<Vec<f64>> {
        phog.describe(image, canvas_center())
    }

    pub fn train(
        images: &[&GrayImage],
        labels: &[PoseLabel],
        phog: &PhogConfig,
        params: &ForestParams,
        exec: Executor,
    ) -> Result<PoseModel> {
        check_dim(images.len(), labels.len())?;
        let feats = exec.try_map(images.len(), |i| Self::feature(phog, images[i]))?;
        Self::train_features(&feats, labels, phog, params, exec)
    }

    /// Trains from precomputed descriptors.
    pub fn train_features(
        feats: &[Vec<f64>],
        labels: &[PoseLabel],
        phog: &PhogConfig,
        params: &ForestParams,
        exec: Executor,
    ) -> Result<PoseModel> {
        check_dim(feats.len(), labels.len())?;
        let y: Vec<Vec<f64>> = labels.iter().map(|l| vec![l.yaw, l.pitch]).collect();
        Ok(PoseModel {
            phog: phog.clone(),
            forest: KForest::train_with(exec, feats, &y, params)?,
        })
    }

    pub fn predict_feature(&self, feature: &[f64]) -> Result<PoseLabel> {
        let p = self.forest.predict(feature)?;
        Ok(PoseLabel { yaw: p[0], pitch: p[1] })
    }

    pub fn predict(&self, image: &GrayImage) -> Result<PoseLabel> {
        self.predict_feature(&Self::feature(&self.phog, image)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(b"POS");
        encode_phog(&mut w, &self.phog);
        encode_forest(&mut w, &self.forest);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PoseModel> {
        let mut r = Reader::with_header(bytes, b"POS")?;
        let phog = decode_phog(&mut r)?;
        let forest = decode_forest(&mut r)?;
        r.finish()?;
        if forest.input_dim() != phog.descriptor_len()? || forest.target_dim() != 2 {
            return Err(Error::Format("pose forest dimensions do not match".into()));
        }
        Ok(PoseModel { phog, forest })
    }
}
