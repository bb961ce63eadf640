use super::{other_shape_inits, perturbed_inits, Apr3dModel, AprModel, LbfModel, Pipeline, Sample, Stages};
use crate::config::Config;
use crate::data::NormalizedFace;
use crate::error::{Error, Result};
use crate::geom::{MeanShape3D, Shape2D};
use crate::par::{derive_seed, Executor};

/// Ground-truth shapes of normalized training faces.
pub fn frame_shapes(faces: &[NormalizedFace]) -> Result<Vec<Shape2D>> {
    faces
        .iter()
        .map(|f| {
            f.shape
                .clone()
                .ok_or_else(|| Error::invalid("training face without landmark annotation"))
        })
        .collect()
}

/// Trains the enabled stages on normalized faces.
///
/// The reference shape is the mean ground truth in the normalized frame.
/// APR and 3D-APR are trained on `perturb.count` perturbed copies of the
/// reference aligned to each ground truth; 3D-APR sees the APR outputs
/// when both are enabled. LBF starts from `lbf.inits` ground truths of
/// other training images.
pub fn train_pipeline(
    faces: &[NormalizedFace],
    cfg: &Config,
    mean3d: &MeanShape3D,
    stages: Stages,
    exec: Executor,
) -> Result<Pipeline> {
    extend_pipeline(None, faces, cfg, mean3d, stages, exec)
}

/// Like [`train_pipeline`], but adds the stages to `base`, keeping its
/// reference shape and the stages that are not retrained. When 3D-APR is
/// trained without APR and `base` holds an APR model, 3D-APR is trained
/// on that model's outputs.
pub fn extend_pipeline(
    base: Option<Pipeline>,
    faces: &[NormalizedFace],
    cfg: &Config,
    mean3d: &MeanShape3D,
    stages: Stages,
    exec: Executor,
) -> Result<Pipeline> {
    let gts = frame_shapes(faces)?;
    let mut pipeline = match base {
        Some(p) => {
            if gts.iter().any(|g| g.len() != p.reference.len()) {
                return Err(Error::invalid(format!(
                    "training shapes do not have the {} landmarks of the existing bundle",
                    p.reference.len()
                )));
            }
            p
        }
        None => Pipeline {
            reference: Shape2D::mean_of(&gts)?,
            apr: None,
            apr3d: None,
            lbf: None,
        },
    };
    let reference = pipeline.reference.clone();
    if stages.apr || stages.apr3d {
        let inits = exec.try_map(faces.len(), |i| {
            perturbed_inits(&reference, &gts[i], &cfg.perturb, derive_seed(cfg.seed, 10), i)
        })?;
        let mut samples = samples_from(faces, &gts, inits);
        if stages.apr {
            log::info!("training APR on {} samples", samples.len());
            pipeline.apr = Some(AprModel::train(&mut samples, &cfg.apr_stage(), exec)?);
        } else if let (true, Some(apr)) = (stages.apr3d, &pipeline.apr) {
            let moved = exec.try_map(samples.len(), |i| apr.apply(samples[i].image, &samples[i].current))?;
            for (s, m) in samples.iter_mut().zip(moved) {
                s.current = m;
            }
        }
        if stages.apr3d {
            log::info!("training 3D-APR on {} samples", samples.len());
            pipeline.apr3d = Some(Apr3dModel::train(&mut samples, mean3d, &cfg.apr3d_stage(), exec)?);
        }
    }
    if stages.lbf {
        let inits = exec.try_map(faces.len(), |i| {
            other_shape_inits(&gts, i, cfg.lbf_inits, derive_seed(cfg.seed, 11))
        })?;
        let mut samples = samples_from(faces, &gts, inits);
        log::info!("training LBF on {} samples", samples.len());
        pipeline.lbf = Some(LbfModel::train(&mut samples, &reference, &cfg.lbf_config(), exec)?);
    }
    Ok(pipeline)
}

fn samples_from<'a>(faces: &'a [NormalizedFace], gts: &'a [Shape2D], inits: Vec<Vec<Shape2D>>) -> Vec<Sample<'a>> {
    inits
        .into_iter()
        .enumerate()
        .flat_map(|(i, shapes)| {
            shapes.into_iter().map(move |current| Sample {
                image: &faces[i].image,
                gt: &gts[i],
                current,
                group: i,
            })
        })
        .collect()
}
