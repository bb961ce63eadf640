use super::{check_samples, decode_forest, decode_phog, encode_forest, encode_phog, face_feature, Sample, StageConfig};
use crate::codec::{Reader, Writer};
use crate::error::{check_dim, Error, Result};
use crate::forest::{ForestParams, KForest};
use crate::geom::{fit_pose_default, project, wrap_angle, MeanShape3D, OrthoPose, Shape2D};
use crate::imgproc::{GrayImage, PhogConfig};
use crate::par::{derive_seed, Executor};

/// 3-D affine pose regression: the current shape is explained by a scaled
/// orthographic projection of the mean 3-D shape, and forests regress the
/// update of that pose towards the pose of the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Apr3dModel {
    pub phog: PhogConfig,
    pub mean3d: MeanShape3D,
    /// Scale update (1-D).
    pub k: KForest,
    /// Rotation update `(yaw, pitch, roll)`.
    pub rotation: KForest,
    /// Translation update `(tx, ty)`.
    pub t: KForest,
}

/// `target - current`, with angle differences wrapped into `(-pi, pi]`.
pub(crate) fn pose_delta(current: &OrthoPose, target: &OrthoPose) -> [f64; 6] {
    [
        target.k - current.k,
        wrap_angle(target.yaw - current.yaw),
        wrap_angle(target.pitch - current.pitch),
        wrap_angle(target.roll - current.roll),
        target.tx - current.tx,
        target.ty - current.ty,
    ]
}

pub(crate) fn add_delta(pose: &OrthoPose, d: &[f64; 6]) -> OrthoPose {
    let k = if pose.k + d[0] > 0.0 { pose.k + d[0] } else { pose.k };
    OrthoPose::new(
        k,
        pose.yaw + d[1],
        pose.pitch + d[2],
        pose.roll + d[3],
        pose.tx + d[4],
        pose.ty + d[5],
    )
    .normalized()
}

impl Apr3dModel {
    /// Trains the single 3D-APR iteration. Samples whose current or ground
    /// truth shape cannot be fitted are skipped with a warning. On return
    /// the `current` shape of every used sample holds the model output.
    pub fn train(
        samples: &mut [Sample<'_>],
        mean3d: &MeanShape3D,
        cfg: &StageConfig,
        exec: Executor,
    ) -> Result<Apr3dModel> {
        let n = check_samples(samples)?;
        check_dim(mean3d.len(), n)?;
        let fits = exec.try_map(samples.len(), |i| {
            let cur = fit_pose_default(mean3d, &samples[i].current)?;
            let gt = fit_pose_default(mean3d, samples[i].gt)?;
            Ok::<_, Error>((!cur.degenerate && !gt.degenerate).then(|| (cur.pose, pose_delta(&cur.pose, &gt.pose))))
        })?;
        let used: Vec<usize> = (0..samples.len()).filter(|&i| fits[i].is_some()).collect();
        if used.len() < samples.len() {
            log::warn!(
                "3D-APR: skipped {} of {} samples with degenerate pose fits",
                samples.len() - used.len(),
                samples.len()
            );
        }
        if used.is_empty() {
            return Err(Error::Degenerate("no sample admits a pose fit".into()));
        }
        let feats = exec.try_map(used.len(), |j| {
            let s = &samples[used[j]];
            face_feature(&cfg.phog, s.image, &s.current)
        })?;
        let deltas: Vec<[f64; 6]> = used.iter().map(|&i| fits[i].expect("used").1).collect();
        let seed = derive_seed(cfg.forest.seed, 0);
        let params = |j: u64| ForestParams {
            seed: derive_seed(seed, j),
            ..cfg.forest
        };
        let yk: Vec<Vec<f64>> = deltas.iter().map(|d| vec![d[0]]).collect();
        let yr: Vec<Vec<f64>> = deltas.iter().map(|d| d[1..4].to_vec()).collect();
        let yt: Vec<Vec<f64>> = deltas.iter().map(|d| d[4..6].to_vec()).collect();
        let model = Apr3dModel {
            phog: cfg.phog.clone(),
            mean3d: mean3d.clone(),
            k: KForest::train_with(exec, &feats, &yk, &params(0))?,
            rotation: KForest::train_with(exec, &feats, &yr, &params(1))?,
            t: KForest::train_with(exec, &feats, &yt, &params(2))?,
        };
        let outputs = exec.try_map(used.len(), |j| {
            let i = used[j];
            let pose = fits[i].expect("used").0;
            Ok::<_, Error>(project(mean3d, &add_delta(&pose, &model.predict(&feats[j])?)))
        })?;
        for (j, out) in outputs.into_iter().enumerate() {
            samples[used[j]].current = out;
        }
        Ok(model)
    }

    /// Predicted pose update `(dk, dyaw, dpitch, droll, dtx, dty)`.
    pub fn predict(&self, feature: &[f64]) -> Result<[f64; 6]> {
        let k = self.k.predict(feature)?;
        let r = self.rotation.predict(feature)?;
        let t = self.t.predict(feature)?;
        Ok([k[0], r[0], r[1], r[2], t[0], t[1]])
    }

    /// Fits the pose of `shape`, adds the predicted update and returns the
    /// projection of the mean shape. A degenerate fit leaves the shape
    /// unchanged.
    pub fn apply(&self, image: &GrayImage, shape: &Shape2D) -> Result<Shape2D> {
        check_dim(self.mean3d.len(), shape.len())?;
        let fit = fit_pose_default(&self.mean3d, shape)?;
        if fit.degenerate {
            log::warn!("3D-APR: degenerate pose fit, shape left unchanged");
            return Ok(shape.clone());
        }
        let d = self.predict(&face_feature(&self.phog, image, shape)?)?;
        Ok(project(&self.mean3d, &add_delta(&fit.pose, &d)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(b"A3D");
        encode_phog(&mut w, &self.phog);
        let flat: Vec<f64> = self.mean3d.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        w.f64s(&flat);
        for f in [&self.k, &self.rotation, &self.t] {
            encode_forest(&mut w, f);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Apr3dModel> {
        let mut r = Reader::with_header(bytes, b"A3D")?;
        let phog = decode_phog(&mut r)?;
        let flat = r.f64s()?;
        if flat.len() % 3 != 0 {
            return Err(Error::Format("3-D shape length is not a multiple of 3".into()));
        }
        let mean3d = MeanShape3D::from_flat(&flat).map_err(|e| Error::Format(e.to_string()))?;
        let k = decode_forest(&mut r)?;
        let rotation = decode_forest(&mut r)?;
        let t = decode_forest(&mut r)?;
        r.finish()?;
        let dim = phog.descriptor_len()?;
        for (f, want) in [(&k, 1), (&rotation, 3), (&t, 2)] {
            if f.input_dim() != dim || f.target_dim() != want {
                return Err(Error::Format("3D-APR forest dimensions do not match".into()));
            }
        }
        Ok(Apr3dModel {
            phog,
            mean3d,
            k,
            rotation,
            t,
        })
    }
}
