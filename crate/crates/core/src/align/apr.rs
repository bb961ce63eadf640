use super::{check_samples, decode_forest, decode_phog, encode_forest, encode_phog, face_feature, Sample, StageConfig};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::forest::{ForestParams, KForest};
use crate::geom::{apply_affine, similarity_align, AffineParams, Shape2D};
use crate::imgproc::{GrayImage, PhogConfig};
use crate::par::{derive_seed, Executor};

/// Forests of one APR iteration. Parameters are expressed relative to the
/// centroid `c` of the shape they are applied to:
/// `S' = [a b; c d] (S - c) + c + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AprIteration {
    pub a: KForest,
    pub b: KForest,
    pub c: KForest,
    pub d: KForest,
    /// Joint forest for `(tx, ty)`.
    pub t: KForest,
}

impl AprIteration {
    fn forests(&self) -> [&KForest; 5] {
        [&self.a, &self.b, &self.c, &self.d, &self.t]
    }

    /// Predicted centroid-relative parameters `(a, b, c, d, tx, ty)`.
    pub fn predict(&self, feature: &[f64]) -> Result<[f64; 6]> {
        let t = self.t.predict(feature)?;
        Ok([
            self.a.predict(feature)?[0],
            self.b.predict(feature)?[0],
            self.c.predict(feature)?[0],
            self.d.predict(feature)?[0],
            t[0],
            t[1],
        ])
    }
}

/// Converts centroid-relative parameters into the plain affine transform
/// of the shape.
pub(crate) fn centered_to_affine(p: &[f64; 6], shape: &Shape2D) -> AffineParams {
    let c = shape.centroid();
    let lin = AffineParams::new(p[0], p[1], p[2], p[3], 0.0, 0.0);
    let off = c.coords - lin.linear() * c.coords;
    AffineParams::new(p[0], p[1], p[2], p[3], off.x + p[4], off.y + p[5])
}

/// Centroid-relative similarity taking `current` onto `gt`.
fn target_params(current: &Shape2D, gt: &Shape2D) -> Result<[f64; 6]> {
    let c = current.centroid().coords;
    let p = similarity_align(&current.translated(-c), &gt.translated(-c))?;
    Ok(p.to_array())
}

/// Affine pose regression: each iteration regresses the transform taking
/// the current shape onto the ground truth from one face descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct AprModel {
    pub phog: PhogConfig,
    pub iterations: Vec<AprIteration>,
}

impl AprModel {
    /// Trains `cfg.iterations` cascaded iterations. Each iteration is
    /// trained on the shapes produced by the previous one; on return
    /// `samples[i].current` holds the output of the final iteration.
    pub fn train(samples: &mut [Sample<'_>], cfg: &StageConfig, exec: Executor) -> Result<AprModel> {
        check_samples(samples)?;
        if cfg.iterations == 0 {
            return Err(Error::invalid("APR needs at least one iteration"));
        }
        let mut iterations = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            let feats = exec.try_map(samples.len(), |i| {
                face_feature(&cfg.phog, samples[i].image, &samples[i].current)
            })?;
            let targets = exec.try_map(samples.len(), |i| target_params(&samples[i].current, samples[i].gt))?;
            let column = |j: usize| targets.iter().map(|t| vec![t[j]]).collect::<Vec<_>>();
            let tt: Vec<Vec<f64>> = targets.iter().map(|t| vec![t[4], t[5]]).collect();
            let seed = derive_seed(cfg.forest.seed, it as u64);
            let params = |j: u64| ForestParams {
                seed: derive_seed(seed, j),
                ..cfg.forest
            };
            let iteration = AprIteration {
                a: KForest::train_with(exec, &feats, &column(0), &params(0))?,
                b: KForest::train_with(exec, &feats, &column(1), &params(1))?,
                c: KForest::train_with(exec, &feats, &column(2), &params(2))?,
                d: KForest::train_with(exec, &feats, &column(3), &params(3))?,
                t: KForest::train_with(exec, &feats, &tt, &params(4))?,
            };
            let updated = exec.try_map(samples.len(), |i| {
                let p = iteration.predict(&feats[i])?;
                apply_affine(&samples[i].current, &centered_to_affine(&p, &samples[i].current))
            })?;
            for (s, u) in samples.iter_mut().zip(updated) {
                s.current = u;
            }
            iterations.push(iteration);
        }
        Ok(AprModel {
            phog: cfg.phog.clone(),
            iterations,
        })
    }

    /// Runs every iteration: predict the transform, then apply it.
    pub fn apply(&self, image: &GrayImage, shape: &Shape2D) -> Result<Shape2D> {
        let mut s = shape.clone();
        for it in &self.iterations {
            s = self.step(it, image, &s)?;
        }
        Ok(s)
    }

    /// One iteration of [`AprModel::apply`].
    pub fn step(&self, it: &AprIteration, image: &GrayImage, shape: &Shape2D) -> Result<Shape2D> {
        let p = it.predict(&face_feature(&self.phog, image, shape)?)?;
        apply_affine(shape, &centered_to_affine(&p, shape))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(b"APR");
        encode_phog(&mut w, &self.phog);
        w.usize(self.iterations.len());
        for it in &self.iterations {
            for f in it.forests() {
                encode_forest(&mut w, f);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AprModel> {
        let mut r = Reader::with_header(bytes, b"APR")?;
        let phog = decode_phog(&mut r)?;
        let n = r.len(1)?;
        let dim = phog.descriptor_len()?;
        let mut iterations = Vec::with_capacity(n);
        for _ in 0..n {
            let mut f = (0..5).map(|_| decode_forest(&mut r)).collect::<Result<Vec<_>>>()?;
            for (j, forest) in f.iter().enumerate() {
                let want = if j == 4 { 2 } else { 1 };
                if forest.input_dim() != dim || forest.target_dim() != want {
                    return Err(Error::Format("APR forest dimensions do not match".into()));
                }
            }
            let t = f.pop().expect("five forests");
            let d = f.pop().expect("five forests");
            let c = f.pop().expect("five forests");
            let b = f.pop().expect("five forests");
            let a = f.pop().expect("five forests");
            iterations.push(AprIteration { a, b, c, d, t });
        }
        r.finish()?;
        Ok(AprModel { phog, iterations })
    }
}
