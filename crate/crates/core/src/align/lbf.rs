use nalgebra::{Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ridge::{ridge_fit, Ridge};
use super::{
    check_samples, decode_forest, decode_phog, decode_shape, encode_forest, encode_phog, encode_shape, Sample,
    StageConfig,
};
use crate::codec::{Reader, Writer};
use crate::error::{check_dim, Error, Result};
use crate::forest::{ForestParams, KForest};
use crate::geom::{similarity_align, Shape2D};
use crate::imgproc::{GrayImage, PhogConfig};
use crate::par::{derive_seed, Executor};

/// LBF cascade settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfConfig {
    pub stage: StageConfig,
    /// Candidate ridge penalties; the one with the lowest held-out error wins.
    pub lambdas: Vec<f64>,
    /// Fraction of source images held out for choosing the penalty.
    pub holdout: f64,
}

/// Per-landmark forests and the global regression of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfIteration {
    pub forests: Vec<KForest>,
    /// Maps the concatenated leaf codes to the shape update in the
    /// reference frame (`x0, y0, x1, y1, ...`).
    pub ridge: Ridge,
}

impl LbfIteration {
    fn code_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.forests.len());
        let mut acc = 0;
        for f in &self.forests {
            off.push(acc);
            acc += f.code_len();
        }
        off
    }
}

/// Cascaded shape regression on local binary features.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfModel {
    pub phog: PhogConfig,
    /// Reference (mean) shape defining the frame of the regression targets.
    pub reference: Shape2D,
    pub iterations: Vec<LbfIteration>,
}

/// Linear part of the similarity taking `shape` onto `reference`.
fn to_reference(shape: &Shape2D, reference: &Shape2D) -> Result<Matrix2<f64>> {
    Ok(similarity_align(shape, reference)?.linear())
}

fn landmark_feature(phog: &PhogConfig, image: &GrayImage, shape: &Shape2D, l: usize) -> Result<Vec<f64>> {
    phog.describe(image, shape.points()[l])
}

/// Applies an update given in the reference frame.
fn apply_update(shape: &Shape2D, m: &Matrix2<f64>, delta: &[f64]) -> Result<Shape2D> {
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("shape normalization is singular".into()))?;
    let mut out = shape.clone();
    for (p, d) in out.points_mut().iter_mut().zip(delta.chunks_exact(2)) {
        *p += inv * Vector2::new(d[0], d[1]);
    }
    Ok(out)
}

/// Groups of held-out samples: a seeded `holdout` fraction of the distinct
/// source images (at least one, and never all of them).
fn holdout_mask(samples: &[Sample<'_>], holdout: f64, seed: u64) -> Option<Vec<bool>> {
    let mut groups: Vec<usize> = samples.iter().map(|s| s.group).collect();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return None;
    }
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((holdout * groups.len() as f64).round() as usize).clamp(1, groups.len() - 1);
    let held = &groups[..k];
    Some(samples.iter().map(|s| held.contains(&s.group)).collect())
}

/// Picks the penalty with the lowest held-out error, or `None` when no
/// candidate beats predicting a zero update. Penalties are per sample: the
/// ridge solve uses `lambda * n`.
fn choose_lambda(
    codes: &[Vec<usize>],
    dim: usize,
    targets: &[Vec<f64>],
    mask: Option<&[bool]>,
    lambdas: &[f64],
) -> Result<Option<f64>> {
    let Some(mask) = mask else {
        return Ok(Some(lambdas[0]));
    };
    let pick = |held: bool| -> (Vec<Vec<usize>>, Vec<Vec<f64>>) {
        (0..codes.len())
            .filter(|&i| mask[i] == held)
            .map(|i| (codes[i].clone(), targets[i].clone()))
            .unzip()
    };
    let (train_c, train_y) = pick(false);
    let (test_c, test_y) = pick(true);
    let zero_err: f64 = test_y.iter().flatten().map(|v| v * v).sum();
    let mut best = (zero_err, None);
    for &lambda in lambdas {
        let model = ridge_fit(&train_c, dim, &train_y, lambda * train_c.len() as f64)?;
        let err: f64 = test_c
            .iter()
            .zip(&test_y)
            .map(|(c, y)| {
                model
                    .predict(c)
                    .iter()
                    .zip(y)
                    .map(|(p, t)| (p - t).powi(2))
                    .sum::<f64>()
            })
            .sum();
        log::debug!("LBF ridge lambda {lambda}: held-out SSE {err:.6} (zero update {zero_err:.6})");
        if err < best.0 {
            best = (err, Some(lambda));
        }
    }
    Ok(best.1)
}

/// Folds used for the out-of-fold training updates.
const UPDATE_FOLDS: usize = 5;

/// Ridge predictions for every sample from a model fitted without the
/// sample's source image (`UPDATE_FOLDS` folds over images). `None` when
/// there are too few images to form folds.
fn out_of_fold(
    codes: &[Vec<usize>],
    dim: usize,
    targets: &[Vec<f64>],
    groups: &[usize],
    lambda: f64,
    seed: u64,
) -> Result<Option<Vec<Vec<f64>>>> {
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Ok(None);
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = UPDATE_FOLDS.min(ids.len());
    let fold_of = |g: usize| ids.iter().position(|&x| x == g).expect("known group") % folds;
    let sample_fold: Vec<usize> = groups.iter().map(|&g| fold_of(g)).collect();
    let mut out = vec![Vec::new(); codes.len()];
    for f in 0..folds {
        let (train_c, train_y): (Vec<Vec<usize>>, Vec<Vec<f64>>) = (0..codes.len())
            .filter(|&i| sample_fold[i] != f)
            .map(|i| (codes[i].clone(), targets[i].clone()))
            .unzip();
        let model = ridge_fit(&train_c, dim, &train_y, lambda)?;
        for i in (0..codes.len()).filter(|&i| sample_fold[i] == f) {
            out[i] = model.predict(&codes[i]);
        }
    }
    Ok(Some(out))
}

impl LbfModel {
    /// Trains the cascade. `reference` is the mean shape in the normalized
    /// frame. The shapes passed to the next iteration are updated with
    /// out-of-fold ridge predictions, so later iterations see residuals of
    /// the size met on unseen faces rather than the near-zero in-sample
    /// residuals. On return `samples[i].current` holds those estimates.
    pub fn train(samples: &mut [Sample<'_>], reference: &Shape2D, cfg: &LbfConfig, exec: Executor) -> Result<LbfModel> {
        let n_landmarks = check_samples(samples)?;
        check_dim(n_landmarks, reference.len())?;
        if cfg.stage.iterations == 0 {
            return Err(Error::invalid("LBF needs at least one iteration"));
        }
        if cfg.lambdas.is_empty() || cfg.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::invalid("LBF needs positive ridge penalties"));
        }
        let phog = &cfg.stage.phog;
        let mut iterations = Vec::with_capacity(cfg.stage.iterations);
        for it in 0..cfg.stage.iterations {
            let seed = derive_seed(cfg.stage.forest.seed, it as u64);
            let norms = exec.try_map(samples.len(), |i| to_reference(&samples[i].current, reference))?;
            let mask = holdout_mask(samples, cfg.holdout, derive_seed(seed, u64::MAX));
            let fit: Vec<usize> = (0..samples.len())
                .filter(|&i| mask.as_ref().is_none_or(|m| !m[i]))
                .collect();
            let per_landmark = exec.try_map(n_landmarks, |l| {
                let feats = (0..samples.len())
                    .map(|i| landmark_feature(phog, samples[i].image, &samples[i].current, l))
                    .collect::<Result<Vec<_>>>()?;
                let targets: Vec<Vec<f64>> = samples
                    .iter()
                    .zip(&norms)
                    .map(|(s, m)| {
                        let r = m * (s.gt.points()[l] - s.current.points()[l]);
                        vec![r.x, r.y]
                    })
                    .collect();
                let params = ForestParams {
                    seed: derive_seed(seed, l as u64),
                    ..cfg.stage.forest
                };
                let fit_x: Vec<Vec<f64>> = fit.iter().map(|&i| feats[i].clone()).collect();
                let fit_y: Vec<Vec<f64>> = fit.iter().map(|&i| targets[i].clone()).collect();
                let forest = KForest::train_with(Executor::Sequential, &fit_x, &fit_y, &params)?;
                let leaves = feats
                    .iter()
                    .map(|f| forest.leaf_code(f).map(|c| c.ones))
                    .collect::<Result<Vec<_>>>()?;
                Ok::<_, Error>((forest, leaves))
            })?;
            let mut forests = Vec::with_capacity(n_landmarks);
            let mut codes: Vec<Vec<usize>> = vec![Vec::new(); samples.len()];
            let mut offset = 0;
            for (forest, leaves) in per_landmark {
                for (code, ones) in codes.iter_mut().zip(leaves) {
                    code.extend(ones.into_iter().map(|j| j + offset));
                }
                offset += forest.code_len();
                forests.push(forest);
            }
            let targets: Vec<Vec<f64>> = samples
                .iter()
                .zip(&norms)
                .map(|(s, m)| {
                    s.gt.points()
                        .iter()
                        .zip(s.current.points())
                        .flat_map(|(g, c)| {
                            let r = m * (g - c);
                            [r.x, r.y]
                        })
                        .collect()
                })
                .collect();
            let Some(lambda) = choose_lambda(&codes, offset, &targets, mask.as_deref(), &cfg.lambdas)? else {
                log::info!("LBF iteration {it}: no penalty beats a zero update on held-out images");
                iterations.push(LbfIteration {
                    forests,
                    ridge: Ridge::zero(offset, 2 * n_landmarks),
                });
                continue;
            };
            let lambda = lambda * samples.len() as f64;
            let ridge = ridge_fit(&codes, offset, &targets, lambda)?;
            let groups: Vec<usize> = samples.iter().map(|s| s.group).collect();
            let deltas = out_of_fold(
                &codes,
                offset,
                &targets,
                &groups,
                lambda,
                derive_seed(seed, u64::MAX - 1),
            )?
            .unwrap_or_else(|| codes.iter().map(|c| ridge.predict(c)).collect());
            let updated = exec.try_map(samples.len(), |i| {
                apply_update(&samples[i].current, &norms[i], &deltas[i])
            })?;
            for (s, u) in samples.iter_mut().zip(updated) {
                s.current = u;
            }
            iterations.push(LbfIteration { forests, ridge });
        }
        Ok(LbfModel {
            phog: phog.clone(),
            reference: reference.clone(),
            iterations,
        })
    }

    /// One cascade iteration.
    pub fn step(&self, it: &LbfIteration, image: &GrayImage, shape: &Shape2D) -> Result<Shape2D> {
        check_dim(self.reference.len(), shape.len())?;
        let m = to_reference(shape, &self.reference)?;
        let mut code = Vec::with_capacity(it.forests.len() * 8);
        for (l, (forest, off)) in it.forests.iter().zip(it.code_offsets()).enumerate() {
            let f = landmark_feature(&self.phog, image, shape, l)?;
            code.extend(forest.leaf_code(&f)?.ones.into_iter().map(|j| j + off));
        }
        apply_update(shape, &m, &it.ridge.predict(&code))
    }

    pub fn apply(&self, image: &GrayImage, shape: &Shape2D) -> Result<Shape2D> {
        Ok(self.apply_trace(image, shape)?.pop().unwrap_or_else(|| shape.clone()))
    }

    /// Shapes after each iteration.
    pub fn apply_trace(&self, image: &GrayImage, shape: &Shape2D) -> Result<Vec<Shape2D>> {
        let mut out = Vec::with_capacity(self.iterations.len());
        let mut s = shape.clone();
        for it in &self.iterations {
            s = self.step(it, image, &s)?;
            out.push(s.clone());
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(b"LBF");
        encode_phog(&mut w, &self.phog);
        encode_shape(&mut w, &self.reference);
        w.usize(self.iterations.len());
        for it in &self.iterations {
            w.usize(it.forests.len());
            for f in &it.forests {
                encode_forest(&mut w, f);
            }
            it.ridge.encode(&mut w);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LbfModel> {
        let mut r = Reader::with_header(bytes, b"LBF")?;
        let phog = decode_phog(&mut r)?;
        let reference = decode_shape(&mut r)?;
        let dim = phog.descriptor_len()?;
        let n = r.len(1)?;
        let mut iterations = Vec::with_capacity(n);
        for _ in 0..n {
            let count = r.len(1)?;
            let forests = (0..count).map(|_| decode_forest(&mut r)).collect::<Result<Vec<_>>>()?;
            let ridge = Ridge::decode(&mut r)?;
            let code_len: usize = forests.iter().map(KForest::code_len).sum();
            if forests.len() != reference.len()
                || forests.iter().any(|f| f.input_dim() != dim || f.target_dim() != 2)
                || ridge.dim != code_len
                || ridge.outputs != 2 * reference.len()
            {
                return Err(Error::Format("LBF iteration does not match its landmark scheme".into()));
            }
            iterations.push(LbfIteration { forests, ridge });
        }
        r.finish()?;
        Ok(LbfModel {
            phog,
            reference,
            iterations,
        })
    }
}
