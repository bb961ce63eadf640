use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{apply_affine, similarity_align, AffineParams, Shape2D};
use crate::par::derive_seed;

/// Face size in the normalized frame, the unit of translation jitter.
const FRAME_FACE_SIZE: f64 = 64.0;

/// Random similarity perturbations used to build training initializations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    /// Initial shapes generated per training image.
    pub count: usize,
    /// Scale factor drawn uniformly from `1 +- scale`.
    pub scale: f64,
    /// Per-axis translation drawn uniformly from `+- translation * 64` px.
    pub translation: f64,
    /// In-plane rotation drawn uniformly from `+- rotation_deg`.
    pub rotation_deg: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            count: 10,
            scale: 0.1,
            translation: 0.05,
            rotation_deg: 15.0,
        }
    }
}

fn sym<R: Rng>(rng: &mut R, r: f64) -> f64 {
    if r > 0.0 {
        rng.gen_range(-r..=r)
    } else {
        0.0
    }
}

/// `cfg.count` initial shapes for one image: `reference` similarity-aligned
/// to `gt`, then scaled, rotated about its centroid and translated at
/// random. The draws depend only on `(seed, image)`.
pub fn perturbed_inits(
    reference: &Shape2D,
    gt: &Shape2D,
    cfg: &PerturbConfig,
    seed: u64,
    image: usize,
) -> Result<Vec<Shape2D>> {
    if cfg.count == 0 {
        return Err(Error::invalid("perturbation count must be at least 1"));
    }
    let base = apply_affine(reference, &similarity_align(reference, gt)?)?;
    let c = base.centroid();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, image as u64));
    (0..cfg.count)
        .map(|_| {
            let s = 1.0 + sym(&mut rng, cfg.scale);
            let theta = sym(&mut rng, cfg.rotation_deg).to_radians();
            let tx = sym(&mut rng, cfg.translation) * FRAME_FACE_SIZE;
            let ty = sym(&mut rng, cfg.translation) * FRAME_FACE_SIZE;
            let about = AffineParams::similarity(s, theta, 0.0, 0.0);
            let off = c.coords - about.linear() * c.coords;
            let p = AffineParams::similarity(s, theta, off.x + tx, off.y + ty);
            apply_affine(&base, &p)
        })
        .collect()
}

/// Initial shapes for image `image` drawn from the ground truths of other
/// images (without repetition while enough images exist).
pub fn other_shape_inits(gts: &[Shape2D], image: usize, count: usize, seed: u64) -> Result<Vec<Shape2D>> {
    if gts.len() < 2 {
        return Err(Error::invalid("need at least two training shapes"));
    }
    if count == 0 {
        return Err(Error::invalid("initialization count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, image as u64));
    let others = gts.len() - 1;
    let pick = |j: usize| if j >= image { j + 1 } else { j };
    if count <= others {
        Ok(sample_indices(&mut rng, others, count)
            .into_iter()
            .map(|j| gts[pick(j)].clone())
            .collect())
    } else {
        Ok((0..count)
            .map(|_| gts[pick(rng.gen_range(0..others))].clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_reproduce_aligned_reference() {
        let r = Shape2D::from_xy(&[(0.0, 0.0), (2.0, 0.0), (1.0, 2.0)]).unwrap();
        let gt = Shape2D::from_xy(&[(10.0, 10.0), (14.0, 10.0), (12.0, 14.0)]).unwrap();
        let cfg = PerturbConfig {
            count: 3,
            scale: 0.0,
            translation: 0.0,
            rotation_deg: 0.0,
        };
        for s in perturbed_inits(&r, &gt, &cfg, 1, 0).unwrap() {
            assert!(s.mean_distance(&gt).unwrap() < 1e-9);
        }
    }

    #[test]
    fn perturbations_stay_in_range() {
        let gt = Shape2D::from_xy(&[(50.0, 50.0), (80.0, 50.0), (65.0, 80.0), (60.0, 60.0)]).unwrap();
        let cfg = PerturbConfig::default();
        let inits = perturbed_inits(&gt, &gt, &cfg, 3, 7).unwrap();
        assert_eq!(inits.len(), 10);
        for s in &inits {
            let shift = (s.centroid() - gt.centroid()).abs();
            assert!(shift.x <= 3.2 + 1e-9 && shift.y <= 3.2 + 1e-9);
            let ratio = s.rms_extent() / gt.rms_extent();
            assert!((0.9 - 1e-9..=1.1 + 1e-9).contains(&ratio));
        }
        assert_eq!(inits, perturbed_inits(&gt, &gt, &cfg, 3, 7).unwrap());
    }

    #[test]
    fn other_inits_exclude_own_shape() {
        let gts: Vec<Shape2D> = (0..5)
            .map(|i| Shape2D::from_xy(&[(i as f64, 0.0), (0.0, 1.0), (1.0, 1.0)]).unwrap())
            .collect();
        for img in 0..5 {
            let inits = other_shape_inits(&gts, img, 4, 9).unwrap();
            assert_eq!(inits.len(), 4);
            assert!(inits.iter().all(|s| *s != gts[img]));
        }
        assert_eq!(other_shape_inits(&gts, 0, 9, 1).unwrap().len(), 9);
    }
}
