//! Landmark and head-pose error metrics.

use crate::error::{check_dim, Error, Result};
use crate::geom::Shape2D;

/// Error normalization for the 68-point scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Distance between the centroids of the two eye contours (36-41, 42-47).
    InterPupil,
    /// Distance between the outer eye corners (36 and 45).
    InterOcular,
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::InterPupil => "inter-pupil",
            NormMode::InterOcular => "inter-ocular",
        }
    }
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inter-pupil" => Ok(NormMode::InterPupil),
            "inter-ocular" => Ok(NormMode::InterOcular),
            _ => Err(Error::invalid(format!("unknown normalization `{s}`"))),
        }
    }
}

fn centroid(shape: &Shape2D, range: std::ops::Range<usize>) -> nalgebra::Point2<f64> {
    let n = range.len() as f64;
    let sum = range.fold(nalgebra::Vector2::zeros(), |a, i| a + shape.points()[i].coords);
    nalgebra::Point2::from(sum / n)
}

/// Normalizing distance of a 68-point ground-truth shape.
pub fn normalizing_distance(gt: &Shape2D, mode: NormMode) -> Result<f64> {
    check_dim(68, gt.len())?;
    let d = match mode {
        NormMode::InterPupil => (centroid(gt, 36..42) - centroid(gt, 42..48)).norm(),
        NormMode::InterOcular => (gt.points()[36] - gt.points()[45]).norm(),
    };
    if !(d > 0.0) {
        return Err(Error::Degenerate("coincident eye positions".into()));
    }
    Ok(d)
}

/// Mean point-to-point error as a percentage of the normalizing distance.
pub fn normalized_error(pred: &Shape2D, gt: &Shape2D, mode: NormMode) -> Result<f64> {
    check_dim(gt.len(), pred.len())?;
    let d = normalizing_distance(gt, mode)?;
    Ok(100.0 * pred.mean_distance(gt)? / d)
}

/// Per-angle mean absolute errors in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMae {
    pub yaw: f64,
    pub pitch: f64,
    /// Mean of the yaw and pitch errors.
    pub average: f64,
}

/// `preds` and `labels` are `(yaw, pitch)` pairs in degrees.
pub fn pose_mae(preds: &[(f64, f64)], labels: &[(f64, f64)]) -> Result<PoseMae> {
    check_dim(labels.len(), preds.len())?;
    if preds.is_empty() {
        return Err(Error::invalid("no pose predictions"));
    }
    let n = preds.len() as f64;
    let yaw = preds.iter().zip(labels).map(|(p, l)| (p.0 - l.0).abs()).sum::<f64>() / n;
    let pitch = preds.iter().zip(labels).map(|(p, l)| (p.1 - l.1).abs()).sum::<f64>() / n;
    Ok(PoseMae {
        yaw,
        pitch,
        average: (yaw + pitch) / 2.0,
    })
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    /// Subset the image belongs to (e.g. `common`, `challenging`).
    pub subset: String,
    pub error: f64,
}

/// Per-image errors with subset means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: NormMode,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// `(subset, count, mean error)` in order of first appearance.
    pub fn subset_means(&self) -> Vec<(String, usize, f64)> {
        let mut out: Vec<(String, usize, f64)> = Vec::new();
        for r in &self.rows {
            match out.iter_mut().find(|(s, _, _)| *s == r.subset) {
                Some(entry) => {
                    entry.1 += 1;
                    entry.2 += r.error;
                }
                None => out.push((r.subset.clone(), 1, r.error)),
            }
        }
        for e in &mut out {
            e.2 /= e.1 as f64;
        }
        out
    }

    /// Mean over all rows, computed as the count-weighted mean of the
    /// subset means.
    pub fn full_mean(&self) -> Option<f64> {
        let subsets = self.subset_means();
        let n: usize = subsets.iter().map(|s| s.1).sum();
        (n > 0).then(|| subsets.iter().map(|s| s.1 as f64 * s.2).sum::<f64>() / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point2;

    fn face() -> Shape2D {
        let pts = (0..68)
            .map(|i| {
                let x = if (36..42).contains(&i) {
                    -10.0
                } else if (42..48).contains(&i) {
                    10.0
                } else {
                    i as f64
                };
                Point2::new(x, (i % 7) as f64)
            })
            .collect();
        Shape2D::new(pts).unwrap()
    }

    #[test]
    fn zero_and_constant_offset() {
        let gt = face();
        assert_eq!(normalized_error(&gt, &gt, NormMode::InterPupil).unwrap(), 0.0);
        let d = normalizing_distance(&gt, NormMode::InterPupil).unwrap();
        let shifted = gt.map(|p| Point2::new(p.x + 3.0, p.y + 4.0));
        let e = normalized_error(&shifted, &gt, NormMode::InterPupil).unwrap();
        assert!((e - 100.0 * 5.0 / d).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let gt = face();
        let pred = gt.map(|p| Point2::new(p.x + 1.0, p.y - 2.0));
        let s = |sh: &Shape2D| sh.map(|p| Point2::new(p.x * 3.5, p.y * 3.5));
        for mode in [NormMode::InterPupil, NormMode::InterOcular] {
            let a = normalized_error(&pred, &gt, mode).unwrap();
            let b = normalized_error(&s(&pred), &s(&gt), mode).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_pupils() {
        let gt = Shape2D::new(vec![Point2::new(1.0, 1.0); 68]).unwrap();
        assert!(matches!(
            normalized_error(&gt, &gt, NormMode::InterPupil),
            Err(Error::Degenerate(_))
        ));
        assert!(normalized_error(
            &face(),
            &Shape2D::new(vec![Point2::origin(); 5]).unwrap(),
            NormMode::InterOcular
        )
        .is_err());
    }

    #[test]
    fn pose_errors() {
        let labels = [(10.0, -5.0), (0.0, 0.0)];
        let m = pose_mae(&labels, &labels).unwrap();
        assert_eq!((m.yaw, m.pitch, m.average), (0.0, 0.0, 0.0));
        let off: Vec<(f64, f64)> = labels.iter().map(|l| (l.0 + 5.0, l.1)).collect();
        let m = pose_mae(&off, &labels).unwrap();
        assert_eq!((m.yaw, m.pitch, m.average), (5.0, 0.0, 2.5));
        assert!(pose_mae(&[], &[]).is_err());
    }

    #[test]
    fn full_mean_is_weighted_subset_mean() {
        let rows = (0..689)
            .map(|i| EvalRow {
                name: format!("{i}"),
                subset: if i < 554 { "common" } else { "challenging" }.into(),
                error: (i % 13) as f64 * 0.7,
            })
            .collect();
        let r = EvalReport {
            mode: NormMode::InterPupil,
            rows,
        };
        let s = r.subset_means();
        let expect = (554.0 * s[0].2 + 135.0 * s[1].2) / 689.0;
        let direct = r.rows.iter().map(|r| r.error).sum::<f64>() / 689.0;
        assert!((r.full_mean().unwrap() - expect).abs() < 1e-9);
        assert!((direct - expect).abs() < 1e-9);
    }
}
